"""Attention rollout over the prompt-augmented encoder, with PGM output.

Rollout multiplies identity-mixed, row-renormalized attention maps across
layers to attribute the final CLS readout to input patches. Prompt tokens
live for exactly one layer, so their columns carry attention mass within a
layer but are redistributed proportionally onto the retained tokens before
the product crosses a layer boundary; only the patch columns survive the
readout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import ContractError, DimensionError
from .vision import ROLE_CLS, ROLE_PATCH, AttentionTrace

IDENTITY_MIX = 0.5
_DEGENERATE_EPS = 1e-12


@dataclass
class Heatmap:
    """Per-frame patch attributions of the CLS readout.

    attributions sum to 1 per frame (uniform if flagged degenerate);
    values are the same maps max-normalized to [0, 1] for display.
    """

    values: np.ndarray        # (frames, grid_h, grid_w)
    attributions: np.ndarray  # (frames, grid_h, grid_w)
    degenerate: bool
    per_frame_entropy: list


def _mixed(attn: np.ndarray) -> np.ndarray:
    """Average heads, mix with identity, renormalize rows."""
    avg = attn.mean(axis=0)
    mixed = IDENTITY_MIX * avg + (1.0 - IDENTITY_MIX) * np.eye(avg.shape[0])
    return mixed / mixed.sum(axis=1, keepdims=True)


def _fold_prompt_columns(mat: np.ndarray, kept: int) -> np.ndarray:
    """Keep retained rows; push appended-column mass back onto retained
    columns in proportion to each row's retained mass."""
    kept_rows = mat[:kept, :kept]
    return kept_rows / kept_rows.sum(axis=1, keepdims=True)


def rollout(trace: AttentionTrace, config: ModelConfig) -> Heatmap:
    """Propagate attention through all layers and read the CLS row."""
    if trace.num_layers != config.vision_layers:
        raise ContractError(
            f"trace has {trace.num_layers} layers, config wants {config.vision_layers}"
        )
    roles = trace.roles
    if roles[0] != ROLE_CLS:
        raise ContractError("trace roles must start with the CLS position")
    kept = 1 + config.num_patches
    if tuple(roles[1:kept]) != (ROLE_PATCH,) * config.num_patches:
        raise ContractError("trace roles do not match the configured patch count")
    grid_h, grid_w = trace.patch_grid
    frames = trace.layers[0].shape[0]

    attributions = np.zeros((frames, grid_h, grid_w))
    entropies = []
    degenerate = False
    for t in range(frames):
        chain = np.eye(kept)
        for layer_attn in trace.layers:
            if layer_attn.shape[-1] != len(roles):
                raise DimensionError("attention map width does not match role list")
            folded = _fold_prompt_columns(_mixed(layer_attn[t]), kept)
            chain = folded @ chain
        cls_row = chain[0]
        patch_mass = cls_row[1:]
        total = patch_mass.sum()
        if total <= _DEGENERATE_EPS:
            degenerate = True
            attr = np.full(config.num_patches, 1.0 / config.num_patches)
        else:
            attr = patch_mass / total
        attributions[t] = attr.reshape(grid_h, grid_w)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(attr > 0, np.log(attr), 0.0)
        entropies.append(float(-(attr * logs).sum()))

    peaks = attributions.max(axis=(1, 2), keepdims=True)
    values = attributions / peaks
    return Heatmap(values=values, attributions=attributions, degenerate=degenerate,
                   per_frame_entropy=entropies)


def write_pgm(image: np.ndarray, path):
    """Binary PGM (P5, maxval 255) of an image with values in [0, 1]."""
    if image.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D image, got {image.shape}")
    h, w = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def emit_heatmap(heatmap: Heatmap, clip, config: ModelConfig, out_dir) -> list:
    """Write per-frame heat and raw PGM panels plus rollout.json."""
    frames = clip.frames if hasattr(clip, "frames") else np.asarray(clip)
    if frames.shape[0] != heatmap.values.shape[0]:
        raise DimensionError("clip and heatmap frame counts differ")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for t in range(heatmap.values.shape[0]):
        up = np.repeat(np.repeat(heatmap.values[t], config.patch, axis=0),
                       config.patch, axis=1)
        heat_path = out_dir / f"frame_{t:02d}_heat.pgm"
        write_pgm(up, heat_path)
        raw_path = out_dir / f"frame_{t:02d}_raw.pgm"
        write_pgm(frames[t].mean(axis=-1), raw_path)
        written.extend([heat_path, raw_path])
    report = {
        "degenerate": heatmap.degenerate,
        "per_frame_entropy": heatmap.per_frame_entropy,
    }
    report_path = out_dir / "rollout.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    written.append(report_path)
    return written
