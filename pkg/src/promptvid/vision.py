"""Vision tower: patch embedding and prompt-augmented frozen transformer.

Per layer, each frame's token sequence is extended with (a) its own summary
token, computed by a trainable attention block over all frames' CLS tokens,
(b) the shared global prompt tokens, and (c) all frames' local prompt
tokens, each conditioned on its frame's CLS token. The frozen pretrained
self-attention then runs over the extended sequence; the appended positions
are dropped again before the frozen feed-forward, so no prompt state
crosses layers. The video representation is the mean over frames of the
projected final CLS tokens.

All forward functions accept an optional leading batch axis; the public
single-clip operations are thin wrappers over the batched path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ConfigurationError, ContractError, DimensionError
from .params import ParameterStore

ROLE_CLS = "cls"
ROLE_PATCH = "patch"
ROLE_SUMMARY = "summary"
ROLE_GLOBAL = "global"
ROLE_LOCAL = "local"


@dataclass
class FrameTokens:
    """Token sequences of one clip at one layer: (frames, 1 + patches, dim)."""

    tokens: Tensor
    roles: tuple
    layer: int


@dataclass
class LayerPrompts:
    """Prompt tokens prepared for one layer from the previous layer's CLS."""

    summary: Tensor | None = None     # (..., frames, dim)
    global_tokens: Tensor | None = None  # (global_prompts, dim)
    local: Tensor | None = None       # (..., frames, dim)


@dataclass
class AttentionTrace:
    """Recorded attention of one clip for rollout.

    layers[i] has shape (frames, heads, positions, positions) over the
    augmented per-frame sequence; roles labels each position.
    """

    layers: list
    roles: tuple
    patch_grid: tuple

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def sequence_roles(config: ModelConfig) -> tuple:
    roles = (ROLE_CLS,) + (ROLE_PATCH,) * config.num_patches
    if config.enable_summary:
        count = config.frames if config.append_all_summaries else 1
        roles += (ROLE_SUMMARY,) * count
    if config.enable_global:
        roles += (ROLE_GLOBAL,) * config.global_prompts
    if config.enable_local:
        roles += (ROLE_LOCAL,) * config.frames
    return roles


def patchify(frames, patch: int) -> Tensor:
    """Cut (..., H, W, C) frames into (..., N, C*P*P) flattened patches.

    Patches are listed in raster order; within a patch, pixels keep their
    row-major (row, col, channel) order.
    """
    arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if arr.ndim < 3:
        raise DimensionError(f"patchify expects (..., H, W, C), got {arr.shape}")
    h, w, c = arr.shape[-3:]
    if h % patch or w % patch:
        raise DimensionError(f"frame {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    lead = arr.shape[:-3]
    x = arr.reshape(lead + (gh, patch, gw, patch, c))
    order = tuple(range(len(lead)))
    x = x.transpose(order + tuple(len(lead) + ax for ax in (0, 2, 1, 3, 4)))
    x = x.reshape(lead + (gh * gw, patch * patch * c))
    return Tensor(x)


def embed_frame(patches: Tensor, patch_proj: Tensor, cls_vec: Tensor,
                pos_space: Tensor, time_vec: Tensor) -> FrameTokens:
    """Embed one frame: [CLS, projected patches] + spatial + temporal offsets."""
    n, _ = patches.shape
    dim = patch_proj.shape[1]
    if pos_space.shape != (1 + n, dim):
        raise DimensionError(f"pos_space must be ({1 + n}, {dim}), got {pos_space.shape}")
    projected = ad.matmul(patches, patch_proj)
    tokens = ad.concat([ad.reshape(cls_vec, (1, dim)), projected], axis=0)
    tokens = ad.add(tokens, pos_space)
    tokens = ad.add(tokens, ad.reshape(time_vec, (1, dim)))
    roles = (ROLE_CLS,) + (ROLE_PATCH,) * n
    return FrameTokens(tokens=tokens, roles=roles, layer=0)


def summary_tokens(cls_tokens: Tensor, store: ParameterStore, layer: int,
                   config: ModelConfig) -> Tensor:
    """Per-frame summary tokens from the previous layer's CLS tokens.

    Projects the (..., frames, dim) CLS stack, runs trainable attention
    across frames (pre-norm in, post-norm out), and adds the projected
    tokens back as a residual. No positional encoding: frames interact as a
    set here.
    """
    prefix = f"prompt.layer{layer}"
    proj = ad.add(
        ad.matmul(cls_tokens, store[f"{prefix}.sum_proj.weight"]),
        store[f"{prefix}.sum_proj.bias"],
    )
    h = ad.layer_norm(proj, store[f"{prefix}.sum_ln_pre.gamma"], store[f"{prefix}.sum_ln_pre.beta"])
    mixed, _ = ad.mhsa(h, store.attention(f"{prefix}.sum_attn"), config.vision_heads)
    mixed = ad.layer_norm(
        mixed, store[f"{prefix}.sum_ln_post.gamma"], store[f"{prefix}.sum_ln_post.beta"]
    )
    return ad.add(mixed, proj)


def condition_local_prompts(local: Tensor, cls_tokens: Tensor) -> Tensor:
    """Add each frame's CLS token onto its local prompt vector."""
    if local.shape[-2:] != cls_tokens.shape[-2:]:
        raise DimensionError(
            f"local prompts {local.shape} do not match CLS tokens {cls_tokens.shape}"
        )
    return ad.add(local, cls_tokens)


def layer_prompts(cls_tokens: Tensor, store: ParameterStore, layer: int,
                  config: ModelConfig) -> LayerPrompts:
    """Compute every enabled prompt for a layer from the CLS stack."""
    prompts = LayerPrompts()
    if config.enable_summary:
        prompts.summary = summary_tokens(cls_tokens, store, layer, config)
    if config.enable_global:
        prompts.global_tokens = store[f"prompt.layer{layer}.global"]
    if config.enable_local:
        prompts.local = condition_local_prompts(store[f"prompt.layer{layer}.local"], cls_tokens)
    return prompts


def _augment(tokens: Tensor, prompts: LayerPrompts, config: ModelConfig) -> Tensor:
    """Append prompt tokens to every frame sequence: (B, T, n, D) -> (B, T, n+, D)."""
    b, t, _, dim = tokens.shape
    parts = [tokens]
    if config.enable_summary:
        if prompts.summary is None:
            raise ConfigurationError("summary prompts enabled but not provided")
        if config.append_all_summaries:
            all_sum = ad.reshape(prompts.summary, (b, 1, t, dim))
            parts.append(ad.expand(all_sum, (b, t, t, dim)))
        else:
            parts.append(ad.reshape(prompts.summary, (b, t, 1, dim)))
    if config.enable_global:
        if prompts.global_tokens is None:
            raise ConfigurationError("global prompts enabled but not provided")
        m = prompts.global_tokens.shape[0]
        g = ad.reshape(prompts.global_tokens, (1, 1, m, dim))
        parts.append(ad.expand(g, (b, t, m, dim)))
    if config.enable_local:
        if prompts.local is None:
            raise ConfigurationError("local prompts enabled but not provided")
        loc = ad.reshape(prompts.local, (b, 1, t, dim))
        parts.append(ad.expand(loc, (b, t, t, dim)))
    return ad.concat(parts, axis=2)


def _layer_forward(tokens: Tensor, prompts: LayerPrompts, store: ParameterStore,
                   layer: int, config: ModelConfig):
    """One frozen block over augmented sequences.

    tokens: (B, T, 1+N, D). Returns the retained (B, T, 1+N, D) output and
    the attention maps (B, T, heads, n_aug, n_aug).
    """
    kept_len = config.tokens_per_frame
    if tokens.shape[-2] != kept_len:
        raise ConfigurationError(
            f"expected {kept_len} retained tokens per frame, got {tokens.shape[-2]}"
        )
    prefix = f"vision.layer{layer}"
    aug = _augment(tokens, prompts, config)
    h = ad.layer_norm(aug, store[f"{prefix}.ln1.gamma"], store[f"{prefix}.ln1.beta"])
    attn_out, attn = ad.mhsa(h, store.attention(f"{prefix}.attn"), config.vision_heads)
    aug = ad.add(aug, attn_out)
    kept = ad.narrow(aug, 2, 0, kept_len)
    h = ad.layer_norm(kept, store[f"{prefix}.ln2.gamma"], store[f"{prefix}.ln2.beta"])
    ffn = ad.add(ad.matmul(h, store[f"{prefix}.ffn.w1"]), store[f"{prefix}.ffn.b1"])
    ffn = ad.gelu(ffn)
    ffn = ad.add(ad.matmul(ffn, store[f"{prefix}.ffn.w2"]), store[f"{prefix}.ffn.b2"])
    return ad.add(kept, ffn), attn


def encoder_layer(frame_tokens: FrameTokens, prompts: LayerPrompts, store: ParameterStore,
                  layer: int, config: ModelConfig):
    """Single-clip layer step: (T, 1+N, D) tokens -> (T, 1+N, D), attention."""
    t, n, dim = frame_tokens.tokens.shape
    batched = ad.reshape(frame_tokens.tokens, (1, t, n, dim))
    bp = LayerPrompts(
        summary=None if prompts.summary is None
        else ad.reshape(prompts.summary, (1,) + tuple(prompts.summary.shape)),
        global_tokens=prompts.global_tokens,
        local=None if prompts.local is None
        else ad.reshape(prompts.local, (1,) + tuple(prompts.local.shape)),
    )
    out, attn = _layer_forward(batched, bp, store, layer, config)
    out = ad.reshape(out, (t, n, dim))
    return (
        FrameTokens(tokens=out, roles=frame_tokens.roles, layer=layer + 1),
        ad.reshape(attn, tuple(attn.shape[1:])),
    )


def _validate_clips(clips: np.ndarray, config: ModelConfig):
    expected = (config.frames, config.height, config.width, config.channels)
    if clips.shape[1:] != expected:
        raise DimensionError(f"clip shape {clips.shape[1:]} does not match config {expected}")
    if not np.all(np.isfinite(clips)):
        raise ContractError("clip contains non-finite values")


def encode_clip_batch(clips, store: ParameterStore, config: ModelConfig,
                      want_trace: bool = False):
    """Encode (B, T, H, W, C) clips to (B, embed_dim) video representations.

    Returns (videos, traces) where traces is a list of per-clip
    AttentionTrace objects (None unless requested).
    """
    clips = np.asarray(clips, dtype=np.float64)
    if clips.ndim != 5:
        raise DimensionError(f"expected (B, T, H, W, C) clips, got {clips.shape}")
    _validate_clips(clips, config)
    b, t = clips.shape[0], config.frames

    patches = patchify(clips, config.patch)              # (B, T, N, C*P*P)
    emb = ad.matmul(patches, store["vision.patch_proj.weight"])
    cls = ad.expand(ad.reshape(store["vision.cls"], (1, 1, 1, config.dim)),
                    (b, t, 1, config.dim))
    tokens = ad.concat([cls, emb], axis=2)
    tokens = ad.add(tokens, store["vision.pos_space"])
    tokens = ad.add(tokens, ad.reshape(store["vision.pos_time"], (t, 1, config.dim)))

    attn_layers = []
    for layer in range(config.vision_layers):
        cls_prev = ad.reshape(ad.narrow(tokens, 2, 0, 1), (b, t, config.dim))
        prompts = layer_prompts(cls_prev, store, layer, config)
        tokens, attn = _layer_forward(tokens, prompts, store, layer, config)
        if want_trace:
            attn_layers.append(np.array(attn.data))

    cls_final = ad.reshape(ad.narrow(tokens, 2, 0, 1), (b, t, config.dim))
    per_frame = ad.matmul(cls_final, store["vision.out_proj.weight"])
    videos = ad.tmean(per_frame, axis=1)

    traces = None
    if want_trace:
        roles = sequence_roles(config)
        traces = [
            AttentionTrace(
                layers=[layer_attn[i] for layer_attn in attn_layers],
                roles=roles,
                patch_grid=config.patch_grid,
            )
            for i in range(b)
        ]
    return videos, traces


def encode_video(clip, store: ParameterStore, config: ModelConfig):
    """Encode one clip to (embed_dim,); also returns its attention trace."""
    arr = clip.frames if hasattr(clip, "frames") else np.asarray(clip, dtype=np.float64)
    videos, traces = encode_clip_batch(arr[None], store, config, want_trace=True)
    return ad.reshape(videos, (config.embed_dim,)), traces[0]
