"""Synthetic motion-classification videos and their on-disk format.

Each clip shows a single white square drifting over a black, noisy
background with toroidal wrap-around. The class is the motion vector
(direction word x speed word), never the appearance: start positions are
uniform, so any single frame looks the same regardless of class. Held-out
classes combine direction and speed words that never co-occur in training,
which is what makes the zero-shot split meaningful.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import (
    ClipFormatError,
    ClipShapeError,
    ClipTruncatedError,
    ContractError,
    DataSpecError,
    MissingArtifactError,
)
from .rng import substream

CLIP_MAGIC = b"VCLP"
CLIP_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

# (label words, unit velocity (dx, dy)); y grows downward.
_CARDINALS = (("left", (-1, 0)), ("right", (1, 0)), ("up", (0, -1)), ("down", (0, 1)))
_DIAGONALS = (
    ("up left", (-1, -1)), ("up right", (1, -1)),
    ("down left", (-1, 1)), ("down right", (1, 1)),
)
_SPEEDS = (("slow", 1), ("fast", 2))

SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_ZEROSHOT = "zeroshot"


@dataclass(frozen=True)
class MotionClass:
    id: int
    label: str
    velocity: tuple


@dataclass(frozen=True)
class VideoClip:
    """Dense (frames, height, width, channels) float frames in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        arr = self.frames
        if arr.ndim != 4:
            raise ClipShapeError(f"clip must be 4-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("clip contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError("clip values must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetSpec:
    """Generation parameters for one dataset directory."""

    train_classes: int = 8
    zeroshot_classes: int = 4
    train_per_class: int = 200
    val_per_class: int = 50
    zeroshot_per_class: int = 50
    frames: int = 4
    height: int = 16
    width: int = 16
    channels: int = 3
    sprite: int = 5
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.train_classes < 1 or self.train_classes > len(_CARDINALS) * len(_SPEEDS):
            raise DataSpecError(
                f"train_classes must be in [1, {len(_CARDINALS) * len(_SPEEDS)}]"
            )
        if self.zeroshot_classes < 0 or self.zeroshot_classes > len(_DIAGONALS) * len(_SPEEDS):
            raise DataSpecError(
                f"zeroshot_classes must be in [0, {len(_DIAGONALS) * len(_SPEEDS)}]"
            )
        for name in ("train_per_class", "val_per_class", "zeroshot_per_class"):
            if getattr(self, name) < 0:
                raise DataSpecError(f"{name} must be nonnegative")
        if self.frames < 1 or self.height < 1 or self.width < 1 or self.channels < 1:
            raise DataSpecError("frames/height/width/channels must be positive")
        if self.sprite < 1 or self.sprite > min(self.height, self.width):
            raise DataSpecError("sprite size must fit inside a frame")
        if self.noise < 0:
            raise DataSpecError("noise must be nonnegative")
        # Fastest class moves 2 px/frame; distinct velocities need room to wrap.
        if min(self.height, self.width) <= 2:
            raise DataSpecError("grid too small to carry distinct motions")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataSpecError(f"unknown dataset spec keys: {sorted(unknown)}")
        return cls(**d)


def motion_classes(spec: DatasetSpec):
    """Deterministic class lists: (train_classes, zeroshot_classes).

    Train classes pair cardinal directions with speeds; zero-shot classes
    pair diagonal directions (novel word combinations, same lexicon) with
    speeds. Class ids are global: zero-shot ids follow the train ids.
    """
    train_pool = [(d, s) for d, _ in _CARDINALS for s, _ in _SPEEDS]
    zs_pool = [(d, s) for s, _ in _SPEEDS[::-1] for d, _ in _DIAGONALS]
    dir_vec = dict(_CARDINALS + _DIAGONALS)
    speed_of = dict(_SPEEDS)
    classes = []
    for i, (d, s) in enumerate(train_pool[: spec.train_classes]):
        vx, vy = dir_vec[d]
        classes.append(MotionClass(i, f"move {d} {s}", (vx * speed_of[s], vy * speed_of[s])))
    zero = []
    for j, (d, s) in enumerate(zs_pool[: spec.zeroshot_classes]):
        vx, vy = dir_vec[d]
        zero.append(
            MotionClass(spec.train_classes + j, f"move {d} {s}",
                        (vx * speed_of[s], vy * speed_of[s]))
        )
    velocities = [c.velocity for c in classes + zero]
    if len(set(velocities)) != len(velocities):
        raise DataSpecError("class velocities are not distinct")
    return classes, zero


def lexicon_of(labels) -> list:
    return sorted({word for label in labels for word in label.split()})


def render_clip(spec: DatasetSpec, velocity, start, rng) -> np.ndarray:
    """One clip as float64 (T, H, W, C): moving sprite, wrap, noise, clip."""
    frames = np.zeros((spec.frames, spec.height, spec.width, spec.channels))
    x0, y0 = start
    dx, dy = velocity
    offsets = np.arange(spec.sprite)
    for t in range(spec.frames):
        rows = (y0 + dy * t + offsets) % spec.height
        cols = (x0 + dx * t + offsets) % spec.width
        frames[t][np.ix_(rows, cols)] = 1.0
    if spec.noise > 0:
        frames += rng.normal(0.0, spec.noise, frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return frames


def write_clip(clip, path):
    """Serialize to the VCLP format: magic, version, dims, float32 LE data."""
    arr = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ClipShapeError(f"cannot write clip of shape {arr.shape}")
    t, h, w, c = arr.shape
    header = _HEADER.pack(CLIP_MAGIC, CLIP_VERSION, t, h, w, c)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())


def read_clip(path) -> VideoClip:
    """Read a VCLP file, widening to float64 in memory."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"no clip file at {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ClipTruncatedError(f"{path}: shorter than the header")
    magic, version, t, h, w, c = _HEADER.unpack_from(raw)
    if magic != CLIP_MAGIC:
        raise ClipFormatError(f"{path}: bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise ClipFormatError(f"{path}: unsupported version {version}")
    if min(t, h, w, c) < 1 or t * h * w * c > 1 << 30:
        raise ClipShapeError(f"{path}: invalid shape ({t}, {h}, {w}, {c})")
    expected = _HEADER.size + 4 * t * h * w * c
    if len(raw) < expected:
        raise ClipTruncatedError(f"{path}: {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise ClipFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return VideoClip(frames=data.reshape(t, h, w, c))


def generate_dataset(spec: DatasetSpec, out_dir) -> dict:
    """Write clips plus manifest.json under `out_dir`; returns the manifest.

    Fully deterministic in spec.seed: same spec twice gives a byte-identical
    directory tree.
    """
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    train_classes, zero_classes = motion_classes(spec)
    rng = substream(spec.seed, "data")
    splits = {SPLIT_TRAIN: [], SPLIT_VAL: [], SPLIT_ZEROSHOT: []}
    plan = [
        (SPLIT_TRAIN, train_classes, spec.train_per_class),
        (SPLIT_VAL, train_classes, spec.val_per_class),
        (SPLIT_ZEROSHOT, zero_classes, spec.zeroshot_per_class),
    ]
    for split, classes, per_class in plan:
        for cls in classes:
            for i in range(per_class):
                x0 = int(rng.integers(0, spec.width))
                y0 = int(rng.integers(0, spec.height))
                frames = render_clip(spec, cls.velocity, (x0, y0), rng)
                rel = f"clips/{split}_{cls.id:02d}_{i:04d}.vclp"
                write_clip(frames, out_dir / rel)
                splits[split].append({"file": rel, "class": cls.id})
    labels = [c.label for c in train_classes + zero_classes]
    manifest = {
        "labels": labels,
        "lexicon": lexicon_of(labels),
        "splits": splits,
        "spec": spec.to_dict(),
        "seed": spec.seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


class SyntheticDataset:
    """Loaded view of a generated dataset directory."""

    def __init__(self, root, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.spec = DatasetSpec.from_dict(manifest["spec"])
        self.labels = list(manifest["labels"])
        self.lexicon = list(manifest["lexicon"])
        self.train_label_count = self.spec.train_classes
        self._cache: dict[str, list] = {}
        self._vocab = None

    @property
    def train_labels(self):
        return self.labels[: self.train_label_count]

    @property
    def zeroshot_labels(self):
        return self.labels[self.train_label_count:]

    @property
    def vocab(self):
        if self._vocab is None:
            from .text import Vocabulary

            self._vocab = Vocabulary.from_lexicon(self.lexicon)
        return self._vocab

    def split(self, name: str):
        """List of (frames ndarray, global class id) for a split, cached."""
        if name not in self.manifest["splits"]:
            raise ContractError(f"unknown split {name!r}")
        if name not in self._cache:
            items = []
            for rec in self.manifest["splits"][name]:
                clip = read_clip(self.root / rec["file"])
                items.append((clip.frames, int(rec["class"])))
            self._cache[name] = items
        return self._cache[name]


def load_dataset(root) -> SyntheticDataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise MissingArtifactError(f"no dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataSpecError(f"unreadable dataset manifest: {exc}") from exc
    for key in ("labels", "lexicon", "splits", "spec", "seed"):
        if key not in manifest:
            raise DataSpecError(f"dataset manifest missing key {key!r}")
    return SyntheticDataset(root, manifest)
