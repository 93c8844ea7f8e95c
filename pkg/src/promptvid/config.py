"""Model architecture configuration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigurationError

TEXT_MODE_UNIFIED = "uc"
TEXT_MODE_CLASS_SPECIFIC = "csc"


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and switches of the dual encoder.

    The vision tower is a ViT over `frames` frames of `height` x `width`
    pixels cut into `patch`-sized squares; the text tower is a small
    bidirectional transformer over `ctx_len` token slots. Prompting is
    controlled by the enable_* flags, the per-layer global prompt count,
    and the learned text context length.
    """

    frames: int = 4
    height: int = 16
    width: int = 16
    channels: int = 3
    patch: int = 8
    dim: int = 48
    embed_dim: int = 32
    vision_layers: int = 3
    vision_heads: int = 4
    text_dim: int = 32
    text_layers: int = 2
    text_heads: int = 4
    ctx_len: int = 16
    vocab_size: int = 16
    global_prompts: int = 8
    ctx_prompts: int = 8
    num_classes: int = 8
    text_mode: str = TEXT_MODE_CLASS_SPECIFIC
    enable_summary: bool = True
    enable_local: bool = True
    enable_global: bool = True
    # Nonstandard variant: append every frame's summary token to every frame
    # instead of only the frame's own. Off by default.
    append_all_summaries: bool = False
    logit_scale_init: float = field(default=math.log(1.0 / 0.07))

    def __post_init__(self):
        positive = (
            "frames", "height", "width", "channels", "patch", "dim", "embed_dim",
            "vision_layers", "vision_heads", "text_dim", "text_layers", "text_heads",
            "ctx_len", "vocab_size", "num_classes",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.global_prompts < 0 or self.ctx_prompts < 0:
            raise ConfigurationError("prompt counts must be nonnegative")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigurationError(
                f"frame size {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if self.dim % self.vision_heads:
            raise ConfigurationError(f"dim {self.dim} not divisible by {self.vision_heads} heads")
        if self.text_dim % self.text_heads:
            raise ConfigurationError(
                f"text_dim {self.text_dim} not divisible by {self.text_heads} heads"
            )
        if self.text_mode not in (TEXT_MODE_UNIFIED, TEXT_MODE_CLASS_SPECIFIC):
            raise ConfigurationError(f"text_mode must be 'uc' or 'csc', got {self.text_mode!r}")
        if self.ctx_prompts + 2 > self.ctx_len:
            raise ConfigurationError(
                f"ctx_len {self.ctx_len} leaves no room for a label after "
                f"{self.ctx_prompts} context slots"
            )
        if self.enable_global and self.global_prompts == 0:
            raise ConfigurationError("enable_global requires global_prompts > 0")

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_grid(self) -> tuple:
        return (self.height // self.patch, self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def tokens_per_frame(self) -> int:
        return 1 + self.num_patches

    @property
    def appended_tokens(self) -> int:
        """Prompt positions appended to each frame sequence inside a layer."""
        n = 0
        if self.enable_summary:
            n += self.frames if self.append_all_summaries else 1
        if self.enable_global:
            n += self.global_prompts
        if self.enable_local:
            n += self.frames
        return n

    @property
    def ffn_dim(self) -> int:
        return 4 * self.dim

    @property
    def text_ffn_dim(self) -> int:
        return 4 * self.text_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
