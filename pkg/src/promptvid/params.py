"""Parameter storage, seeded initialization, and trainable accounting.

The backbone (both towers) is filled from a seeded Gaussian and frozen; it
stands in for pretrained weights. Everything the prompting scheme adds is
trainable: the per-layer summary blocks, global and local prompt tokens,
learned text contexts, and the logit scale.
"""

from __future__ import annotations

import numpy as np

from .autodiff import AttentionWeights, Tensor
from .config import TEXT_MODE_CLASS_SPECIFIC, ModelConfig
from .errors import ConfigurationError, ContractError
from .rng import substream

INIT_STD = 0.02


class ParameterStore:
    """Named tensors, each flagged trainable or frozen, in a stable order."""

    def __init__(self):
        self._entries: dict[str, tuple[Tensor, bool]] = {}

    def add(self, name: str, tensor: Tensor, frozen: bool):
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = not frozen
        tensor.name = name
        self._entries[name] = (tensor, frozen)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name][0]

    def frozen(self, name: str) -> bool:
        return self._entries[name][1]

    def names(self):
        return list(self._entries)

    def trainable_names(self):
        return [n for n, (_, fr) in self._entries.items() if not fr]

    def frozen_names(self):
        return [n for n, (_, fr) in self._entries.items() if fr]

    def replace(self, name: str, data: np.ndarray):
        """Swap in new values for an existing entry (optimizer use only)."""
        old, frozen = self._entries[name]
        if data.shape != old.data.shape:
            raise ContractError(f"replace {name!r}: shape {data.shape} != {old.data.shape}")
        t = Tensor(data, requires_grad=not frozen, name=name)
        self._entries[name] = (t, frozen)

    def attention(self, prefix: str) -> AttentionWeights:
        """Bundle the eight projection tensors under `prefix`."""
        return AttentionWeights(
            wq=self[prefix + ".wq"], bq=self[prefix + ".bq"],
            wk=self[prefix + ".wk"], bk=self[prefix + ".bk"],
            wv=self[prefix + ".wv"], bv=self[prefix + ".bv"],
            wo=self[prefix + ".wo"], bo=self[prefix + ".bo"],
        )


def _add_attention(store, rng, prefix, dim, frozen):
    for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
        store.add(f"{prefix}.{w}", _gauss(rng, (dim, dim)), frozen)
        store.add(f"{prefix}.{b}", _gauss(rng, (dim,)), frozen)


def _add_layer_norm(store, rng, prefix, dim, frozen):
    # Pretrained-style layer norms sit near identity: gain 1, shift 0,
    # both jittered by the same std as everything else.
    store.add(f"{prefix}.gamma", Tensor(1.0 + rng.normal(0.0, INIT_STD, (dim,))), frozen)
    store.add(f"{prefix}.beta", _gauss(rng, (dim,)), frozen)


def _add_ffn(store, rng, prefix, dim, hidden, frozen):
    store.add(f"{prefix}.w1", _gauss(rng, (dim, hidden)), frozen)
    store.add(f"{prefix}.b1", _gauss(rng, (hidden,)), frozen)
    store.add(f"{prefix}.w2", _gauss(rng, (hidden, dim)), frozen)
    store.add(f"{prefix}.b2", _gauss(rng, (dim,)), frozen)


def _gauss(rng, shape) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, shape))


def init_model(config: ModelConfig, seed: int) -> ParameterStore:
    """Allocate every tensor the model needs, deterministically in `seed`.

    Draw order is fixed (vision backbone, text backbone, prompts) so that
    identical (config, seed) pairs produce byte-identical stores.
    """
    if not isinstance(config, ModelConfig):
        raise ConfigurationError("init_model needs a ModelConfig")
    rng = substream(seed, "init")
    store = ParameterStore()

    # Frozen vision backbone.
    store.add("vision.patch_proj.weight", _gauss(rng, (config.patch_dim, config.dim)), True)
    store.add("vision.cls", _gauss(rng, (config.dim,)), True)
    store.add("vision.pos_space", _gauss(rng, (config.tokens_per_frame, config.dim)), True)
    store.add("vision.pos_time", _gauss(rng, (config.frames, config.dim)), True)
    for layer in range(config.vision_layers):
        prefix = f"vision.layer{layer}"
        _add_layer_norm(store, rng, f"{prefix}.ln1", config.dim, True)
        _add_attention(store, rng, f"{prefix}.attn", config.dim, True)
        _add_layer_norm(store, rng, f"{prefix}.ln2", config.dim, True)
        _add_ffn(store, rng, f"{prefix}.ffn", config.dim, config.ffn_dim, True)
    store.add("vision.out_proj.weight", _gauss(rng, (config.dim, config.embed_dim)), True)

    # Frozen text backbone.
    store.add("text.tok_embed", _gauss(rng, (config.vocab_size, config.text_dim)), True)
    store.add("text.pos_embed", _gauss(rng, (config.ctx_len, config.text_dim)), True)
    for layer in range(config.text_layers):
        prefix = f"text.layer{layer}"
        _add_layer_norm(store, rng, f"{prefix}.ln1", config.text_dim, True)
        _add_attention(store, rng, f"{prefix}.attn", config.text_dim, True)
        _add_layer_norm(store, rng, f"{prefix}.ln2", config.text_dim, True)
        _add_ffn(store, rng, f"{prefix}.ffn", config.text_dim, config.text_ffn_dim, True)
    store.add("text.out_proj.weight", _gauss(rng, (config.text_dim, config.embed_dim)), True)

    # Trainable prompt modules.
    for layer in range(config.vision_layers):
        prefix = f"prompt.layer{layer}"
        if config.enable_summary:
            store.add(f"{prefix}.sum_proj.weight", _gauss(rng, (config.dim, config.dim)), False)
            store.add(f"{prefix}.sum_proj.bias", _gauss(rng, (config.dim,)), False)
            _add_attention(store, rng, f"{prefix}.sum_attn", config.dim, False)
            _add_layer_norm(store, rng, f"{prefix}.sum_ln_pre", config.dim, False)
            _add_layer_norm(store, rng, f"{prefix}.sum_ln_post", config.dim, False)
        if config.enable_global:
            store.add(f"{prefix}.global", _gauss(rng, (config.global_prompts, config.dim)), False)
        if config.enable_local:
            store.add(f"{prefix}.local", _gauss(rng, (config.frames, config.dim)), False)
    if config.ctx_prompts > 0:
        if config.text_mode == TEXT_MODE_CLASS_SPECIFIC:
            shape = (config.num_classes, config.ctx_prompts, config.text_dim)
        else:
            shape = (config.ctx_prompts, config.text_dim)
        store.add("prompt.text_ctx", _gauss(rng, shape), False)
    store.add("logit_scale", Tensor(config.logit_scale_init), False)
    return store


def count_trainable(store: ParameterStore) -> int:
    """Total element count over trainable entries."""
    return sum(store[name].data.size for name in store.trainable_names())


def trainable_count_formula(config: ModelConfig) -> int:
    """Closed-form trainable count for a config.

    Per vision layer: the summary block contributes a projection (D^2 + D),
    its attention (4(D^2 + D)) and two layer norms (4D); global prompts add
    M_v * D and local prompts add T * D. The text side adds M_c * D_text
    per context set (one set shared, or one per class), and the logit scale
    is a single scalar.
    """
    d = config.dim
    per_layer = 0
    if config.enable_summary:
        per_layer += (d * d + d) + 4 * (d * d + d) + 2 * (2 * d)
    if config.enable_global:
        per_layer += config.global_prompts * d
    if config.enable_local:
        per_layer += config.frames * d
    total = config.vision_layers * per_layer
    sets = config.num_classes if config.text_mode == TEXT_MODE_CLASS_SPECIFIC else 1
    total += config.ctx_prompts * config.text_dim * sets
    return total + 1
