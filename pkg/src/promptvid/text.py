"""Text side: tokenizer, learned/manual context construction, frozen encoder.

A class description enters the frozen text transformer as a sequence of
embedding vectors: learned context slots (shared or per class), the
embedded label words, and a readout token whose final-layer state becomes
the text representation. Padding is masked out of attention so it can
never influence the readout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TEXT_MODE_CLASS_SPECIFIC, ModelConfig
from .errors import ConfigurationError, ContractError, InputTooLongError
from .params import ParameterStore

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"

MANUAL_TEMPLATE = "a video of the action of"

ROLE_CONTEXT = "context"
ROLE_LABEL = "label"
ROLE_READOUT = "readout"
ROLE_PAD = "pad"


class Vocabulary:
    """Word-level vocabulary with reserved pad / unknown / readout ids."""

    def __init__(self, words):
        self.id_of = {PAD_TOKEN: 0, UNK_TOKEN: 1, EOS_TOKEN: 2}
        for w in words:
            if w not in self.id_of:
                self.id_of[w] = len(self.id_of)
        self.tokens = [t for t, _ in sorted(self.id_of.items(), key=lambda kv: kv[1])]

    @classmethod
    def from_lexicon(cls, lexicon) -> "Vocabulary":
        """Deterministic vocabulary over the dataset lexicon plus the fixed
        manual-prompt template words."""
        return cls(sorted(set(lexicon)) + MANUAL_TEMPLATE.split())

    @classmethod
    def from_tokens(cls, tokens) -> "Vocabulary":
        """Rebuild from a serialized ordered token list."""
        if tokens[:3] != [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN]:
            raise ContractError("token list does not start with the reserved tokens")
        return cls(tokens[3:])

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2


def tokenize(text: str, vocab: Vocabulary) -> list:
    """Lowercased whitespace tokenization; unknown words map to UNK."""
    return [vocab.id_of.get(w, vocab.unk_id) for w in text.lower().split()]


@dataclass
class TokenSequence:
    """Embedded token sequence ready for the text encoder.

    vectors: (length, text_dim) Tensor; mask marks positions attention may
    read (pads are False); readout is the position whose output is used.
    """

    vectors: Tensor
    mask: np.ndarray
    readout: int
    roles: tuple


def _context_vectors(class_id: int, store: ParameterStore, config: ModelConfig):
    if config.ctx_prompts == 0:
        return None
    ctx = store["prompt.text_ctx"]
    if config.text_mode == TEXT_MODE_CLASS_SPECIFIC:
        if not 0 <= class_id < config.num_classes:
            raise ContractError(f"class id {class_id} outside [0, {config.num_classes})")
        row = ad.narrow(ctx, 0, class_id, 1)
        return ad.reshape(row, (config.ctx_prompts, config.text_dim))
    return ctx


def _assemble(parts, roles, readout, store, config, vocab, pad_to=None):
    embed = store["text.tok_embed"]
    total = sum(p.shape[0] for p in parts)
    target = config.ctx_len if pad_to is None else pad_to
    if not total <= target <= config.ctx_len:
        raise InputTooLongError(f"cannot pad {total} tokens to {target} (ctx_len {config.ctx_len})")
    if target > total:
        parts.append(ad.gather_rows(embed, [vocab.pad_id] * (target - total)))
        roles += (ROLE_PAD,) * (target - total)
    seq = ad.concat(parts, axis=0)
    seq = ad.add(seq, ad.narrow(store["text.pos_embed"], 0, 0, target))
    mask = np.array([r != ROLE_PAD for r in roles])
    return TokenSequence(vectors=seq, mask=mask, readout=readout, roles=roles)


def build_context(class_id: int, label_token_ids, store: ParameterStore,
                  config: ModelConfig, vocab: Vocabulary, pad_to=None) -> TokenSequence:
    """Learned-context sequence: [context slots, label words, readout]."""
    label_ids = list(label_token_ids)
    used = config.ctx_prompts + len(label_ids) + 1
    if used > config.ctx_len:
        raise InputTooLongError(
            f"{config.ctx_prompts} context slots + {len(label_ids)} label tokens + readout "
            f"exceed ctx_len {config.ctx_len}"
        )
    embed = store["text.tok_embed"]
    parts = []
    roles = ()
    ctx = _context_vectors(class_id, store, config)
    if ctx is not None:
        parts.append(ctx)
        roles += (ROLE_CONTEXT,) * config.ctx_prompts
    if label_ids:
        parts.append(ad.gather_rows(embed, label_ids))
        roles += (ROLE_LABEL,) * len(label_ids)
    parts.append(ad.gather_rows(embed, [vocab.eos_id]))
    roles += (ROLE_READOUT,)
    return _assemble(parts, roles, used - 1, store, config, vocab, pad_to=pad_to)


def manual_context(label: str, store: ParameterStore, config: ModelConfig,
                   vocab: Vocabulary) -> TokenSequence:
    """Fixed-template sequence for zero-shot: no trainable slots at all."""
    ids = tokenize(f"{MANUAL_TEMPLATE} {label}", vocab)
    used = len(ids) + 1
    if used > config.ctx_len:
        raise InputTooLongError(
            f"{len(ids)} template+label tokens + readout exceed ctx_len {config.ctx_len}"
        )
    embed = store["text.tok_embed"]
    parts = [ad.gather_rows(embed, ids), ad.gather_rows(embed, [vocab.eos_id])]
    roles = (ROLE_LABEL,) * len(ids) + (ROLE_READOUT,)
    return _assemble(parts, roles, used - 1, store, config, vocab)


def _transformer(x, mask_bias, store, config):
    """Pre-LN transformer stack shared by single and batched encoding."""
    for layer in range(config.text_layers):
        prefix = f"text.layer{layer}"
        h = ad.layer_norm(x, store[f"{prefix}.ln1.gamma"], store[f"{prefix}.ln1.beta"])
        attn_out, _ = ad.mhsa(h, store.attention(f"{prefix}.attn"), config.text_heads,
                              mask_bias=mask_bias)
        x = ad.add(x, attn_out)
        h = ad.layer_norm(x, store[f"{prefix}.ln2.gamma"], store[f"{prefix}.ln2.beta"])
        ffn = ad.add(ad.matmul(h, store[f"{prefix}.ffn.w1"]), store[f"{prefix}.ffn.b1"])
        ffn = ad.gelu(ffn)
        ffn = ad.add(ad.matmul(ffn, store[f"{prefix}.ffn.w2"]), store[f"{prefix}.ffn.b2"])
        x = ad.add(x, ffn)
    return x


def encode_sequences(seqs, store: ParameterStore, config: ModelConfig) -> Tensor:
    """Encode a batch of equal-length TokenSequences to (B, embed_dim)."""
    if not seqs:
        raise ContractError("encode_sequences needs at least one sequence")
    length = seqs[0].vectors.shape[0]
    for s in seqs:
        if s.vectors.shape[0] != length:
            raise ContractError("batched sequences must share a length")
    x = ad.stack([s.vectors for s in seqs], axis=0)
    mask = np.stack([s.mask for s in seqs])
    bias = ad.constant(np.where(mask, 0.0, ad.MASK_BIAS)[:, None, None, :])
    x = _transformer(x, bias, store, config)
    readouts = np.array([s.readout for s in seqs])
    picked = ad.select_positions(x, readouts)
    return ad.matmul(picked, store["text.out_proj.weight"])


def encode_text(seq: TokenSequence, store: ParameterStore, config: ModelConfig) -> Tensor:
    """Encode one sequence to an (embed_dim,) representation."""
    if seq.vectors.shape[0] > config.ctx_len:
        raise InputTooLongError(
            f"sequence length {seq.vectors.shape[0]} exceeds ctx_len {config.ctx_len}"
        )
    if seq.vectors.shape[1] != config.text_dim:
        raise ConfigurationError(
            f"sequence width {seq.vectors.shape[1]} != text_dim {config.text_dim}"
        )
    out = encode_sequences([seq], store, config)
    return ad.reshape(out, (config.embed_dim,))
