"""Classification and accuracy evaluation against a bank of class embeddings.

Supervised evaluation encodes each training label through its learned
context; zero-shot evaluation encodes arbitrary labels through the fixed
manual prompt template and touches no trainable text context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ContractError, DuplicateLabelError
from .params import ParameterStore
from .text import Vocabulary, build_context, encode_sequences, manual_context, tokenize
from .vision import encode_clip_batch, encode_video

MODE_LEARNED = "learned"
MODE_MANUAL = "manual"


@dataclass
class ClassEmbeddingBank:
    labels: tuple
    embeddings: np.ndarray  # (num_labels, embed_dim), unit rows
    provenance: str


def build_class_bank(labels, store: ParameterStore, config: ModelConfig, vocab: Vocabulary,
                     mode: str, train_labels=None) -> ClassEmbeddingBank:
    """One unit-normalized text embedding per label.

    Learned mode requires every label to be a training class (its context
    vectors are bound to the class id); manual mode accepts any label.
    """
    labels = list(labels)
    if not labels:
        raise ContractError("class bank needs at least one label")
    if len(set(labels)) != len(labels):
        raise DuplicateLabelError("duplicate label in class bank")
    if mode == MODE_LEARNED:
        if train_labels is None:
            raise ContractError("learned mode needs the training label order")
        seqs = []
        for label in labels:
            if label not in train_labels:
                raise ContractError(f"label {label!r} was not a training class")
            cid = list(train_labels).index(label)
            seqs.append(build_context(cid, tokenize(label, vocab), store, config, vocab))
    elif mode == MODE_MANUAL:
        seqs = [manual_context(label, store, config, vocab) for label in labels]
    else:
        raise ContractError(f"unknown bank mode {mode!r}")
    embeddings = encode_sequences(seqs, store, config).data
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ContractError("a class embedding collapsed to zero")
    return ClassEmbeddingBank(labels=tuple(labels), embeddings=embeddings / norms,
                              provenance=mode)


def _scores(videos: np.ndarray, bank: ClassEmbeddingBank) -> np.ndarray:
    norms = np.linalg.norm(videos, axis=-1, keepdims=True)
    return (videos / norms) @ bank.embeddings.T


def classify(clip, bank: ClassEmbeddingBank, store: ParameterStore, config: ModelConfig):
    """Nearest class by cosine; ties break toward the lowest label index."""
    if not bank.labels:
        raise ContractError("empty class bank")
    v, _ = encode_video(clip, store, config)
    scores = _scores(v.data[None], bank)[0]
    best = int(np.argmax(scores))
    return bank.labels[best], scores


def evaluate(items, bank: ClassEmbeddingBank, store: ParameterStore, config: ModelConfig,
             batch_size: int = 32) -> dict:
    """Top-1/top-5 accuracy of (clip, bank_index) pairs against the bank."""
    if not items:
        raise ContractError("nothing to evaluate")
    for _, target in items:
        if not 0 <= target < len(bank.labels):
            raise ContractError(f"target {target} outside the bank")
    hits1 = 0
    hits5 = 0
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        clips = np.stack([c for c, _ in chunk])
        targets = np.array([t for _, t in chunk])
        videos, _ = encode_clip_batch(clips, store, config)
        scores = _scores(videos.data, bank)
        # Stable sort keeps ties ordered by label index.
        ranked = np.argsort(-scores, axis=1, kind="stable")
        hits1 += int(np.sum(ranked[:, 0] == targets))
        top_k = ranked[:, : min(5, len(bank.labels))]
        hits5 += int(np.sum(np.any(top_k == targets[:, None], axis=1)))
    n = len(items)
    return {
        "top1": hits1 / n,
        "top5": hits5 / n,
        "n_samples": n,
        "mode": bank.provenance,
    }
