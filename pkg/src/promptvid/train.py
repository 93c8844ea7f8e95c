"""Contrastive training loop: schedule, optimizer, metrics, checkpointing.

Training runs for a fixed number of epochs with a cosine-decayed learning
rate starting at 8e-4 and SGD with momentum 0.9. Only trainable tensors are
ever updated; frozen tensors stay byte-identical to initialization.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import backward
from .checkpoint import save_checkpoint
from .config import ModelConfig
from .data import SPLIT_TRAIN, SyntheticDataset
from .errors import ConfigurationError, ContractError, TrainingDivergedError
from .objective import contrastive_loss, similarity_matrix
from .params import ParameterStore, init_model
from .rng import substream
from .text import Vocabulary, build_context, encode_sequences, tokenize
from .vision import encode_clip_batch

METRICS_HEADER = "epoch,step,lr,loss,top1_train"

# The trainable log temperature is clamped after every update, following the
# usual contrastive-pretraining practice: once it dives, every gradient in
# the model scales with exp(logit_scale) and training freezes irrecoverably.
LOGIT_SCALE_MIN = 0.0
LOGIT_SCALE_MAX = math.log(1000.0)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 30
    initial_lr: float = 8e-4
    batch_size: int = 16
    momentum: float = 0.9
    schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.initial_lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("need initial_lr > 0 and momentum in [0, 1)")
        if self.schedule != "cosine":
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train schedule keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(schedule: TrainSchedule, step: int, total_steps: int) -> float:
    """Cosine decay from initial_lr at step 0 toward 0 at total_steps."""
    if total_steps <= 0:
        return schedule.initial_lr
    frac = min(max(step, 0), total_steps) / total_steps
    return schedule.initial_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamOptimizer:
    """Adam over the trainable entries of a store.

    The trainable modules sit at very different depths behind the frozen
    backbone, so their gradient magnitudes span many orders of magnitude;
    Adam's per-parameter normalization is what lets one learning rate serve
    all of them. beta1 doubles as the schedule's momentum setting.
    """

    def __init__(self, momentum: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = momentum
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.first: dict[str, np.ndarray] = {}
        self.second: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore, grads: dict, lr: float):
        self.steps += 1
        correct1 = 1.0 - self.beta1**self.steps
        correct2 = 1.0 - self.beta2**self.steps
        for name, grad in grads.items():
            if store.frozen(name):
                raise ContractError(f"gradient delivered for frozen tensor {name!r}")
            g = grad.data
            m = self.first.get(name)
            v = self.second.get(name)
            m = (1 - self.beta1) * g if m is None else self.beta1 * m + (1 - self.beta1) * g
            v = (1 - self.beta2) * g * g if v is None else self.beta2 * v + (1 - self.beta2) * g * g
            self.first[name] = m
            self.second[name] = v
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            store.replace(name, store[name].data - lr * update)


def class_text_embeddings(class_ids, store, config, vocab, train_labels):
    """Learned-context text embeddings for the given class ids: (len, D')."""
    seqs = [
        build_context(cid, tokenize(train_labels[cid], vocab), store, config, vocab)
        for cid in class_ids
    ]
    return encode_sequences(seqs, store, config)


def train_step(batch, store: ParameterStore, config: ModelConfig, vocab: Vocabulary,
               train_labels, optimizer: AdamOptimizer, lr: float) -> dict:
    """One optimizer step on a batch of (clip, class_id) pairs.

    The text side uses one embedding per distinct class in the batch.
    Raises TrainingDivergedError on a non-finite loss before any update.
    """
    clips = np.stack([c for c, _ in batch])
    target_ids = [cid for _, cid in batch]
    class_ids = sorted(set(target_ids))
    col_of = {cid: j for j, cid in enumerate(class_ids)}
    targets = np.array([col_of[cid] for cid in target_ids])

    videos, _ = encode_clip_batch(clips, store, config)
    texts = class_text_embeddings(class_ids, store, config, vocab, train_labels)
    sim = similarity_matrix(videos, texts, store["logit_scale"])
    loss = contrastive_loss(sim, targets)

    loss_val = float(loss.data)
    if not math.isfinite(loss_val):
        raise TrainingDivergedError(f"non-finite loss {loss_val!r} at lr {lr!r}")
    grads = backward(loss)
    optimizer.step(store, grads, lr)
    store.replace(
        "logit_scale",
        np.clip(store["logit_scale"].data, LOGIT_SCALE_MIN, LOGIT_SCALE_MAX),
    )

    top1 = float(np.mean(sim.values.data.argmax(axis=1) == targets))
    return {"loss": loss_val, "lr": lr, "top1": top1}


def train_loop(dataset: SyntheticDataset, config: ModelConfig, schedule: TrainSchedule,
               out_dir, store: ParameterStore | None = None):
    """Full training run; writes metrics.csv and a final checkpoint.

    Deterministic in schedule.seed: initialization and epoch shuffling each
    draw from their own named substream. Returns (store, metrics_path,
    checkpoint_path).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = dataset.split(SPLIT_TRAIN)
    if not items:
        raise ContractError("training split is empty")
    train_labels = dataset.train_labels

    if store is None:
        store = init_model(config, schedule.seed)
    optimizer = AdamOptimizer(schedule.momentum)
    shuffle_rng = substream(schedule.seed, "shuffle")

    steps_per_epoch = math.ceil(len(items) / schedule.batch_size)
    total_steps = schedule.epochs * steps_per_epoch
    rows = [METRICS_HEADER]
    step = 0
    for epoch in range(schedule.epochs):
        order = shuffle_rng.permutation(len(items))
        for start in range(0, len(items), schedule.batch_size):
            batch = [items[i] for i in order[start:start + schedule.batch_size]]
            lr = learning_rate(schedule, step, total_steps)
            try:
                metrics = train_step(batch, store, config, dataset.vocab, train_labels,
                                     optimizer, lr)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"epoch {epoch} step {step}: {exc}"
                ) from exc
            rows.append(
                f"{epoch},{step},{metrics['lr']!r},{metrics['loss']!r},{metrics['top1']!r}"
            )
            step += 1

    metrics_path = out_dir / "metrics.csv"
    metrics_path.write_text("\n".join(rows) + "\n")
    ckpt_path = save_checkpoint(store, config, out_dir / "checkpoint",
                                vocab_tokens=dataset.vocab.tokens, labels=train_labels)
    return store, metrics_path, ckpt_path
