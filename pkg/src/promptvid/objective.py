"""Cosine similarity and the contrastive training objective.

Video and text representations are compared with cosine similarity, scaled
by a trainable log temperature. The loss is symmetric softmax cross-entropy:
videos classify over the batch's texts, and, when the text batch is matched
one-to-one with the videos, texts also classify over the videos.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateInputError, DimensionError

_NORM_FLOOR = 1e-300


@dataclass
class SimilarityMatrix:
    """Pairwise scaled cosine similarities: videos along rows, texts along columns."""

    values: Tensor
    scaled: bool
    logit_scale: float


def _l2_normalize(rows: Tensor, what: str) -> Tensor:
    norms_sq = ad.tsum(ad.mul(rows, rows), axis=-1, keepdims=True)
    if np.any(norms_sq.data <= _NORM_FLOOR):
        raise DegenerateInputError(f"zero {what} vector cannot be normalized")
    return ad.div(rows, ad.tsqrt(norms_sq))


def cosine_sim(v: Tensor, c: Tensor) -> Tensor:
    """Cosine similarity of two nonzero vectors; scale-invariant, in [-1, 1]."""
    v, c = ad._as_tensor(v), ad._as_tensor(c)
    if v.shape != c.shape or v.ndim != 1:
        raise DimensionError(f"cosine_sim expects two equal vectors, got {v.shape}, {c.shape}")
    dot = ad.tsum(ad.mul(v, c))
    vn = ad.tsqrt(ad.tsum(ad.mul(v, v)))
    cn = ad.tsqrt(ad.tsum(ad.mul(c, c)))
    if float(vn.data) <= 0.0 or float(cn.data) <= 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return ad.div(dot, ad.mul(vn, cn))


def similarity_matrix(videos: Tensor, texts: Tensor, logit_scale: Tensor) -> SimilarityMatrix:
    """All-pairs scaled cosine similarity: exp(logit_scale) * cos(v_i, c_j)."""
    videos, texts = ad._as_tensor(videos), ad._as_tensor(texts)
    if videos.ndim != 2 or texts.ndim != 2 or videos.shape[1] != texts.shape[1]:
        raise DimensionError(
            f"similarity_matrix expects (Bv, D) and (Bc, D), got {videos.shape}, {texts.shape}"
        )
    vn = _l2_normalize(videos, "video")
    cn = _l2_normalize(texts, "text")
    cos = ad.matmul(vn, ad.swap_last(cn))
    scale = ad.texp(ad._as_tensor(logit_scale))
    values = ad.mul(cos, scale)
    return SimilarityMatrix(values=values, scaled=True, logit_scale=float(scale.data))


def contrastive_loss(sim: SimilarityMatrix, targets) -> Tensor:
    """Cross-entropy over the similarity matrix.

    targets[i] is the text column matching video row i. The video-to-text
    direction is always used; the text-to-video direction is added (and the
    two averaged) only when targets form a bijection between rows and
    columns, i.e. a matched per-sample text batch.
    """
    values = sim.values
    n_videos, n_texts = values.shape
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != (n_videos,):
        raise ContractError(f"need one target per video row, got shape {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_texts):
        raise ContractError("target text column out of range")

    row_ls = ad.log_softmax(values, axis=-1)
    picked = ad.select_positions(row_ls, targets)
    row_loss = ad.neg(ad.tmean(picked))

    bijective = n_videos == n_texts and len(set(targets.tolist())) == n_videos
    if not bijective:
        return row_loss
    inverse = np.empty(n_texts, dtype=np.intp)
    inverse[targets] = np.arange(n_videos)
    col_ls = ad.log_softmax(values, axis=0)
    picked_cols = ad.select_positions(ad.swap_last(col_ls), inverse)
    col_loss = ad.neg(ad.tmean(picked_cols))
    return ad.mul(ad.add(row_loss, col_loss), 0.5)
