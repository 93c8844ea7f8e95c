"""Desk-scale video-text dual encoder with a frozen backbone adapted through
trainable prompts: summary/global/local vision prompts, learned text
contexts, contrastive training, zero-shot evaluation, and attention-rollout
visualization, all on a hand-built float64 autodiff core."""

from .config import ModelConfig
from .data import DatasetSpec, VideoClip
from .params import ParameterStore, count_trainable, init_model
from .train import TrainSchedule

__all__ = [
    "DatasetSpec",
    "ModelConfig",
    "ParameterStore",
    "TrainSchedule",
    "VideoClip",
    "count_trainable",
    "init_model",
]
