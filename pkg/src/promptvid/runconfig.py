"""Run configuration: one JSON document driving every CLI command.

The document mirrors the model config, the training schedule, and the
dataset generation spec, plus a single seed that feeds all named random
substreams. Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ModelConfig
from .data import DatasetSpec
from .errors import ConfigurationError, DataSpecError
from .train import TrainSchedule

_SECTIONS = ("seed", "model", "data", "train")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = ModelConfig()
    data: DatasetSpec = DatasetSpec()
    train: TrainSchedule = TrainSchedule()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "data": self.data.to_dict(),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError("run config must be a JSON object")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown run config keys: {sorted(unknown)}")
        base = cls()
        seed = doc.get("seed", base.seed)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigurationError("seed must be an integer")
        merged_model = {**base.model.to_dict(), **doc.get("model", {})}
        merged_data = {**base.data.to_dict(), **doc.get("data", {})}
        merged_train = {**base.train.to_dict(), **doc.get("train", {})}
        try:
            model = ModelConfig.from_dict(merged_model)
            data = DatasetSpec.from_dict(merged_data)
            train = TrainSchedule.from_dict(merged_train)
        except TypeError as exc:
            raise ConfigurationError(f"bad run config value: {exc}") from exc
        return cls(seed=seed, model=model, data=data, train=train)

    def with_seed(self, seed: int) -> "RunConfig":
        """Propagate one seed into every seeded section."""
        return replace(
            self,
            seed=seed,
            data=DatasetSpec.from_dict({**self.data.to_dict(), "seed": seed}),
            train=TrainSchedule.from_dict({**self.train.to_dict(), "seed": seed}),
        )


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        return RunConfig.from_dict(doc)
    except DataSpecError as exc:
        raise ConfigurationError(str(exc)) from exc
