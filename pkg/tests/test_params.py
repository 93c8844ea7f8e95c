"""Parameter store: init determinism, freeze masks, counting, checkpoints."""

import json

import numpy as np
import pytest

from promptvid.checkpoint import load_checkpoint, save_checkpoint
from promptvid.config import ModelConfig
from promptvid.errors import (
    CheckpointManifestError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    ConfigurationError,
    MissingArtifactError,
)
from promptvid.params import count_trainable, init_model, trainable_count_formula

TOY = ModelConfig(
    frames=4, height=16, width=16, patch=8, dim=16, embed_dim=16,
    vision_layers=2, vision_heads=2, text_dim=16, text_layers=2, text_heads=2,
    ctx_len=12, vocab_size=10, global_prompts=2, ctx_prompts=4, num_classes=8,
)


def random_config(rng) -> ModelConfig:
    heads = int(rng.choice([1, 2, 4]))
    dim = heads * int(rng.integers(2, 9))
    theads = int(rng.choice([1, 2]))
    tdim = theads * int(rng.integers(2, 9))
    mc = int(rng.integers(0, 5))
    return ModelConfig(
        frames=int(rng.integers(1, 6)),
        height=16, width=16, patch=8,
        dim=dim, vision_heads=heads,
        embed_dim=int(rng.integers(2, 12)),
        vision_layers=int(rng.integers(1, 5)),
        text_dim=tdim, text_heads=theads,
        text_layers=int(rng.integers(1, 4)),
        ctx_len=mc + 2 + int(rng.integers(1, 6)),
        vocab_size=int(rng.integers(4, 30)),
        global_prompts=int(rng.integers(1, 6)),
        ctx_prompts=mc,
        num_classes=int(rng.integers(1, 12)),
        text_mode=str(rng.choice(["uc", "csc"])),
        enable_summary=bool(rng.integers(0, 2)),
        enable_local=bool(rng.integers(0, 2)),
        enable_global=bool(rng.integers(0, 2)) and True,
    )


class TestInit:
    def test_deterministic(self):
        a = init_model(TOY, seed=7)
        b = init_model(TOY, seed=7)
        assert a.names() == b.names()
        for name in a.names():
            assert a[name].data.tobytes() == b[name].data.tobytes()
            assert a.frozen(name) == b.frozen(name)

    def test_seed_changes_values(self):
        a = init_model(TOY, seed=0)
        b = init_model(TOY, seed=1)
        assert a["vision.cls"].data.tobytes() != b["vision.cls"].data.tobytes()

    def test_disabled_global_has_no_entries(self):
        cfg = ModelConfig(**{**TOY.to_dict(), "enable_global": False})
        store = init_model(cfg, 0)
        assert not [n for n in store.names() if n.endswith(".global")]

    def test_freeze_partition(self):
        store = init_model(TOY, 0)
        trainable = set(store.trainable_names())
        frozen = set(store.frozen_names())
        assert trainable | frozen == set(store.names())
        assert not trainable & frozen
        assert all(n.startswith(("prompt.", "logit_scale")) for n in trainable)
        assert all(n.startswith(("vision.", "text.")) for n in frozen)

    def test_requires_grad_matches_flag(self):
        store = init_model(TOY, 0)
        for name in store.names():
            assert store[name].requires_grad == (not store.frozen(name))

    def test_bad_config_type(self):
        with pytest.raises(ConfigurationError):
            init_model({"dim": 4}, 0)


class TestCounting:
    def test_toy_matches_hand_formula(self):
        # L_v * [(D^2+D) + 4(D^2+D) + 4D + Mv*D + T*D] + Mc*Dt*Nc + 1
        # = 2 * [272 + 1088 + 64 + 32 + 64] + 4*16*8 + 1 = 3553
        store = init_model(TOY, 0)
        assert count_trainable(store) == 3553
        assert trainable_count_formula(TOY) == 3553

    def test_everything_disabled_leaves_logit_scale(self):
        cfg = ModelConfig(**{
            **TOY.to_dict(),
            "enable_summary": False, "enable_local": False, "enable_global": False,
            "ctx_prompts": 0,
        })
        store = init_model(cfg, 0)
        assert count_trainable(store) == 1
        assert trainable_count_formula(cfg) == 1

    def test_formula_over_random_configs(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            cfg = random_config(rng)
            store = init_model(cfg, int(rng.integers(0, 1000)))
            assert count_trainable(store) == trainable_count_formula(cfg), cfg

    def test_unified_context_is_class_independent(self):
        uc = ModelConfig(**{**TOY.to_dict(), "text_mode": "uc"})
        csc = ModelConfig(**{**TOY.to_dict(), "text_mode": "csc"})
        diff = trainable_count_formula(csc) - trainable_count_formula(uc)
        assert diff == (csc.num_classes - 1) * csc.ctx_prompts * csc.text_dim


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        store = init_model(TOY, 3)
        save_checkpoint(store, TOY, tmp_path / "ckpt", vocab_tokens=["<pad>", "<unk>", "<eos>", "a"],
                        labels=["x", "y"])
        loaded, config, extras = load_checkpoint(tmp_path / "ckpt")
        assert config == TOY
        assert loaded.names() == store.names()
        for name in store.names():
            assert loaded[name].data.tobytes() == store[name].data.tobytes()
            assert loaded.frozen(name) == store.frozen(name)
        assert extras["vocab"] == ["<pad>", "<unk>", "<eos>", "a"]
        assert extras["labels"] == ["x", "y"]

    def test_save_twice_byte_identical(self, tmp_path):
        store = init_model(TOY, 3)
        save_checkpoint(store, TOY, tmp_path / "a")
        save_checkpoint(store, TOY, tmp_path / "b")
        assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
        assert (tmp_path / "a/weights.bin").read_bytes() == (tmp_path / "b/weights.bin").read_bytes()

    def test_missing_path(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_checkpoint(tmp_path / "nope")

    def test_corrupt_manifest(self, tmp_path):
        path = save_checkpoint(init_model(TOY, 0), TOY, tmp_path / "ckpt")
        (path / "manifest.json").write_text("{not json")
        with pytest.raises(CheckpointManifestError):
            load_checkpoint(path)

    def test_missing_key(self, tmp_path):
        path = save_checkpoint(init_model(TOY, 0), TOY, tmp_path / "ckpt")
        doc = json.loads((path / "manifest.json").read_text())
        del doc["tensors"]
        (path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(CheckpointManifestError):
            load_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        path = save_checkpoint(init_model(TOY, 0), TOY, tmp_path / "ckpt")
        doc = json.loads((path / "manifest.json").read_text())
        doc["tensors"][0]["shape"] = [1, 2, 3]
        (path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(path)

    def test_truncated_blob(self, tmp_path):
        path = save_checkpoint(init_model(TOY, 0), TOY, tmp_path / "ckpt")
        blob = (path / "weights.bin").read_bytes()
        (path / "weights.bin").write_bytes(blob[:-1])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)


class TestConfigValidation:
    def test_patch_divides_frame(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(**{**TOY.to_dict(), "height": 5, "width": 5, "patch": 2})

    def test_heads_divide_width(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(**{**TOY.to_dict(), "dim": 10, "vision_heads": 3})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict({**TOY.to_dict(), "bogus": 1})

    def test_ctx_room_for_label(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(**{**TOY.to_dict(), "ctx_prompts": 11, "ctx_len": 12})

    def test_round_trip_dict(self):
        assert ModelConfig.from_dict(TOY.to_dict()) == TOY
