"""Command-line entry point: gen | train | eval | ablate | rollout.

Every command is deterministic given its config and seed; rerunning one
reproduces its output files byte for byte. Exit codes: 0 ok, 2 bad
config/spec, 3 training diverged, 4 missing artifact, 5 corrupt input.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ModelConfig
from .data import (
    SPLIT_VAL,
    SPLIT_ZEROSHOT,
    DatasetSpec,
    generate_dataset,
    load_dataset,
    read_clip,
)
from .errors import (
    CheckpointError,
    ClipFormatError,
    ClipShapeError,
    ClipTruncatedError,
    ConfigurationError,
    ContractError,
    DataSpecError,
    DegenerateInputError,
    DimensionError,
    InputTooLongError,
    MissingArtifactError,
    TrainingDivergedError,
)
from .inference import MODE_LEARNED, MODE_MANUAL, build_class_bank, evaluate
from .rollout import emit_heatmap, rollout
from .runconfig import RunConfig, load_run_config
from .text import Vocabulary
from .train import TrainSchedule, train_loop
from .vision import encode_video

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_MISSING = 4
EXIT_CORRUPT = 5

ABLATION_VARIANTS = (
    ("csc", {"enable_global": False, "enable_local": False, "enable_summary": False}),
    ("csc+g", {"enable_global": True, "enable_local": False, "enable_summary": False}),
    ("csc+g+l", {"enable_global": True, "enable_local": True, "enable_summary": False}),
    ("csc+g+l+s", {"enable_global": True, "enable_local": True, "enable_summary": True}),
)


def _resolved_config(args) -> RunConfig:
    run = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        run = run.with_seed(args.seed)
    return run


def _model_for_dataset(model: ModelConfig, dataset) -> ModelConfig:
    """Bind the data-dependent shape fields to the dataset at hand."""
    spec = dataset.spec
    return replace(
        model,
        frames=spec.frames,
        height=spec.height,
        width=spec.width,
        channels=spec.channels,
        vocab_size=len(dataset.vocab),
        num_classes=len(dataset.train_labels),
    )


def _schedule_overrides(args, schedule: TrainSchedule) -> TrainSchedule:
    fields = {}
    if getattr(args, "epochs", None) is not None:
        fields["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        fields["batch_size"] = args.batch_size
    if getattr(args, "lr", None) is not None:
        fields["initial_lr"] = args.lr
    return TrainSchedule.from_dict({**schedule.to_dict(), **fields}) if fields else schedule


def cmd_gen(args) -> int:
    run = _resolved_config(args)
    generate_dataset(run.data, args.out)
    print(f"dataset written to {args.out}")
    return EXIT_OK


def _train_once(dataset, model, schedule, out_dir):
    store, metrics_path, ckpt_path = train_loop(dataset, model, schedule, out_dir)
    report = evaluate(
        dataset.split("train"),
        build_class_bank(dataset.train_labels, store, model, dataset.vocab,
                         MODE_LEARNED, train_labels=dataset.train_labels),
        store, model,
    )
    return store, metrics_path, ckpt_path, report


def cmd_train(args) -> int:
    run = _resolved_config(args)
    dataset = load_dataset(args.data)
    model = _model_for_dataset(run.model, dataset)
    schedule = _schedule_overrides(args, run.train)
    _, metrics_path, ckpt_path, report = _train_once(dataset, model, schedule, args.out)
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    print(f"final train top1: {report['top1']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    store, model, extras = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    vocab = Vocabulary.from_tokens(extras["vocab"]) if extras["vocab"] else dataset.vocab
    train_labels = extras["labels"] or dataset.train_labels

    if args.split == SPLIT_ZEROSHOT:
        bank_labels = dataset.zeroshot_labels
        offset = dataset.train_label_count
    else:
        bank_labels = train_labels
        offset = 0
    bank = build_class_bank(bank_labels, store, model, vocab, args.mode,
                            train_labels=train_labels)
    items = [(clip, cid - offset) for clip, cid in dataset.split(args.split)]
    report = evaluate(items, bank, store, model)
    report["split"] = args.split
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = _resolved_config(args)
    dataset = load_dataset(args.data)
    base_model = _model_for_dataset(run.model, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    variants = list(ABLATION_VARIANTS)
    for mv in _parse_int_list(args.mv):
        variants.append((f"mv={mv}", {"global_prompts": mv}))
    for mc in _parse_int_list(args.mc):
        variants.append((f"mc={mc}", {"ctx_prompts": mc}))

    val_bank_labels = dataset.train_labels
    rows = ["config,seed,top1"]
    for name, overrides in variants:
        for offset in range(args.seeds):
            seed = run.seed + offset
            model = replace(base_model, **overrides)
            schedule = _schedule_overrides(
                args, TrainSchedule.from_dict({**run.train.to_dict(), "seed": seed})
            )
            run_dir = out_dir / f"{name.replace('+', '_')}_seed{seed}"
            store, _, _ = train_loop(dataset, model, schedule, run_dir)
            bank = build_class_bank(val_bank_labels, store, model, dataset.vocab,
                                    MODE_LEARNED, train_labels=dataset.train_labels)
            report = evaluate(dataset.split(SPLIT_VAL), bank, store, model)
            rows.append(f"{name},{seed},{report['top1']!r}")
            print(rows[-1])
    (out_dir / "ablation.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


def cmd_rollout(args) -> int:
    store, model, _ = load_checkpoint(args.ckpt)
    clip = read_clip(args.clip)
    if clip.frames.shape != (model.frames, model.height, model.width, model.channels):
        raise DimensionError(
            f"clip shape {clip.frames.shape} does not match the checkpoint's model"
        )
    _, trace = encode_video(clip, store, model)
    heatmap = rollout(trace, model)
    written = emit_heatmap(heatmap, clip, model, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def _parse_int_list(text):
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise ConfigurationError(f"expected a comma-separated integer list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptvid",
                                     description="prompt-tuned frozen video-text model")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config JSON; flags override it")
        p.add_argument("--seed", type=int, help="override every seeded substream")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train on a generated dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=SPLIT_VAL, choices=["train", SPLIT_VAL, SPLIT_ZEROSHOT])
    p.add_argument("--mode", default=MODE_LEARNED, choices=[MODE_LEARNED, MODE_MANUAL])
    p.add_argument("--out", help="write the report JSON here as well")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train the prompt-ablation grid")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--mv", help="extra global-prompt sweep, e.g. 2,4,8")
    p.add_argument("--mc", help="extra text-context sweep, e.g. 4,8,16")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("rollout", help="attention rollout heatmaps for one clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rollout)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, DataSpecError, ContractError, DimensionError,
            InputTooLongError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ClipFormatError, ClipShapeError, ClipTruncatedError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())
