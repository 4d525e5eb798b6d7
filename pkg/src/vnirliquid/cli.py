"""Command-line entry point: ``vnirliquid <subcommand> ...``.

Subcommands: synth, refs, train, ablate, predict, confusion.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import dataset, reports, synth
from .dataset import AugmentationPolicy, DataError, DatasetSplit, LabeledSample
from .labels import CONTAINER_CLASSES, CONTENT_CLASSES
from .model import Mode
from .serialization import ModelFormatError, load_model, save_model
from .spectra import Device, FeatureConfig, ReferenceSet, build_reference
from .training import (
    LR_SCHEDULES,
    NumericError,
    TrainConfig,
    evaluate,
    selection_score,
    train,
    train_one,
)

log = logging.getLogger("vnirliquid")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

FEATURE_CHOICES = [c.value for c in FeatureConfig]
ABLATIONS = ("Full608", "VisibleOnly576", "NirOnly32", "NoGradient304", "NoAugment", "NaiveDisjoint")


class ConfigError(ValueError):
    """Bad command-line configuration (exit code 2)."""


# --------------------------------------------------------------------------
# argument parsing


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be a comma-separated list of integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _add_data_args(p: argparse.ArgumentParser, labels: bool = True) -> None:
    p.add_argument("--dataset", nargs="+", type=Path, required=True,
                   help="dataset CSV file(s); visible and NIR rows are joined on sample_id")
    p.add_argument("--refs-vis", type=Path, required=True, help="reference CSV holding visible white/dark rows")
    p.add_argument("--refs-nir", type=Path, required=True, help="reference CSV holding NIR white/dark rows")


def _add_training_args(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--features", choices=FEATURE_CHOICES, default=FeatureConfig.FULL.value)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.HIERARCHICAL.value)
    p.add_argument("--no-augment", action="store_true", help="train on the original samples only")
    p.add_argument("--copies", type=int, default=AugmentationPolicy().copies,
                   help="scaled duplicates per training sample (default %(default)s)")
    p.add_argument("--seeds", type=_seed_list, default=d.seeds, help="comma-separated training seeds")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES, default=d.lr_schedule)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay, help="per-epoch factor for the exponential schedule")
    p.add_argument("--warmup", type=int, default=d.warmup_epochs, help="linear warm-up epochs")
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--split-manifest", type=Path, help="reuse the partitions of an existing split manifest")
    p.add_argument("--split-seed", type=int, default=0, help="seed of a fresh stratified split")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--report", choices=("csv", "json"), default="csv")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vnirliquid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with references")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples-per-cell", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=("none", "low", "moderate", "high"), default="moderate")
    p.add_argument("--no-jitter", action="store_true")
    p.add_argument("--opaque", action="store_true", help="make every container fully opaque")

    p = sub.add_parser("refs", help="reduce raw white/dark readings to per-channel medians")
    p.add_argument("--readings", type=Path, required=True, help="reference CSV with raw white/dark rows")
    p.add_argument("--out", type=Path, required=True, help="output CSV (one white and one dark row per device)")

    p = sub.add_parser("train", help="train with multi-seed selection on validation")
    _add_data_args(p)
    _add_training_args(p)
    p.add_argument("--augment-before-split", action="store_true",
                   help="augment the whole corpus, then split (leaks scaled copies of test samples into train)")

    p = sub.add_parser("ablate", help="run every ablation on one shared split")
    _add_data_args(p)
    _add_training_args(p)

    p = sub.add_parser("predict", help="classify one raw sample pair")
    p.add_argument("--model", type=Path, required=True)
    _add_data_args(p)
    p.add_argument("--sample-id", help="which sample to classify when the files hold several")

    p = sub.add_parser("confusion", help="confusion matrices of a saved model on one partition")
    p.add_argument("--model", type=Path, required=True)
    _add_data_args(p)
    p.add_argument("--split-manifest", type=Path, help="required unless --partition all")
    p.add_argument("--partition", choices=("train", "validation", "test", "all"), default="test")
    p.add_argument("--out", type=Path, required=True)
    return parser


# --------------------------------------------------------------------------
# shared plumbing


def _check_paths(args: argparse.Namespace) -> None:
    paths: list[Path] = list(getattr(args, "dataset", None) or [])
    for name in ("refs_vis", "refs_nir", "model", "split_manifest", "readings"):
        value = getattr(args, name, None)
        if value is not None:
            paths.append(value)
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ConfigError(f"path(s) not found: {', '.join(missing)}")
    out = getattr(args, "out", None)
    if out is not None and args.command != "refs":
        out.mkdir(parents=True, exist_ok=True)


def _train_config(args: argparse.Namespace, **overrides: Any) -> TrainConfig:
    try:
        return replace(
            TrainConfig(
                epochs=args.epochs,
                batch_size=args.batch,
                learning_rate=args.lr,
                lr_schedule=args.lr_schedule,
                lr_decay=args.lr_decay,
                warmup_epochs=args.warmup,
                seeds=args.seeds,
                mode=args.mode,
            ),
            **overrides,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _policy(args: argparse.Namespace) -> AugmentationPolicy:
    try:
        return AugmentationPolicy(copies=0 if args.no_augment else args.copies)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _references(args: argparse.Namespace) -> tuple[ReferenceSet, ReferenceSet]:
    return (
        dataset.load_references(args.refs_vis, Device.VISIBLE),
        dataset.load_references(args.refs_nir, Device.NIR),
    )


def _make_split(args: argparse.Namespace, samples: list[LabeledSample]) -> DatasetSplit:
    if args.split_manifest is not None:
        return dataset.apply_manifest(samples, dataset.load_manifest(args.split_manifest))
    try:
        return dataset.split(samples, seed=args.split_seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _meta(args: argparse.Namespace, config: TrainConfig, split: DatasetSplit) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "lr_schedule": config.lr_schedule,
        "batch_size": config.batch_size,
        "seeds": ",".join(map(str, config.seeds)),
        "split_seed": split.seed,
        "augment_copies": 0 if args.no_augment else args.copies,
    }
    if getattr(args, "augment_before_split", False):
        meta["augment_order"] = "before_split"
    if not args.no_timestamp:
        meta["generated_at"] = reports.timestamp()
    return meta


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    paths = synth.generate_corpus(
        args.out,
        samples_per_cell=args.samples_per_cell,
        seed=args.seed,
        noise=synth.NoiseModel.preset(args.noise),
        jitter=synth.Jitter.none() if args.no_jitter else synth.Jitter(),
        opaque_containers=args.opaque,
    )
    for p in (*paths.datasets, paths.references):
        print(p)
    return EXIT_OK


def cmd_refs(args: argparse.Namespace) -> int:
    rows = []
    for device in Device:
        refs = dataset.load_references(args.readings, device)
        rows.append((device, "white", refs.white_median))
        rows.append((device, "dark", refs.dark_median))
    width = max(d.n_channels for d in Device)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(",".join(["device", "kind", *dataset.channel_header(width)]) + "\n")
        for device, kind, values in rows:
            # shorter devices leave trailing channel cells empty
            cells = [repr(float(v)) for v in values] + [""] * (width - len(values))
            fh.write(",".join([device.value, kind, *cells]) + "\n")
    print(args.out)
    return EXIT_OK


def _write_train_reports(out: Path, args, config: TrainConfig, split: DatasetSplit, result) -> None:
    fmt = args.report
    meta = _meta(args, config, split)
    best = result.best
    test = evaluate(best, split.test) if split.test else None
    joint = config.mode is Mode.HIERARCHICAL
    name = "Hierarchical" if joint else "Naive"
    summary = [reports.summary_row(f"{name} (seed {result.best_seed})", test, joint)] if test else []
    reports.write_table(out, "summary", summary, fmt, meta)

    per_seed = []
    for run in sorted(result.runs, key=lambda r: r.seed):
        row: dict[str, Any] = {"seed": run.seed, "selected": run.seed == result.best_seed,
                               "selection_score": selection_score(run.validation, config.mode)}
        for prefix, m in (("val", run.validation), ("test", evaluate(run.model, split.test) if split.test else None)):
            if m is None:
                continue
            row[f"{prefix}_container_acc"] = m.container_acc
            row[f"{prefix}_content_acc"] = m.content_acc
            row[f"{prefix}_joint_acc"] = m.joint_acc if joint else None
        per_seed.append(row)
    reports.write_table(out, "per_seed", per_seed, fmt)
    reports.write_table(out, "trace", reports.trace_rows(result.trace), fmt)
    if test is not None:
        per_container = [{"container": k, "accuracy": v} for k, v in test.per_container_accuracy().items()]
        per_content = [{"content": k, "accuracy": v} for k, v in test.per_content_accuracy().items()]
        reports.write_table(out, "per_container", per_container, fmt)
        reports.write_table(out, "per_content", per_content, fmt)


def cmd_train(args: argparse.Namespace) -> int:
    config = _train_config(args)
    policy = _policy(args)
    refs_vis, refs_nir = _references(args)
    samples = dataset.load_dataset(args.dataset, refs_vis, refs_nir, args.features)
    if args.augment_before_split:
        if args.split_manifest is not None:
            raise ConfigError("--augment-before-split cannot reuse a split manifest")
        log.warning("augmenting before the split: test scores are inflated by near-duplicates")
        split = dataset.leaky_augment_then_split(samples, policy, seed=args.split_seed)
        policy = replace(policy, copies=0)
    else:
        split = _make_split(args, samples)
    if not split.validation:
        raise DataError("validation partition is empty; model selection needs it")
    log.info("split: %d train / %d validation / %d test", len(split.train), len(split.validation), len(split.test))

    def progress(rec):
        if rec.epoch % 10 == 0 or rec.epoch == config.epochs - 1:
            log.info("seed %d epoch %d loss %.4f val joint %.3f", rec.seed, rec.epoch, rec.loss, rec.val_joint_acc)

    result = train(split, policy, config, on_epoch=progress)
    save_model(result.best, args.out / "model.json")
    dataset.save_manifest(split, args.out / "split_manifest.json")
    _write_train_reports(args.out, args, config, split, result)
    summary = args.out / f"summary.{args.report}"
    print(summary.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _ablation_settings(name: str, args: argparse.Namespace) -> tuple[FeatureConfig, Mode, bool]:
    """(feature config, mode, augment) for an ablation row."""
    return {
        "Full608": (FeatureConfig.FULL, Mode.HIERARCHICAL, True),
        "VisibleOnly576": (FeatureConfig.VISIBLE_ONLY, Mode.HIERARCHICAL, True),
        "NirOnly32": (FeatureConfig.NIR_ONLY, Mode.HIERARCHICAL, True),
        "NoGradient304": (FeatureConfig.NO_GRADIENT, Mode.HIERARCHICAL, True),
        "NoAugment": (FeatureConfig.FULL, Mode.HIERARCHICAL, False),
        "NaiveDisjoint": (FeatureConfig.FULL, Mode.NAIVE, True),
    }[name]


def run_ablations(args: argparse.Namespace) -> tuple[list[dict], list[dict], DatasetSplit]:
    """Mean (over seeds) test metrics per ablation plus the per-seed rows."""
    refs_vis, refs_nir = _references(args)
    raw = dataset.read_raw_samples(args.dataset)
    by_config = {c: dataset.build_samples(raw, refs_vis, refs_nir, c) for c in FeatureConfig}
    # every ablation sees the same partitions
    split = _make_split(args, by_config[FeatureConfig.FULL])
    manifest = split.to_manifest()
    if args.no_augment:
        log.warning("--no-augment is ignored by ablate; the NoAugment row covers it")

    summary, per_seed = [], []
    for name in ABLATIONS:
        features, mode, augmented = _ablation_settings(name, args)
        config = _train_config(args, mode=mode)
        policy = AugmentationPolicy(copies=args.copies if augmented else 0)
        sub = dataset.apply_manifest(by_config[features], manifest)
        scores = []
        for seed in config.seeds:
            run = train_one(sub, policy, config, seed)
            m = evaluate(run.model, sub.test)
            joint = mode is Mode.HIERARCHICAL
            scores.append((m.container_acc, m.content_acc, m.joint_acc if joint else np.nan))
            per_seed.append({"ablation": name, "seed": seed, "input_length": features.length,
                             "container_acc": m.container_acc, "content_acc": m.content_acc,
                             "joint_acc": m.joint_acc if joint else None})
            log.info("%s seed %d: %s", name, seed, m.summary())
        arr = np.array(scores)
        summary.append({
            "model": name,
            "input_length": features.length,
            "container_acc": float(arr[:, 0].mean()),
            "content_acc": float(arr[:, 1].mean()),
            "joint_acc": None if mode is Mode.NAIVE else float(arr[:, 2].mean()),
            "joint_acc_median": None if mode is Mode.NAIVE else float(np.median(arr[:, 2])),
            "n_seeds": len(scores),
        })
    return summary, per_seed, split


def cmd_ablate(args: argparse.Namespace) -> int:
    _train_config(args)  # validate before the long run
    summary, per_seed, split = run_ablations(args)
    meta = _meta(args, _train_config(args), split)
    dataset.save_manifest(split, args.out / "split_manifest.json")
    # both formats: CSV for diffs, JSON for tooling
    for fmt in ("csv", "json"):
        reports.write_table(args.out, "ablation", summary, fmt, meta)
        reports.write_table(args.out, "ablation_per_seed", per_seed, fmt)
    print((args.out / f"ablation.{args.report}").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _check_model_input(model, features: FeatureConfig) -> None:
    if model.feature_dim != features.length:
        raise DataError(
            f"model expects {model.feature_dim} features but {features.label} gives {features.length}"
        )


def _model_features(model) -> FeatureConfig:
    try:
        features = FeatureConfig(model.feature_config)
    except ValueError:
        raise ModelFormatError("feature_config", f"unknown value {model.feature_config!r}") from None
    _check_model_input(model, features)
    return features


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    features = _model_features(model)
    refs_vis, refs_nir = _references(args)
    raw = dataset.read_raw_samples(args.dataset, require_labels=False)
    if args.sample_id is not None:
        raw = [r for r in raw if r.sample_id == args.sample_id]
        if not raw:
            raise DataError(f"sample_id {args.sample_id!r} not found")
    elif len(raw) != 1:
        raise ConfigError(f"dataset holds {len(raw)} samples; pick one with --sample-id")
    fv = dataset.featurize(raw[0], refs_vis, refs_nir, features)
    pred = model.predict(fv.values[None, :].astype(model.dtype))
    pc = pred.container_probs[0].astype(float)
    pb = pred.content_probs[0].astype(float)
    report = {
        "sample_id": raw[0].sample_id,
        "container": CONTAINER_CLASSES[int(pred.container_argmax[0])],
        "content": CONTENT_CLASSES[int(pred.content_argmax[0])],
        "container_probs": dict(zip(CONTAINER_CLASSES, pc.tolist())),
        "content_probs": dict(zip(CONTENT_CLASSES, pb.tolist())),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_confusion(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    features = _model_features(model)
    refs_vis, refs_nir = _references(args)
    samples = dataset.load_dataset(args.dataset, refs_vis, refs_nir, features)
    if args.partition == "all":
        chosen = samples
    else:
        if args.split_manifest is None:
            raise ConfigError("--split-manifest is required unless --partition all")
        chosen = dataset.apply_manifest(samples, dataset.load_manifest(args.split_manifest)).partition(args.partition)
    if not chosen:
        raise DataError(f"partition {args.partition!r} is empty")
    metrics = evaluate(model, chosen)
    for path in reports.write_confusion(args.out, f"{args.partition}_", metrics):
        print(path)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "refs": cmd_refs,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "predict": cmd_predict,
    "confusion": cmd_confusion,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on bad flags
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _check_paths(args)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, ModelFormatError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
