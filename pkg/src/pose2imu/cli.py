"""Command-line entry point: ``pose2imu <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import ShapeError
from .engine.gradsuite import run_gradient_suite
from .evaluation import classification_report, test_mse
from .io_formats import (
    ConfigError,
    ExperimentConfig,
    FormatError,
    MMFIT_DEFAULT_DESCRIPTOR,
    MissingModalityError,
    load_config,
    load_descriptor,
    load_mmfit_session,
    read_checkpoint,
    read_report,
    read_window_table,
    write_checkpoint,
    write_report,
    write_window_table,
)
from .preprocessing import ARM_JOINTS, DataSplits, DegenerateSkeletonError, WindowSet, preprocess_session
from .synthdata import SPLITS, generate_dataset
from .training import DivergenceError, SeedRunError, run_multi_seed

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4, 5
TARGET_RATE = 100.0

log = logging.getLogger("pose2imu")


class CommandError(Exception):
    def __init__(self, category: str, code: int, message: str):
        super().__init__(message)
        self.category = category
        self.code = code


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise CommandError("config", EXIT_CONFIG, f"{args.command} needs --config")
    overrides = {}
    if args.method:
        overrides["method"] = args.method
    if args.seed is not None:
        overrides["train.seeds"] = (args.seed,)
    return load_config(args.config, overrides)


def _out_dir(args) -> Path:
    if not args.out:
        raise CommandError("usage", EXIT_USAGE, f"{args.command} needs --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _synth_splits(cfg: ExperimentConfig) -> DataSplits:
    s = cfg.synth
    return generate_dataset(
        windows_per_class=s.get("windows_per_class", (100, 25, 25)),
        seed=s.get("seed", 0),
        noise_std=s.get("noise_std", 0.05),
        duration_s=s.get("duration_s", cfg.window_size_s),
        rate=s.get("rate", TARGET_RATE),
    )


def _mmfit_splits(cfg: ExperimentConfig) -> DataSplits:
    descriptor = load_descriptor(cfg.dataset_descriptor) if cfg.dataset_descriptor else MMFIT_DEFAULT_DESCRIPTOR
    splits = descriptor.get("splits")
    if not splits or set(splits) != set(SPLITS):
        raise FormatError("descriptor must list sessions under splits.train/val/test")
    window = int(round(cfg.window_size_s * TARGET_RATE))
    stride = int(round(cfg.window_stride_s * TARGET_RATE))
    sets = []
    for split in SPLITS:
        windows = []
        for session in splits[split]:
            pose, sensor, labels = load_mmfit_session(Path(cfg.dataset_path) / session, descriptor, session)
            windows += preprocess_session(
                pose, sensor, labels, target_rate=TARGET_RATE, window=window, stride=stride, session=session
            )
        sets.append(WindowSet.from_windows(windows))
    return DataSplits(*sets, n_classes=len(descriptor["classes"]))


def _interchange_splits(cfg: ExperimentConfig) -> DataSplits:
    sets = [read_window_table(Path(cfg.dataset_path) / f"{split}.csv")[0] for split in SPLITS]
    n_classes = int(max(ws.labels.max() for ws in sets)) + 1
    return DataSplits(*sets, n_classes=n_classes)


def load_splits(cfg: ExperimentConfig) -> DataSplits:
    """Raw (unstandardised) splits for the configured dataset."""
    loader = {"synth": _synth_splits, "mmfit": _mmfit_splits, "interchange": _interchange_splits}
    return loader[cfg.dataset_kind](cfg)


def _write_splits(splits: DataSplits, out: Path) -> None:
    for split in SPLITS:
        write_window_table(out / f"{split}.csv", getattr(splits, split), TARGET_RATE, ARM_JOINTS)


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    _write_splits(_synth_splits(cfg), out)
    print(f"wrote {', '.join(f'{s}.csv' for s in SPLITS)} to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    _write_splits(load_splits(cfg), out)
    print(f"wrote windowed {cfg.dataset_kind} data to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    splits = load_splits(cfg).standardized()
    method = cfg.train.method

    def save(outcome):
        write_checkpoint(outcome.bundle, out / f"{method}_seed{outcome.result.seed}.ckpt")

    result = run_multi_seed(splits, cfg.train, parallel=args.parallel, on_outcome=save)
    report = out / f"report_{method}.csv"
    write_report(result, report)
    for metric, (mean, std) in result.aggregate().items():
        print(f"{method} {metric}: {mean:.4f} ± {std:.4f} (population std)")
    print(f"report: {report}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise CommandError("usage", EXIT_USAGE, "eval needs --checkpoint")
    cfg = _config(args)
    out = _out_dir(args)
    bundle = read_checkpoint(args.checkpoint)
    splits = load_splits(cfg).standardized()
    test = splits.test
    rep = classification_report(bundle, test.sensor, test.labels, splits.n_classes)
    mse_val = test_mse(bundle.regressor, test.pose, test.sensor) if bundle.regressor is not None else None
    path = out / "eval.csv"
    mse_text = "" if mse_val is None else f"{mse_val:.6f}"
    path.write_text(
        f"checkpoint,f1,accuracy,test_mse\n{Path(args.checkpoint).name},{rep['f1']:.6f},{rep['accuracy']:.6f},{mse_text}\n",
        encoding="utf-8",
    )
    print(f"f1 {rep['f1']:.4f} accuracy {rep['accuracy']:.4f} test_mse {mse_text or 'n/a'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok = True
    for dtype in (np.float64, np.float32):
        for r in run_gradient_suite(dtype, seed=args.seed or 0):
            ok &= r.passed
            status = "PASS" if r.passed else "FAIL"
            print(f"{status} {r.name:<24} {r.dtype:<8} err={r.worst_error:.2e} tol={r.tolerance:.0e}")
    return EXIT_OK if ok else 1


def cmd_report(args) -> int:
    """Summarise report files as ``mean ± std`` per method and metric."""
    paths = [Path(p) for p in args.reports]
    if not paths and args.out:
        paths = sorted(Path(args.out).glob("report_*.csv"))
    if not paths:
        raise CommandError("usage", EXIT_USAGE, "report needs report files or an --out directory holding them")
    lines = ["method,f1,accuracy,test_mse"]
    for path in paths:
        rows = read_report(path)
        by_label = {}
        for row in rows:
            if row["seed"] in ("mean", "std"):
                by_label.setdefault(row["method"], {})[row["seed"]] = row
        for method, agg in by_label.items():
            cells = [
                f"{agg['mean'][m]} ± {agg['std'][m]}" if agg["mean"][m] else "n/a"
                for m in ("f1", "accuracy", "test_mse")
            ]
            lines.append(",".join([method, *cells]))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "summary.csv").write_text(text, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value experiment file")
    common.add_argument("--out", help="directory for every artifact")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--method", choices=("joint", "baseline-real", "regression-first"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pose2imu", description="Pose-to-accelerometer synthesis and activity recognition.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common], help="window a dataset into interchange tables")
    sub.add_parser("synth", parents=[common], help="write the synthetic kinematic dataset")
    p = sub.add_parser("train", parents=[common], help="train all configured seeds and write a report")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="seeds to train concurrently")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every operation")
    p = sub.add_parser("report", parents=[common], help="summarise report files")
    p.add_argument("reports", nargs="*")
    return parser


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def _classify(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, SeedRunError):
        exc = exc.cause
    if isinstance(exc, CommandError):
        return exc.category, exc.code
    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, (DivergenceError, FloatingPointError)):
        return "divergence", EXIT_DIVERGENCE
    if isinstance(exc, (FormatError, MissingModalityError, DegenerateSkeletonError, ShapeError, OSError, ValueError)):
        return "data", EXIT_DATA
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        category, code = _classify(exc)
        message = " ".join(str(exc).split())
        print(f"error: {category}: {message}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
