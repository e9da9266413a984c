"""Command-line entry point: ``dotin {train,eval,bench,analyze,make-data}``.

Every subcommand reads an optional flat config file (``--config``) and
accepts any config key as a flag override (``--hidden 32``). Outputs go to
``<runs-dir>/<name>/``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 bad config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import STRATEGIES, config_fingerprint, export_attentiveness_ranks, sweep_drop_ratio, write_bench_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .config import CONFIG_KEYS, TrainConfig, load_config, parse_overrides, write_config
from .core import dotin_forward, write_drop_plans_csv
from .exceptions import ConfigError, DotinError
from .graphs import write_summary_csv, write_tu_dataset
from .trainer import evaluate, format_summary, load_dataset, run_cross_validation, write_report_csv

logger = logging.getLogger("dotin")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    g = p.add_argument_group("config keys (override the file)")
    for key, text in CONFIG_KEYS.items():
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V", help=text)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--runs-dir", default="runs", help="parent of run directories (default: runs)")
    p.add_argument("--name", help="run directory name (default: config fingerprint)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dotin", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="k-fold cross-validation; writes config.cfg, report.csv, checkpoint.bin")
    _add_config_flags(p)
    _add_run_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on the configured dataset")
    _add_config_flags(p)
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("bench", help="drop-ratio sweep; writes bench.csv")
    _add_config_flags(p)
    _add_run_flags(p)
    p.add_argument("--ratios", required=True, help="comma-separated drop ratios in [0, 1)")
    p.add_argument("--strategies", default=",".join(STRATEGIES), help="subset of dotin,random,none")
    p.add_argument("--seeds", default="0", help="comma-separated seeds, one run each")
    p.add_argument("--bench-folds", default="0", help="comma-separated CV folds scored per run")
    p.add_argument("--timing", action="store_true", help="also measure training batches/sec")
    p.add_argument("--timing-batches", type=int, default=30)
    p.add_argument("--timing-repeats", type=int, default=5)

    p = sub.add_parser("analyze", help="attentiveness ranks and drop plans from a checkpoint")
    _add_config_flags(p)
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--export-attentiveness", action="store_true", help="write attentiveness.csv (needs K >= 2)")
    p.add_argument("--drop-plans", action="store_true", help="write drop_plans.csv")
    p.add_argument("--limit", type=int, default=0, help="only the first N graphs (0 = all)")

    p = sub.add_parser("make-data", help="write the synthetic set as TU files plus summary.csv")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _overrides(args) -> dict[str, str]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _config(args, base: TrainConfig | None = None) -> TrainConfig:
    """Config file plus flag overrides; without a file, start from ``base`` (a checkpoint's config)."""
    overrides = _overrides(args)
    if base is not None and not args.config:
        return base.replace(**parse_overrides(overrides))
    return load_config(args.config, overrides)


def _run_dir(args, cfg: TrainConfig) -> Path:
    d = Path(args.runs_dir) / (args.name or config_fingerprint(cfg))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def cmd_train(args) -> int:
    cfg = _config(args)
    gset = load_dataset(cfg)
    out = _run_dir(args, cfg)
    write_config(cfg, out / "config.cfg")
    report = run_cross_validation(cfg, gset, keep_models=True)
    write_report_csv(report, out / "report.csv")
    save_checkpoint(report.folds[0].model, out / "checkpoint.bin", cfg)
    print(format_summary(report))
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, saved = load_checkpoint(args.checkpoint)
    cfg = _config(args, saved)
    gset = load_dataset(cfg)
    out = _run_dir(args, cfg)
    report = evaluate(model, gset.graphs, cfg)
    with open(out / "eval.csv", "w") as fh:
        fh.write("metric,value\n")
        for k, v in report.values.items():
            fh.write(f"{k},{v!r}\n")
    for k, v in report.values.items():
        print(f"{k}: {v:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    ratios = _floats(args.ratios)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    gset = load_dataset(cfg)
    out = _run_dir(args, cfg)
    write_config(cfg, out / "config.cfg")
    timing = {"n_batches": args.timing_batches, "repeats": args.timing_repeats} if args.timing else None
    records = sweep_drop_ratio(cfg, ratios, gset, strategies, _ints(args.seeds), _ints(args.bench_folds), timing)
    write_bench_csv(records, out / "bench.csv")
    for r in records:
        print(f"{r.strategy:>6} alpha={r.drop_ratio:.2f} seed={r.seed} acc={r.accuracy:.4f} flops={r.flops_per_batch} peak={r.peak_activation_elements} bps={r.batches_per_sec:.3f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, saved = load_checkpoint(args.checkpoint)
    cfg = _config(args, saved)
    gset = load_dataset(cfg)
    graphs = gset.graphs[: args.limit] if args.limit else gset.graphs
    out = _run_dir(args, cfg)
    if not (args.export_attentiveness or args.drop_plans):
        raise ConfigError("nothing to do: pass --export-attentiveness and/or --drop-plans")
    if args.export_attentiveness:
        rows, rho = export_attentiveness_ranks(model, graphs, out / "attentiveness.csv")
        print(f"{len(rows)} node rows; mean Spearman rho between tasks 1 and 2: {rho:.4f}")
    if args.drop_plans:
        write_drop_plans_csv([(g.name or str(i), dotin_forward(model, g)) for i, g in enumerate(graphs)], out / "drop_plans.csv")
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_make_data(args) -> int:
    cfg = _config(args)
    if cfg.dataset != "synthetic":
        raise ConfigError("make-data only generates the synthetic set (dataset = synthetic)")
    gset = load_dataset(cfg)
    out = Path(args.out)
    write_tu_dataset(gset, out, gset.name)
    write_summary_csv(gset, out / "summary.csv")
    print(f"{len(gset)} graphs written to {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "analyze": cmd_analyze, "make-data": cmd_make_data}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dotin: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DotinError, OSError, ValueError) as exc:
        print(f"dotin: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
