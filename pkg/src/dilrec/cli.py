"""Experiment command line.

Subcommands: ``synth`` (write a synthetic interaction TSV), ``ingest``
(validate and summarize a dataset), ``run`` (full pipeline), ``eval``
(score a stored snapshot on one period), ``export`` (re-emit TSV and
figures from report files). Exit codes: 0 success, 2 config error, 3 data
error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import read_checkpoint
from .config import parse_config, with_overrides
from .data import universe_at
from .errors import ConfigError, DataError, NumericalError
from .evaluation import evaluate_period
from .pipeline import prepare_log, run_pipeline
from .plots import save_report_figures
from .report import load_report, write_metrics_tsv
from .training import RNG_EVAL, seeded_rng, snapshot_from_entries

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dilrec", description=__doc__)
    parser.add_argument("--config", help="experiment config file (key = value lines)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the config output directory")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="generate the synthetic interaction TSV")
    sub.add_parser("ingest", help="load, filter, and summarize the dataset")
    sub.add_parser("run", help="run the full retraining pipeline")
    p_eval = sub.add_parser("eval", help="evaluate a stored snapshot on one period")
    p_eval.add_argument("--snapshot", required=True, help="snapshot checkpoint file")
    p_eval.add_argument("--period", type=int, required=True, help="period index to evaluate")
    p_export = sub.add_parser("export", help="write TSV and figures from report JSON files")
    p_export.add_argument("reports", nargs="+", help="report.json files")
    return parser


def _require_config(args) -> "ExperimentConfig":
    if not args.config:
        raise ConfigError(f"'{args.command}' needs --config")
    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    return with_overrides(cfg, seed=args.seed, out_dir=args.out)


def _cmd_synth(args) -> None:
    from .pipeline import resolve_data_path, synthetic_spec_from
    from .synthetic import generate_synthetic

    cfg = _require_config(args)
    if not cfg.synthetic:
        raise ConfigError("synth needs a config with synthetic = true")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "interactions.tsv"
    generate_synthetic(synthetic_spec_from(cfg), path)
    print(path)


def _cmd_ingest(args) -> None:
    cfg = _require_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log, split = prepare_log(cfg, out)
    print(f"records: {len(log)}")
    print(f"users: {log.n_users}  items: {log.n_items}")
    ws, we = split.warmup
    print(f"warmup: {we - ws} records")
    for p, (s, e) in enumerate(split.periods):
        users, items = universe_at(log, e)
        print(f"period {p}: {e - s} records, universe {users} users / {items} items")


def _cmd_run(args) -> None:
    cfg = _require_config(args)
    report = run_pipeline(cfg)
    print(f"report: {Path(cfg.out_dir) / 'report.json'}")
    print(f"aggregate recall@{cfg.primary_k}: {report.aggregate['recall']:.6f}")
    print(f"aggregate ndcg@{cfg.primary_k}: {report.aggregate['ndcg']:.6f}")


def _cmd_eval(args) -> None:
    cfg = _require_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log, split = prepare_log(cfg, out)
    snapshot = snapshot_from_entries(read_checkpoint(args.snapshot))
    pm = evaluate_period(
        snapshot.user_final,
        snapshot.item_final,
        log,
        split,
        args.period,
        cfg.eval_k,
        cfg.exclude_seen,
        seeded_rng(cfg.seed, RNG_EVAL, args.period),
    )
    for k in cfg.eval_k:
        print(f"period {args.period} recall@{k}: {pm.recall[k]:.6f}")
        print(f"period {args.period} ndcg@{k}: {pm.ndcg[k]:.6f}")
    print(f"users evaluated: {pm.users_evaluated} (unseen users {pm.unseen_users}, unseen items {pm.unseen_items})")


def _cmd_export(args) -> None:
    reports = [load_report(p) for p in args.reports]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / "metrics.tsv"
    write_metrics_tsv(reports, tsv)
    figures = save_report_figures(reports, out)
    print(tsv)
    for fig in figures:
        print(fig)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "synth": _cmd_synth,
        "ingest": _cmd_ingest,
        "run": _cmd_run,
        "eval": _cmd_eval,
        "export": _cmd_export,
    }
    try:
        handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
