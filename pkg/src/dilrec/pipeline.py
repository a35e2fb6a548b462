"""End-to-end experiment pipeline: ingest, warm-up, retrain, evaluate, report.

Period roles: the model retrained at the end of period n is evaluated on
period n + 1 (first 10% feeds early stopping, last 90% is the test slice).
The first evaluated period is the validation period; the aggregate averages
the remaining test periods. Every run directory receives the effective
config echo, per-period checkpoints and snapshots, the JSON report, the TSV
export, and metric figures.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .checkpoint import write_checkpoint
from .config import ExperimentConfig, config_hash, format_config
from .data import k_core_filter, load_interactions, split_by_time
from .errors import DilrecError
from .evaluation import MetricsReport, aggregate_report, evaluate_period
from .graph import ACTIVE, INACTIVE, NEW, classify_nodes
from .models import ModelConfig
from .plots import save_report_figures
from .report import export_metrics
from .synthetic import SyntheticDriftSpec, generate_synthetic
from .training import (
    RNG_EVAL,
    TrainConfig,
    build_context,
    model_entries,
    retrain_period,
    seeded_rng,
    snapshot_entries,
    train_warmup,
)

logger = logging.getLogger(__name__)


def train_config_from(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        l2_coefficient=cfg.l2_coefficient,
        lam=cfg.lam,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        seed=cfg.seed,
        design=cfg.design,
        aggregation=cfg.aggregation,
        strategy=cfg.strategy,
        primary_k=cfg.primary_k,
        exclude_seen=cfg.exclude_seen,
    )


def model_config_from(cfg: ExperimentConfig) -> ModelConfig:
    model_cfg = ModelConfig(
        kind=cfg.model, layers=cfg.layers, dim=cfg.dim, leaky_relu_slope=cfg.leaky_relu_slope
    )
    model_cfg.validate()
    return model_cfg


def synthetic_spec_from(cfg: ExperimentConfig) -> SyntheticDriftSpec:
    return SyntheticDriftSpec(
        user_count=cfg.synth_users,
        item_count=cfg.synth_items,
        latent_dim=cfg.synth_latent_dim,
        phases=cfg.synth_phases,
        drift=cfg.synth_drift,
        interactions_per_period=cfg.synth_interactions_per_period,
        periods=cfg.synth_periods,
        seed=cfg.seed,
    )


def resolve_data_path(cfg: ExperimentConfig, out: Path) -> Path:
    """Existing data path, or the generated synthetic TSV inside the run dir."""
    if cfg.data_path:
        return Path(cfg.data_path)
    path = out / "interactions.tsv"
    generate_synthetic(synthetic_spec_from(cfg), path)
    return path


class _Stage:
    """Logs which pipeline stage (and period) an error escaped from."""

    def __init__(self, name: str, period: int | None = None):
        self.name = name
        self.period = period

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, DilrecError):
            where = self.name if self.period is None else f"{self.name} (period {self.period})"
            logger.error("pipeline stage '%s' failed: %s", where, exc)
        return False


def prepare_log(cfg: ExperimentConfig, out: Path):
    with _Stage("ingest"):
        data_path = resolve_data_path(cfg, out)
        log = load_interactions(data_path)
        log = k_core_filter(log, cfg.k_core)
        split = split_by_time(log, cfg.warmup_end, cfg.period_length, cfg.period_count)
    return log, split


def run_pipeline(cfg: ExperimentConfig) -> MetricsReport:
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    (out / "config.effective.txt").write_text(format_config(cfg), encoding="utf-8")

    log, split = prepare_log(cfg, out)
    model_cfg = model_config_from(cfg)
    train_cfg = train_config_from(cfg)

    with _Stage("warmup"):
        model, snapshot = train_warmup(log, split, model_cfg, train_cfg)
    write_checkpoint(out / "checkpoints" / "warmup.dilc", model_entries(model, -1))
    write_checkpoint(out / "snapshots" / "warmup.dilc", snapshot_entries(snapshot))

    period_metrics = []
    for n in range(cfg.period_count - 1):
        with _Stage("retrain", n):
            ctx = build_context(log, split, n, model, snapshot)
            activity = classify_nodes(log, split, n)
            logger.info(
                "period %d: users active/inactive/new = %d/%d/%d",
                n,
                activity.count(ACTIVE)[0],
                activity.count(INACTIVE)[0],
                activity.count(NEW)[0],
            )
            model, snapshot = retrain_period(ctx, train_cfg)
        write_checkpoint(out / "checkpoints" / f"period_{n}.dilc", model_entries(model, n))
        write_checkpoint(out / "snapshots" / f"period_{n}.dilc", snapshot_entries(snapshot))
        with _Stage("evaluate", n + 1):
            pm = evaluate_period(
                snapshot.user_final,
                snapshot.item_final,
                log,
                split,
                n + 1,
                cfg.eval_k,
                cfg.exclude_seen,
                seeded_rng(cfg.seed, RNG_EVAL, n + 1),
            )
        logger.info(
            "evaluated period %d: recall@%d = %.6f, ndcg@%d = %.6f (%d users)",
            n + 1, cfg.primary_k, pm.recall[cfg.primary_k], cfg.primary_k,
            pm.ndcg[cfg.primary_k], pm.users_evaluated,
        )
        period_metrics.append(pm)

    with _Stage("report"):
        test_indices = [pm.index for pm in period_metrics if pm.index >= 2]
        report = aggregate_report(
            period_metrics,
            cfg.primary_k,
            cfg.strategy,
            cfg.seed,
            config_hash(cfg),
            aggregate_indices=test_indices or None,
        )
        export_metrics(report, out)
        save_report_figures([report], out / "figures")
    return report
