"""Warm-up training, per-period retraining strategies, and snapshotting.

One training epoch visits every current-window interaction once as the
positive; the historical and negative samples are redrawn fresh each epoch.
Early stopping watches Recall@k on the first 10% of the following period and
restores the best epoch's parameters. A converged model is frozen into a
:class:`ModelSnapshot` by one forward pass over its own period graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import InteractionLog, PeriodSplit, universe_at
from .engine import Tape, Tensor, backward, concat_rows, zero_grads
from .errors import DataError, NumericalError, ShapeError
from .extraction import (
    ExtractorParams,
    ModelSnapshot,
    extend_extractor,
    extract_over_table,
    init_extractor,
)
from .disentangle import fuse_initial
from .graph import BipartiteGraph, PeriodSampler, graph_for_records
from .losses import QuadBatch, dil_total_loss, plain_bpr_objective
from .models import (
    NGCF,
    LayerStack,
    ModelConfig,
    NgcfWeights,
    init_ngcf_weights,
    propagate,
)
from .optim import AdamState, adam_step
from .evaluation import validation_recall

logger = logging.getLogger(__name__)

INIT_SCALE = 0.05

STRATEGY_DIL = "dil"
STRATEGY_FINE_TUNE = "fine_tune"
STRATEGY_FULL_RETRAIN = "full_retrain"
STRATEGY_NO_RETRAIN = "no_retrain"
STRATEGIES = (STRATEGY_DIL, STRATEGY_FINE_TUNE, STRATEGY_FULL_RETRAIN, STRATEGY_NO_RETRAIN)

# rng stream tags, combined with the config seed
_RNG_WARMUP = 0
_RNG_PERIOD = 1
RNG_EVAL = 2


def seeded_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    l2_coefficient: float = 1e-4
    lam: float = 0.01
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    design: int = 1
    aggregation: str = "mean"
    strategy: str = STRATEGY_DIL
    dcorr_cap: int = 256
    primary_k: int = 20
    exclude_seen: bool = True

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.lam < 0:
            raise DataError("lambda must be non-negative")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise DataError("max_epochs must be >= 0")
        if self.design not in (1, 2):
            raise DataError("design must be 1 or 2")
        if self.strategy not in STRATEGIES:
            raise DataError(f"unknown strategy '{self.strategy}'")


class EarlyStopState:
    """Best validation metric, its parameter copy, and the stall counter."""

    def __init__(self):
        self.best_metric = -np.inf
        self.best_params: dict[str, np.ndarray] | None = None
        self.epochs_since_improvement = 0

    def update(self, metric: float, params: dict[str, Tensor]) -> bool:
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_params = {name: t.data.copy() for name, t in params.items()}
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement += 1
        return False

    def restore(self, params: dict[str, Tensor]) -> None:
        if self.best_params is None:
            return
        for name, t in params.items():
            t.data[...] = self.best_params[name]


@dataclass
class PlainModel:
    """Base recommender: one embedding table pair plus optional NGCF weights."""

    cfg: ModelConfig
    emb_users: Tensor
    emb_items: Tensor
    ngcf: NgcfWeights | None = None

    @property
    def user_rows(self) -> int:
        return int(self.emb_users.data.shape[0])

    @property
    def item_rows(self) -> int:
        return int(self.emb_items.data.shape[0])

    def named_params(self) -> dict[str, Tensor]:
        out = {"emb_users": self.emb_users, "emb_items": self.emb_items}
        if self.ngcf is not None:
            out.update(self.ngcf.named())
        return out

    def initial_features(self) -> Tensor:
        return concat_rows([self.emb_users, self.emb_items])


@dataclass
class DilModel:
    """Retrained recommender whose initial features fuse e_hist and e_new."""

    cfg: ModelConfig
    e_new_users: Tensor
    e_new_items: Tensor
    extractor: ExtractorParams
    ngcf: NgcfWeights | None = None

    @property
    def user_rows(self) -> int:
        return int(self.e_new_users.data.shape[0])

    @property
    def item_rows(self) -> int:
        return int(self.e_new_items.data.shape[0])

    def named_params(self) -> dict[str, Tensor]:
        out = {"e_new_users": self.e_new_users, "e_new_items": self.e_new_items}
        out.update(self.extractor.named())
        if self.ngcf is not None:
            out.update(self.ngcf.named())
        return out


TrainedModel = PlainModel | DilModel


@dataclass
class RetrainContext:
    """Everything one retraining round may consume.

    The graph covers the current window's interactions over the grown node
    universe; the snapshot and the sampler's historical index are only read
    by the ``dil`` strategy.
    """

    period_index: int
    log: InteractionLog
    split: PeriodSplit
    graph: BipartiteGraph
    prev_model: TrainedModel
    snapshot: ModelSnapshot
    user_count: int
    item_count: int

    @property
    def validation_period(self) -> int:
        return self.period_index + 1


def build_context(
    log: InteractionLog,
    split: PeriodSplit,
    period_index: int,
    prev_model: TrainedModel,
    snapshot: ModelSnapshot,
) -> RetrainContext:
    start, end = split.periods[period_index]
    user_count, item_count = universe_at(log, end)
    graph = graph_for_records(log, start, end, user_count, item_count)
    return RetrainContext(
        period_index=period_index,
        log=log,
        split=split,
        graph=graph,
        prev_model=prev_model,
        snapshot=snapshot,
        user_count=user_count,
        item_count=item_count,
    )


# ---------------------------------------------------------------------------
# forward passes


def _dil_tables(
    model: DilModel, user_layer_consts: list[Tensor], item_layer_consts: list[Tensor]
) -> tuple[Tensor, Tensor, Tensor]:
    e_hist_u = extract_over_table(user_layer_consts, model.extractor.e_extract_users, model.extractor)
    e_hist_i = extract_over_table(item_layer_consts, model.extractor.e_extract_items, model.extractor)
    h0 = concat_rows([fuse_initial(e_hist_u, model.e_new_users), fuse_initial(e_hist_i, model.e_new_items)])
    return e_hist_u, e_hist_i, h0


def _split_finals(stack: LayerStack, user_count: int) -> tuple[np.ndarray, np.ndarray]:
    finals = stack.final.data
    return finals[:user_count].copy(), finals[user_count:].copy()


def plain_finals(model: PlainModel, graph: BipartiteGraph) -> tuple[np.ndarray, np.ndarray]:
    stack = propagate(model.cfg, graph, model.initial_features(), model.ngcf)
    return _split_finals(stack, graph.user_count)


def dil_finals(
    model: DilModel,
    graph: BipartiteGraph,
    user_layer_consts: list[Tensor],
    item_layer_consts: list[Tensor],
) -> tuple[np.ndarray, np.ndarray]:
    _, _, h0 = _dil_tables(model, user_layer_consts, item_layer_consts)
    stack = propagate(model.cfg, graph, h0, model.ngcf)
    return _split_finals(stack, graph.user_count)


def take_snapshot(
    model: TrainedModel,
    graph: BipartiteGraph,
    period_index: int,
    prev_snapshot: ModelSnapshot | None = None,
) -> ModelSnapshot:
    """Freeze the model's per-layer and final representations on its graph."""
    if isinstance(model, PlainModel):
        h0 = model.initial_features()
    else:
        if prev_snapshot is None:
            raise ShapeError("take_snapshot: a fused model needs the previous snapshot")
        u_consts = [Tensor(a) for a in prev_snapshot.padded_layers("user", graph.user_count)]
        i_consts = [Tensor(a) for a in prev_snapshot.padded_layers("item", graph.item_count)]
        _, _, h0 = _dil_tables(model, u_consts, i_consts)
    stack = propagate(model.cfg, graph, h0, model.ngcf)
    nu = graph.user_count
    return ModelSnapshot(
        period_index=period_index,
        user_layers=[layer.data[:nu].copy() for layer in stack.layers],
        item_layers=[layer.data[nu:].copy() for layer in stack.layers],
        user_final=stack.final.data[:nu].copy(),
        item_final=stack.final.data[nu:].copy(),
    )


# ---------------------------------------------------------------------------
# fitting loop


def _fit(
    params: dict[str, Tensor],
    forward: Callable[[QuadBatch], Tensor],
    finals_fn: Callable[[], tuple[np.ndarray, np.ndarray]],
    sampler: PeriodSampler,
    log: InteractionLog,
    split: PeriodSplit,
    validation_period: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    what: str,
) -> None:
    names = list(params)
    tensors = [params[n] for n in names]
    adam = AdamState(tensors, names=names)
    stop = EarlyStopState()
    for epoch in range(cfg.max_epochs):
        for u, i, k, j in sampler.epoch_batches(rng, cfg.batch_size):
            with Tape() as tape:
                for t in tensors:
                    tape.watch(t)
                loss = forward(QuadBatch(u, i, k, j))
            if not np.isfinite(loss.data):
                raise NumericalError(f"{what}: non-finite loss at epoch {epoch}")
            backward(loss, tape)
            adam_step(tensors, [t.grad for t in tensors], adam, cfg.learning_rate)
            zero_grads(tensors)
        user_finals, item_finals = finals_fn()
        metric = validation_recall(
            user_finals, item_finals, log, split, validation_period, cfg.primary_k, cfg.exclude_seen
        )
        improved = stop.update(metric, params)
        logger.debug("%s epoch %d: val recall@%d = %.6f%s", what, epoch, cfg.primary_k, metric, " *" if improved else "")
        if stop.epochs_since_improvement >= cfg.patience:
            break
    stop.restore(params)


def _init_embeddings(rows: int, dim: int, rng: np.random.Generator) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, (rows, dim)), requires_grad=True)


def _grow_table(data: np.ndarray, rows: int, rng: np.random.Generator) -> Tensor:
    grown = np.empty((rows, data.shape[1]))
    grown[: data.shape[0]] = data
    grown[data.shape[0] :] = rng.uniform(-INIT_SCALE, INIT_SCALE, (rows - data.shape[0], data.shape[1]))
    return Tensor(grown, requires_grad=True)


def _fit_plain(
    model: PlainModel,
    graph: BipartiteGraph,
    sampler: PeriodSampler,
    log: InteractionLog,
    split: PeriodSplit,
    validation_period: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    what: str,
) -> None:
    weight_tensors = list(model.ngcf.named().values()) if model.ngcf is not None else []

    def forward(batch: QuadBatch) -> Tensor:
        stack = propagate(model.cfg, graph, model.initial_features(), model.ngcf)
        return plain_bpr_objective(
            batch,
            stack.final,
            graph.user_count,
            model.emb_users,
            model.emb_items,
            l2_coefficient=cfg.l2_coefficient,
            weight_tensors=weight_tensors,
        )

    _fit(
        model.named_params(),
        forward,
        lambda: plain_finals(model, graph),
        sampler,
        log,
        split,
        validation_period,
        cfg,
        rng,
        what,
    )


def train_warmup(
    log: InteractionLog, split: PeriodSplit, model_cfg: ModelConfig, cfg: TrainConfig
) -> tuple[PlainModel, ModelSnapshot]:
    """Batch-train the base model on the warm-up slice; plain BPR only.

    Early stopping watches the first 10% of period 0. With max_epochs == 0
    the initialized model is returned untouched, snapshot included.
    """
    warm_start, warm_end = split.warmup
    if warm_end <= warm_start:
        raise DataError("train_warmup: empty warm-up window")
    rng = seeded_rng(cfg.seed, _RNG_WARMUP)
    user_count, item_count = universe_at(log, warm_end)
    model = PlainModel(
        cfg=model_cfg,
        emb_users=_init_embeddings(user_count, model_cfg.dim, rng),
        emb_items=_init_embeddings(item_count, model_cfg.dim, rng),
        ngcf=init_ngcf_weights(model_cfg, rng) if model_cfg.kind == NGCF else None,
    )
    graph = graph_for_records(log, warm_start, warm_end, user_count, item_count)
    if cfg.max_epochs > 0:
        sampler = PeriodSampler(log, (warm_start, warm_end), 0, warm_end, user_count, item_count)
        _fit_plain(model, graph, sampler, log, split, 0, cfg, rng, "warmup")
    return model, take_snapshot(model, graph, period_index=-1)


def retrain_period(ctx: RetrainContext, cfg: TrainConfig) -> tuple[TrainedModel, ModelSnapshot]:
    """Retrain at the end of one period under the configured strategy."""
    cfg.validate()
    n = ctx.period_index
    start, end = ctx.split.periods[n]
    if end <= start:
        raise DataError(f"retrain_period: period {n} is empty")
    if cfg.strategy == STRATEGY_NO_RETRAIN:
        return ctx.prev_model, ctx.snapshot
    rng = seeded_rng(cfg.seed, _RNG_PERIOD, n)
    if cfg.strategy == STRATEGY_FINE_TUNE:
        return _retrain_fine_tune(ctx, cfg, rng)
    if cfg.strategy == STRATEGY_FULL_RETRAIN:
        return _retrain_full(ctx, cfg, rng)
    return _retrain_dil(ctx, cfg, rng)


def _retrain_fine_tune(ctx: RetrainContext, cfg: TrainConfig, rng) -> tuple[PlainModel, ModelSnapshot]:
    prev = ctx.prev_model
    if not isinstance(prev, PlainModel):
        raise ShapeError("fine_tune expects a plain previous model")
    model = PlainModel(
        cfg=prev.cfg,
        emb_users=_grow_table(prev.emb_users.data, ctx.user_count, rng),
        emb_items=_grow_table(prev.emb_items.data, ctx.item_count, rng),
        ngcf=prev.ngcf.copy() if prev.ngcf is not None else None,
    )
    start, end = ctx.split.periods[ctx.period_index]
    sampler = PeriodSampler(ctx.log, (start, end), 0, end, ctx.user_count, ctx.item_count)
    if cfg.max_epochs > 0:
        _fit_plain(
            model, ctx.graph, sampler, ctx.log, ctx.split, ctx.validation_period, cfg, rng,
            f"fine_tune[{ctx.period_index}]",
        )
    return model, take_snapshot(model, ctx.graph, ctx.period_index)


def _retrain_full(ctx: RetrainContext, cfg: TrainConfig, rng) -> tuple[PlainModel, ModelSnapshot]:
    prev_cfg = ctx.prev_model.cfg
    model = PlainModel(
        cfg=prev_cfg,
        emb_users=_init_embeddings(ctx.user_count, prev_cfg.dim, rng),
        emb_items=_init_embeddings(ctx.item_count, prev_cfg.dim, rng),
        ngcf=init_ngcf_weights(prev_cfg, rng) if prev_cfg.kind == NGCF else None,
    )
    _, end = ctx.split.periods[ctx.period_index]
    graph = graph_for_records(ctx.log, 0, end, ctx.user_count, ctx.item_count)
    sampler = PeriodSampler(ctx.log, (0, end), 0, end, ctx.user_count, ctx.item_count)
    if cfg.max_epochs > 0:
        _fit_plain(
            model, graph, sampler, ctx.log, ctx.split, ctx.validation_period, cfg, rng,
            f"full_retrain[{ctx.period_index}]",
        )
    return model, take_snapshot(model, graph, ctx.period_index)


def _retrain_dil(ctx: RetrainContext, cfg: TrainConfig, rng) -> tuple[DilModel, ModelSnapshot]:
    snapshot = ctx.snapshot
    model_cfg = ctx.prev_model.cfg
    if snapshot.levels != model_cfg.layers + 1:
        raise DataError(
            f"snapshot holds {snapshot.levels} representation levels but the model "
            f"config implies {model_cfg.layers + 1}"
        )
    # e_new starts from the previous final representations; new nodes get noise
    e_new_users = _grow_table(snapshot.user_final, ctx.user_count, rng)
    e_new_items = _grow_table(snapshot.item_final, ctx.item_count, rng)
    prev = ctx.prev_model
    if isinstance(prev, DilModel):
        extractor = extend_extractor(prev.extractor, ctx.user_count, ctx.item_count, rng)
        if extractor.design != cfg.design or extractor.aggregation != cfg.aggregation:
            raise DataError("extractor design/aggregation changed between periods")
    else:
        extractor = init_extractor(
            cfg.design, cfg.aggregation, snapshot.levels, model_cfg.dim,
            ctx.user_count, ctx.item_count, rng,
        )
    model = DilModel(
        cfg=model_cfg,
        e_new_users=e_new_users,
        e_new_items=e_new_items,
        extractor=extractor,
        ngcf=prev.ngcf.copy() if prev.ngcf is not None else None,
    )
    u_consts = [Tensor(a) for a in snapshot.padded_layers("user", ctx.user_count)]
    i_consts = [Tensor(a) for a in snapshot.padded_layers("item", ctx.item_count)]
    start, end = ctx.split.periods[ctx.period_index]
    sampler = PeriodSampler(ctx.log, (start, end), start, end, ctx.user_count, ctx.item_count)
    weight_tensors = extractor.weight_tensors()
    if model.ngcf is not None:
        weight_tensors = weight_tensors + list(model.ngcf.named().values())

    def forward(batch: QuadBatch) -> Tensor:
        e_hist_u, e_hist_i, h0 = _dil_tables(model, u_consts, i_consts)
        stack = propagate(model.cfg, ctx.graph, h0, model.ngcf)
        return dil_total_loss(
            batch,
            stack.final,
            ctx.user_count,
            e_hist_u,
            e_hist_i,
            model.e_new_users,
            model.e_new_items,
            lam=cfg.lam,
            l2_coefficient=cfg.l2_coefficient,
            e_extract_users=extractor.e_extract_users,
            e_extract_items=extractor.e_extract_items,
            weight_tensors=weight_tensors,
            dcorr_rng=rng,
            dcorr_cap=cfg.dcorr_cap,
        )

    if cfg.max_epochs > 0:
        _fit(
            model.named_params(),
            forward,
            lambda: dil_finals(model, ctx.graph, u_consts, i_consts),
            sampler,
            ctx.log,
            ctx.split,
            ctx.validation_period,
            cfg,
            rng,
            f"dil[{ctx.period_index}]",
        )
    return model, take_snapshot(model, ctx.graph, ctx.period_index, prev_snapshot=snapshot)


# ---------------------------------------------------------------------------
# checkpoint entry (de)serialization

_MODEL_KIND_IDS = {"lightgcn": 0.0, "ngcf": 1.0}
_AGG_IDS = {"sum": 0.0, "mean": 1.0, "concat": 2.0}


def model_entries(model: TrainedModel, period_index: int) -> dict[str, np.ndarray]:
    is_dil = isinstance(model, DilModel)
    design = model.extractor.design if is_dil else 0
    agg = _AGG_IDS[model.extractor.aggregation] if is_dil else 0.0
    meta = np.array(
        [
            _MODEL_KIND_IDS[model.cfg.kind],
            float(model.cfg.layers),
            float(model.cfg.dim),
            model.cfg.leaky_relu_slope,
            1.0 if is_dil else 0.0,
            float(design),
            agg,
            float(period_index),
            float(model.user_rows),
            float(model.item_rows),
        ]
    )
    entries = {"meta": meta}
    for name, tensor in model.named_params().items():
        entries[name] = tensor.data
    return entries


def model_from_entries(entries: dict[str, np.ndarray]) -> tuple[TrainedModel, int]:
    meta = entries["meta"]
    kind = "ngcf" if int(meta[0]) else "lightgcn"
    cfg = ModelConfig(kind=kind, layers=int(meta[1]), dim=int(meta[2]), leaky_relu_slope=float(meta[3]))
    is_dil = bool(int(meta[4]))
    period_index = int(meta[7])

    def tensor(name: str) -> Tensor:
        return Tensor(entries[name], requires_grad=True)

    ngcf = None
    if kind == "ngcf":
        ngcf = NgcfWeights(
            w1=[tensor(f"ngcf_w1_{l}") for l in range(cfg.layers)],
            b1=[tensor(f"ngcf_b1_{l}") for l in range(cfg.layers)],
            w2=[tensor(f"ngcf_w2_{l}") for l in range(cfg.layers)],
            b2=[tensor(f"ngcf_b2_{l}") for l in range(cfg.layers)],
        )
    if not is_dil:
        model: TrainedModel = PlainModel(cfg, tensor("emb_users"), tensor("emb_items"), ngcf)
        return model, period_index
    design = int(meta[5])
    aggregation = {0.0: "sum", 1.0: "mean", 2.0: "concat"}[float(meta[6])]
    levels = cfg.layers + 1
    extractor = ExtractorParams(
        design,
        aggregation,
        tensor("e_extract_users"),
        tensor("e_extract_items"),
        pos=[tensor(f"iem_pos_{l}") for l in range(levels)] if design == 1 else [],
        w=[tensor(f"iem_w_{l}") for l in range(levels)] if design == 2 else [],
        proj=tensor("iem_proj") if "iem_proj" in entries else None,
    )
    model = DilModel(cfg, tensor("e_new_users"), tensor("e_new_items"), extractor, ngcf)
    return model, period_index


def snapshot_entries(snapshot: ModelSnapshot) -> dict[str, np.ndarray]:
    entries = {
        "meta": np.array([float(snapshot.levels), float(snapshot.period_index)]),
        "user_final": snapshot.user_final,
        "item_final": snapshot.item_final,
    }
    for l, arr in enumerate(snapshot.user_layers):
        entries[f"user_layer_{l}"] = arr
    for l, arr in enumerate(snapshot.item_layers):
        entries[f"item_layer_{l}"] = arr
    return entries


def snapshot_from_entries(entries: dict[str, np.ndarray]) -> ModelSnapshot:
    levels = int(entries["meta"][0])
    return ModelSnapshot(
        period_index=int(entries["meta"][1]),
        user_layers=[entries[f"user_layer_{l}"] for l in range(levels)],
        item_layers=[entries[f"item_layer_{l}"] for l in range(levels)],
        user_final=entries["user_final"],
        item_final=entries["item_final"],
    )
