"""Mini-batch training, evaluation and k-fold cross-validation."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .core import dotin_forward
from .exceptions import DivergenceError, MetricError
from .graphs import GraphInstance, GraphSet, SyntheticSpec, kfold_split, make_synthetic, parse_tu_dataset
from .model import DotinModel
from .tasks import (
    classification_loss,
    embedding_distance,
    gen_ged_triplet,
    ged_margin_loss,
    multitask_loss,
    pair_auc,
    triplet_accuracy,
)
from .tensor import Adam, Tape

logger = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    batches_per_sec: float
    n_batches: int


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    distances: list[tuple[float, float]] = field(default_factory=list)
    n_graphs: int = 0

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)


@dataclass
class FoldResult:
    fold: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    history: list[EpochStats]
    test: MetricReport
    model: DotinModel | None = field(default=None, repr=False)


@dataclass
class RunReport:
    folds: list[FoldResult]

    def metric_names(self) -> list[str]:
        names: list[str] = []
        for f in self.folds:
            for k in f.test.values:
                if k not in names:
                    names.append(k)
        return names

    def fold_values(self, metric: str) -> np.ndarray:
        return np.array([f.test.values[metric] for f in self.folds if metric in f.test.values])

    @property
    def aggregate(self) -> dict[str, tuple[float, float]]:
        """metric -> (mean, population std) over folds."""
        return {m: (float(self.fold_values(m).mean()), float(self.fold_values(m).std())) for m in self.metric_names()}


def load_dataset(cfg: TrainConfig) -> GraphSet:
    """The synthetic motif set, or a TU dataset read from ``cfg.data_dir``."""
    if cfg.dataset == "synthetic":
        spec = SyntheticSpec(cfg.motifs, cfg.graphs_per_class, cfg.n_min, cfg.n_max, cfg.noise_p, cfg.n_labels)
        return make_synthetic(spec, cfg.data_seed)
    return parse_tu_dataset(os.path.join(cfg.data_dir, cfg.dataset) if os.path.isdir(os.path.join(cfg.data_dir, cfg.dataset)) else cfg.data_dir, cfg.dataset)


def build_model(cfg: TrainConfig, gset: GraphSet, seed: int | None = None) -> DotinModel:
    spec = cfg.model_spec(gset.num_features, max(gset.num_classes, 2))
    return DotinModel.init(spec, cfg.seed if seed is None else seed)


def graph_loss(model: DotinModel, g: GraphInstance, cfg: TrainConfig, rng: np.random.Generator | None, training: bool):
    """Per-graph objective: mean over the model's tasks."""
    res = dotin_forward(model, g, rng=rng, training=training)
    emb = res.embeddings
    losses = []
    triplet = None
    for k, task in enumerate(model.spec.tasks):
        e_k = T.take_rows(emb, [k])
        if task == "cls":
            losses.append(classification_loss(e_k, model.heads[k], g.label))
        else:
            if triplet is None:
                seed = int(rng.integers(2**31)) if rng is not None else 0
                triplet = gen_ged_triplet(g, cfg.k_p, cfg.k_n, seed)
                e_pos = dotin_forward(model, triplet.positive, rng=rng, training=training).embeddings
                e_neg = dotin_forward(model, triplet.negative, rng=rng, training=training).embeddings
            losses.append(ged_margin_loss(e_k, T.take_rows(e_pos, [k]), T.take_rows(e_neg, [k]), cfg.margin))
    return multitask_loss(losses)


def make_optimizer(model: DotinModel, cfg: TrainConfig) -> Adam:
    return Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_epoch(
    model: DotinModel,
    graphs: Sequence[GraphInstance],
    cfg: TrainConfig,
    optimizer: Adam,
    rng: np.random.Generator,
    epoch: int = 0,
) -> EpochStats:
    """One shuffled pass; one Adam step per mini-batch of ``cfg.batch_size`` graphs."""
    order = rng.permutation(len(graphs))
    batches = [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
    total = 0.0
    start = time.perf_counter()
    for b, idx in enumerate(batches):
        with Tape() as tape:
            losses = [graph_loss(model, graphs[i], cfg, rng, training=True) for i in idx]
            loss = multitask_loss(losses)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
        optimizer.zero_grad()
        tape.backward(loss)
        optimizer.step()
        total += value
    elapsed = time.perf_counter() - start
    return EpochStats(epoch, total / max(len(batches), 1), len(batches) / elapsed if elapsed > 0 else float("inf"), len(batches))


def fit(
    model: DotinModel,
    graphs: Sequence[GraphInstance],
    cfg: TrainConfig,
    seed: int | None = None,
    callback: Callable[[EpochStats], None] | None = None,
) -> list[EpochStats]:
    """Train for ``cfg.epochs`` epochs with early stopping on a train-loss plateau.

    With ``cfg.restore_best`` the model ends on the parameters it had after
    its lowest-loss epoch, so a late loss spike is not what gets evaluated.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    opt = make_optimizer(model, cfg)
    history: list[EpochStats] = []
    best, stale = math.inf, 0
    best_lowest, best_params = math.inf, None
    for epoch in range(cfg.epochs):
        stats = train_epoch(model, graphs, cfg, opt, rng, epoch)
        history.append(stats)
        if callback is not None:
            callback(stats)
        logger.debug("epoch %d loss %.5f", epoch, stats.loss)
        if cfg.restore_best and stats.loss < best_lowest:
            best_lowest, best_params = stats.loss, model.snapshot()
        if stats.loss < best - 1e-4:
            best, stale = stats.loss, 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    if best_params is not None and history[-1].loss > best_lowest:
        model.load_arrays(best_params)
    return history


def embed(model: DotinModel, graphs: Sequence[GraphInstance]) -> np.ndarray:
    """n×K×D array of task embeddings (no tape, no dropout)."""
    return np.stack([dotin_forward(model, g).embeddings.data for g in graphs])


def predict_logits(model: DotinModel, graphs: Sequence[GraphInstance], task: int | None = None) -> np.ndarray:
    k = model.task_index("cls")[0] if task is None else task
    head = model.heads[k]
    out = []
    for g in graphs:
        e = dotin_forward(model, g).embeddings
        out.append(head(T.take_rows(e, [k])).data.reshape(-1))
    return np.array(out)


def ged_distances(model: DotinModel, graphs: Sequence[GraphInstance], cfg: TrainConfig, seed: int = 0, task: int | None = None):
    """(d_pos, d_neg) per graph on triplets seeded by ``seed + index``."""
    k = model.task_index("ged")[0] if task is None else task
    out = []
    for i, g in enumerate(graphs):
        trip = gen_ged_triplet(g, cfg.k_p, cfg.k_n, seed + i)
        ea, ep, en = (dotin_forward(model, h).embeddings.data[k] for h in (trip.anchor, trip.positive, trip.negative))
        out.append((float(((ea - ep) ** 2).sum()), float(((ea - en) ** 2).sum())))
    return out


def evaluate(model: DotinModel, graphs: Sequence[GraphInstance], cfg: TrainConfig, seed: int = 12345) -> MetricReport:
    """Test metrics for every task the model carries; never touches parameters."""
    graphs = list(graphs)
    if not graphs:
        raise MetricError("empty evaluation set")
    report = MetricReport(n_graphs=len(graphs))
    tasks = model.spec.tasks
    if "cls" in tasks:
        logits = predict_logits(model, graphs)
        y = np.array([g.label for g in graphs])
        report.values["accuracy"] = float(np.mean(np.argmax(logits, axis=1) == y))
    if "ged" in tasks:
        d = ged_distances(model, graphs, cfg, seed)
        report.distances = d
        arr = np.array(d)
        sims = np.concatenate([-arr[:, 0], -arr[:, 1]])
        labels = np.concatenate([np.ones(len(arr), bool), np.zeros(len(arr), bool)])
        report.values["pair_auc"] = pair_auc(sims, labels)
        report.values["triplet_accuracy"] = triplet_accuracy(d)
    return report


def run_cross_validation(
    cfg: TrainConfig,
    gset: GraphSet,
    callback: Callable[[int, EpochStats], None] | None = None,
    folds: Sequence[int] | None = None,
    keep_models: bool = False,
) -> RunReport:
    """Fresh model per fold, trained on the other folds and scored on this one."""
    splits = kfold_split(gset, cfg.folds, cfg.seed, cfg.stratify)
    results = []
    for f, (train_idx, test_idx) in enumerate(splits):
        if folds is not None and f not in folds:
            continue
        fold_seed = cfg.seed * 1000 + f
        model = build_model(cfg, gset, seed=fold_seed)
        train = [gset.graphs[i] for i in train_idx]
        hist = fit(model, train, cfg, seed=fold_seed, callback=(lambda s, f=f: callback(f, s)) if callback else None)
        test = evaluate(model, [gset.graphs[i] for i in test_idx], cfg, seed=cfg.seed + 7919 * f)
        logger.info("fold %d: %s", f, test.values)
        results.append(FoldResult(f, train_idx, test_idx, hist, test, model if keep_models else None))
    return RunReport(results)


def write_report_csv(report: RunReport, path: str | os.PathLike) -> None:
    """Rows ``fold,epoch,task,metric,value``; test metrics use epoch ``-1``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "epoch", "task", "metric", "value"])
        for fr in report.folds:
            for st in fr.history:
                w.writerow([fr.fold, st.epoch, "train", "loss", repr(st.loss)])
            for metric, value in fr.test.values.items():
                task = "cls" if metric == "accuracy" else "ged"
                w.writerow([fr.fold, -1, task, metric, repr(value)])
        for metric, (mu, sd) in report.aggregate.items():
            task = "cls" if metric == "accuracy" else "ged"
            w.writerow(["mean", -1, task, metric, repr(mu)])
            w.writerow(["std", -1, task, metric, repr(sd)])


def format_summary(report: RunReport) -> str:
    lines = [f"{len(report.folds)} folds"]
    for metric, (mu, sd) in report.aggregate.items():
        lines.append(f"{metric}: {mu:.4f} ± {sd:.4f}")
    return "\n".join(lines)
