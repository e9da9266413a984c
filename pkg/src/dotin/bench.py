"""Cost model, throughput timing, drop-ratio sweeps and attentiveness-rank export.

FLOPs and activation element counts are exact integers from a static cost
model that follows the forward pass stage by stage; they never sample the
running code. Conventions:

* an ``m×k`` by ``k×n`` matmul costs ``2mkn``;
* a softmax over ``e`` entries costs ``4e`` (shift, exp, sum, divide);
* any other elementwise op costs one per element; sorting is free.

Counts cover one evaluation-mode forward pass (no dropout). Per-stage row
counts follow :func:`~dotin.core.remaining_count`.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import statistics
import time
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata, spearmanr

from .config import TrainConfig
from .core import drop_count, per_task_attentiveness, remaining_count
from .exceptions import SpecError
from .graphs import GraphInstance, GraphSet
from .model import DotinModel, ModelSpec
from .tasks import multitask_loss
from .tensor import Tape
from .trainer import graph_loss, make_optimizer, run_cross_validation

SOFTMAX_COST = 4


def linear_flops(n: int, d_in: int, d_out: int) -> int:
    """Dense ``n×d_in @ d_in×d_out``."""
    return 2 * n * d_in * d_out


@dataclass
class StageCost:
    """Cost of one propagation layer (aggregate, optional drop, transform).

    ``matmul_flops`` is the dense-matmul share of ``flops``.
    """

    rows_in: int
    rows_out: int
    dropped: int
    flops: int
    matmul_flops: int
    activations: int


def _spec(model) -> ModelSpec:
    return model.spec if isinstance(model, DotinModel) else model


def stage_costs(model: DotinModel | ModelSpec, n_nodes: int) -> list[StageCost]:
    """Per-layer FLOPs and saved activation elements for a graph of ``n_nodes`` raw nodes."""
    spec = _spec(model)
    d, h, da, k = spec.hidden, spec.heads, spec.d_att, spec.k
    n = n_nodes
    out = []
    for l in range(spec.n_layers):
        r = n + k
        mm = 0
        other = r  # self loops on the diagonal
        acts = r * r  # adjacency with self loops
        if spec.backbone == "gat":
            mm += h * (2 * linear_flops(r, d, da) + 2 * r * r * da + 2 * r * r * d)
            other += h * (r * r + SOFTMAX_COST * r * r)
            acts += h * (2 * r * da + 2 * r * r + r * d)
        else:
            # degree, two diagonal scalings, then Ã x
            mm += 2 * r * r * d
            other += 3 * r * r
            acts += 2 * r * r + r * d
        alpha = spec.alphas[l]
        m = drop_count(n, alpha) if spec.drop_strategy != "none" and alpha > 0 else 0
        if m:
            r_out = remaining_count(n, alpha, k)
            kept = n - m
            if spec.backbone == "gat":
                other += h * k * n
            else:
                mm += 2 * linear_flops(1, d, d) + 2 * n * d
                other += k * d
                acts += 3 * d + n
            other += SOFTMAX_COST * n + SOFTMAX_COST * m
            mm += h * 2 * m * d  # fusion
            other += 2 * kept * m + SOFTMAX_COST * (kept + 1) ** 2  # rewire
            acts += n + m + h * (d + r_out * d) + 2 * (kept + 1) ** 2 + r_out * r_out
        else:
            r_out = r
        width = da if spec.backbone == "gat" else d
        heads = h if spec.backbone == "gat" else 1
        mm += heads * linear_flops(r_out, d, width)
        other += heads * r_out * width
        acts += heads * 2 * r_out * width + (r_out * d if heads > 1 else 0)
        out.append(StageCost(r, r_out, m, int(mm + other), int(mm), int(acts)))
        n = r_out - k
    return out


def _graphs(graph_or_graphs) -> list[GraphInstance]:
    if isinstance(graph_or_graphs, GraphInstance):
        return [graph_or_graphs]
    return list(graph_or_graphs)


def _input_activations(spec: ModelSpec, n: int) -> int:
    """Raw features, projected features, augmented features and head logits."""
    acts = n * spec.in_features + n * spec.hidden + (n + spec.k) * spec.hidden
    return acts + sum(spec.n_classes for t in spec.tasks if t == "cls")


def _head_flops(spec: ModelSpec) -> tuple[int, int]:
    """(matmul, other) FLOPs of the classification heads."""
    n_cls = sum(t == "cls" for t in spec.tasks)
    return n_cls * linear_flops(1, spec.hidden, spec.n_classes), n_cls * spec.n_classes


def flop_count(model: DotinModel | ModelSpec, graph_or_graphs, matmul_only: bool = False) -> int:
    """Forward FLOPs for one graph, or summed over a batch of graphs.

    ``matmul_only`` restricts the count to dense matmuls.
    """
    spec = _spec(model)
    head_mm, head_other = _head_flops(spec)
    total = 0
    for g in _graphs(graph_or_graphs):
        total += linear_flops(g.num_nodes, spec.in_features, spec.hidden) + head_mm
        stages = stage_costs(spec, g.num_nodes)
        if matmul_only:
            total += sum(s.matmul_flops for s in stages)
        else:
            total += head_other + sum(s.flops for s in stages)
    return int(total)


def _peak_one(spec: ModelSpec, n: int) -> int:
    inp = _input_activations(spec, n)
    stages = [inp] + [s.activations for s in stage_costs(spec, n)]
    # forward keeps every stage alive; backward of stage l adds its gradients
    prefix = np.cumsum(stages)
    return int(max(p + a for p, a in zip(prefix, stages)))


def _saved_total(spec: ModelSpec, n: int) -> int:
    return _input_activations(spec, n) + sum(s.activations for s in stage_costs(spec, n))


def peak_activation_elements(model: DotinModel | ModelSpec, graph_or_graphs) -> int:
    """Peak live activation elements over one forward+backward.

    Graphs of a batch are processed one after another under one tape, so
    every graph but the last is fully saved when the last one peaks.
    """
    spec = _spec(model)
    graphs = _graphs(graph_or_graphs)
    if not graphs:
        return 0
    held = sum(_saved_total(spec, g.num_nodes) for g in graphs[:-1])
    return int(held + _peak_one(spec, graphs[-1].num_nodes))


def time_training(
    model: DotinModel,
    graphs: Sequence[GraphInstance],
    cfg: TrainConfig,
    n_batches: int = 30,
    repeats: int = 5,
    warmup: int = 2,
    seed: int = 0,
) -> float:
    """Median over ``repeats`` of training batches/sec (forward, backward, Adam step).

    Works on a copy, so ``model`` is left untouched. Each repeat times
    ``n_batches`` batches after ``warmup`` untimed ones.
    """
    model = copy.deepcopy(model)
    rng = np.random.default_rng(seed)
    opt = make_optimizer(model, cfg)
    graphs = list(graphs)

    def step():
        idx = rng.choice(len(graphs), size=cfg.batch_size, replace=len(graphs) < cfg.batch_size)
        with Tape() as tape:
            loss = multitask_loss([graph_loss(model, graphs[i], cfg, rng, True) for i in idx])
        opt.zero_grad()
        tape.backward(loss)
        opt.step()

    for _ in range(warmup):
        step()
    rates = []
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(n_batches):
            step()
        rates.append(n_batches / (time.perf_counter() - start))
    return float(statistics.median(rates))


@dataclass
class BenchRecord:
    fingerprint: str
    strategy: str
    drop_ratio: float
    layers: int
    hidden: int
    batch_size: int
    flops_per_batch: int
    peak_activation_elements: int
    batches_per_sec: float
    accuracy: float
    seed: int

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def config_fingerprint(cfg: TrainConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


STRATEGIES = ("dotin", "random", "none")


def sweep_drop_ratio(
    cfg: TrainConfig,
    ratios: Iterable[float],
    gset: GraphSet,
    strategies: Sequence[str] = STRATEGIES,
    seeds: Sequence[int] = (0,),
    folds: Sequence[int] = (0,),
    timing: dict | None = None,
) -> list[BenchRecord]:
    """Train and score one run per (ratio, strategy, seed).

    Ratio 0 yields a single no-drop record since every strategy coincides
    there. ``timing`` holds keyword arguments for :func:`time_training`;
    ``None`` skips timing and records ``nan``. Accuracy is the mean over
    ``folds`` of the cross-validation split.
    """
    ratios = [float(r) for r in ratios]
    if any(not 0.0 <= r < 1.0 for r in ratios):
        raise SpecError(f"ratios must lie in [0, 1): {ratios}")
    for s in strategies:
        if s not in STRATEGIES:
            raise SpecError(f"unknown strategy {s!r}")
    records = []
    for ratio in ratios:
        plan = ["none"] if ratio == 0.0 else list(strategies)
        for strategy in plan:
            for seed in seeds:
                run_cfg = cfg.replace(alpha=ratio, alphas=None, drop_strategy=strategy, seed=seed)
                report = run_cross_validation(run_cfg, gset, folds=folds)
                acc = float(np.mean([f.test.values.get("accuracy", np.nan) for f in report.folds]))
                spec = run_cfg.model_spec(gset.num_features, max(gset.num_classes, 2))
                batch = gset.graphs[: run_cfg.batch_size]
                bps = float("nan")
                if timing is not None:
                    bps = time_training(DotinModel.init(spec, seed), gset.graphs, run_cfg, seed=seed, **timing)
                records.append(
                    BenchRecord(
                        config_fingerprint(run_cfg),
                        strategy,
                        ratio,
                        run_cfg.n_layers,
                        run_cfg.hidden,
                        run_cfg.batch_size,
                        flop_count(spec, batch),
                        peak_activation_elements(spec, batch),
                        bps,
                        acc,
                        seed,
                    )
                )
    return records


def write_bench_csv(records: Sequence[BenchRecord], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BenchRecord.header())
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def attentiveness_ranks(model: DotinModel, g: GraphInstance, layer: int = -1) -> np.ndarray:
    """K×N ranks of per-task attentiveness; rank 1 is the most attended node.

    Ties are broken by node index so each row is a permutation of 1..N.
    """
    att = per_task_attentiveness(model, g, layer=layer, normalize=True)
    return np.stack([rankdata(-row, method="ordinal").astype(np.int64) for row in att])


def export_attentiveness_ranks(
    model: DotinModel,
    graphs: Sequence[GraphInstance],
    path: str | os.PathLike | None = None,
    layer: int = -1,
) -> tuple[list[list], float]:
    """Rows ``(graph, node, rank_task1, ..., rank_taskK)`` and the mean Spearman rho.

    The correlation is between the first two task columns, averaged over
    graphs where it is defined (graphs with at least 3 nodes).
    """
    k = model.spec.k
    if k < 2:
        raise SpecError(f"rank export compares tasks and needs K >= 2 virtual nodes, model has {k}")
    rows, rhos = [], []
    for gid, g in enumerate(graphs):
        ranks = attentiveness_ranks(model, g, layer)
        for node in range(g.num_nodes):
            rows.append([g.name or gid, node, *ranks[:, node].tolist()])
        if g.num_nodes >= 3:
            rho = spearmanr(ranks[0], ranks[1]).statistic
            if np.isfinite(rho):
                rhos.append(float(rho))
    mean_rho = float(np.mean(rhos)) if rhos else float("nan")
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["graph", "node"] + [f"rank_task{i + 1}" for i in range(k)])
            w.writerows(rows)
    return rows, mean_rho
