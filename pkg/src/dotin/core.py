"""Virtual nodes, attentiveness scoring, node dropping, fusion and rewiring.

Row layout of an :class:`AugmentedGraph` is always ``[non-virtual rows |
virtual rows]``. Non-virtual rows are the surviving raw nodes in their original
order followed by fused nodes; the K virtual rows sit at the end.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .backbone import (
    GatLayerParams,
    GcnLayerParams,
    gat_attention,
    gat_layer,
    gat_transform,
    gcn_aggregate,
    gcn_layer,
    gcn_transform,
    get_activation,
)
from .exceptions import DimensionError, EmptySupportError
from .graphs import GraphInstance
from .model import DotinModel
from .tensor import Tensor

RAW, VIRTUAL, FUSED = "raw", "virtual", "fused"

_EPS = 1e-9


def drop_count(n: int, alpha: float) -> int:
    """``⌊n·α⌋``, robust to binary rounding of α (10·0.3 drops 3)."""
    return int(math.floor(n * alpha + _EPS))


def remaining_count(n: int, alpha: float, k: int) -> int:
    """Rows left after a drop stage: ``⌈n(1-α) + k⌉ + 1``, or ``n + k`` when nothing drops."""
    if drop_count(n, alpha) == 0:
        return n + k
    return int(math.ceil(n * (1.0 - alpha) + k - _EPS)) + 1


@dataclass
class VirtualNodeBank:
    embeddings: Tensor
    tasks: tuple[str, ...] = ()

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise DimensionError(f"virtual bank must be K×D with K >= 1, got {self.embeddings.shape}")

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @classmethod
    def gaussian(cls, k: int, d: int, rng: np.random.Generator, std: float = 1.0, tasks=()) -> VirtualNodeBank:
        return cls(Tensor(rng.normal(0.0, std, size=(k, d)), requires_grad=True), tuple(tasks))


@dataclass
class AugmentedGraph:
    features: Tensor
    adjacency: Tensor
    provenance: list[str]
    orig_index: np.ndarray
    k: int

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_nonvirtual(self) -> int:
        return self.n_rows - self.k

    @property
    def virtual_rows(self) -> np.ndarray:
        return np.arange(self.n_nonvirtual, self.n_rows)

    @property
    def nonvirtual_rows(self) -> np.ndarray:
        return np.arange(self.n_nonvirtual)


def _virtual_block(a_raw: Tensor, k: int) -> Tensor:
    """Surround a non-virtual adjacency with unit edges to k virtual rows."""
    n = a_raw.shape[0]
    top = T.concat([a_raw, np.ones((n, k))], axis=1)
    bottom = np.concatenate([np.ones((k, n)), np.zeros((k, k))], axis=1)
    return T.concat([top, bottom], axis=0)


def inject_virtual_nodes(g: GraphInstance, bank: VirtualNodeBank, features: Tensor | None = None) -> AugmentedGraph:
    """Append the bank's K rows, each joined to every raw node by a unit edge.

    ``features`` overrides ``g.node_features`` (pass the projected features).
    """
    x = T.as_tensor(g.node_features if features is None else features)
    n = g.num_nodes
    if n < 1:
        raise EmptySupportError("graph has no nodes")
    if x.shape[0] != n:
        raise DimensionError(f"{x.shape[0]} feature rows for {n} nodes")
    if x.shape[1] != bank.embeddings.shape[1]:
        raise DimensionError(
            f"feature width {x.shape[1]} does not match virtual width {bank.embeddings.shape[1]}"
        )
    k = bank.k
    return AugmentedGraph(
        features=T.concat([x, bank.embeddings], axis=0),
        adjacency=_virtual_block(T.as_tensor(g.adjacency), k),
        provenance=[RAW] * n + [f"{VIRTUAL}:{i}" for i in range(k)],
        orig_index=np.concatenate([np.arange(n), -np.ones(k, dtype=np.int64)]),
        k=k,
    )


def attentiveness_logits(q_virtual: Tensor, k_raw: Tensor) -> Tensor:
    """Pre-softmax ``s_i = Σ_k q_k · key_i`` as a length-N vector."""
    if q_virtual.shape[1] != k_raw.shape[1]:
        raise DimensionError(f"projection widths differ: {q_virtual.shape} vs {k_raw.shape}")
    q = T.reshape(T.tsum(q_virtual, axis=0), (1, -1))
    return T.reshape(T.matmul(q, T.transpose(k_raw)), (-1,))


def attentiveness(q_virtual: Tensor, k_raw: Tensor, tau: float) -> Tensor:
    """Softmax over raw nodes of summed virtual-query/raw-key scores, temperature ``tau``.

    ``q_virtual`` is the K virtual rows through W1, ``k_raw`` the N raw rows
    through W2.
    """
    q_virtual, k_raw = T.as_tensor(q_virtual), T.as_tensor(k_raw)
    if k_raw.shape[0] == 0:
        raise EmptySupportError("no raw nodes to score")
    logits = attentiveness_logits(q_virtual, k_raw)
    return T.masked_softmax(logits, np.ones(logits.shape, dtype=bool), tau)


@dataclass
class DropPlan:
    """Result of selecting task-irrelevant nodes at one stage.

    ``dropped`` is ordered by ascending score (ties by index) and aligned
    with ``lam``; ``kept`` is in ascending index order.
    """

    s: np.ndarray
    drop_count: int
    dropped: np.ndarray
    kept: np.ndarray
    lam: np.ndarray
    lam_tensor: Tensor | None = field(default=None, repr=False)
    s_tensor: Tensor | None = field(default=None, repr=False)

    @property
    def empty(self) -> bool:
        return self.drop_count == 0


def _lambda(scores: Tensor, idx: np.ndarray) -> Tensor:
    picked = T.take_rows(scores, idx)
    return T.masked_softmax(picked, np.ones(len(idx), dtype=bool), 1.0)


def plan_from_indices(s, dropped, logits=None, lambda_source: str = "post") -> DropPlan:
    """Build a plan for an explicit drop set (also used by the random-drop baseline)."""
    s = T.as_tensor(s)
    n = s.shape[0]
    dropped = np.asarray(dropped, dtype=np.intp)
    kept = np.setdiff1d(np.arange(n), dropped)
    if len(dropped) == 0:
        return DropPlan(s.data.copy(), 0, dropped, kept, np.zeros(0), None, s)
    source = s if lambda_source == "post" or logits is None else T.as_tensor(logits)
    lam = _lambda(source, dropped)
    return DropPlan(s.data.copy(), len(dropped), dropped, kept, lam.data.copy(), lam, s)


def select_drop(s, alpha: float, logits=None, lambda_source: str = "post") -> DropPlan:
    """Drop the ``⌊N·α⌋`` lowest-scoring nodes (stable on ties) and weight them by softmax.

    ``lambda_source='post'`` feeds the softmax with the attentiveness values
    themselves; ``'logits'`` uses the pre-softmax scores passed as ``logits``.
    """
    s = T.as_tensor(s)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    m = drop_count(s.shape[0], alpha)
    order = np.argsort(s.data, kind="stable")
    return plan_from_indices(s, order[:m], logits, lambda_source)


def random_plan(s, alpha: float, rng: np.random.Generator, logits=None, lambda_source: str = "post") -> DropPlan:
    """Same as :func:`select_drop` but the dropped set is uniform at random."""
    s = T.as_tensor(s)
    m = drop_count(s.shape[0], alpha)
    chosen = rng.choice(s.shape[0], size=m, replace=False) if m else np.zeros(0, dtype=np.intp)
    chosen = chosen[np.argsort(s.data[chosen], kind="stable")]
    return plan_from_indices(s, chosen, logits, lambda_source)


def fuse_dropped(x_dropped, lam) -> Tensor:
    """Single row ``Σ λ_i x_i``."""
    x_dropped, lam = T.as_tensor(x_dropped), T.as_tensor(lam)
    if x_dropped.shape[0] == 0:
        raise EmptySupportError("nothing to fuse; skip fusion for an empty plan")
    if lam.size != x_dropped.shape[0]:
        raise DimensionError(f"{lam.size} weights for {x_dropped.shape[0]} rows")
    return T.matmul(T.reshape(lam, (1, -1)), x_dropped)


def rewire_edges(a, plan: DropPlan, k: int = 0) -> Tensor:
    """Adjacency after replacing the dropped nodes by one fused node.

    ``a`` is the current augmented adjacency whose last ``k`` rows are
    virtual. The fused node's edge to kept node i carries ``Σ_j w_ij`` over
    dropped j; every non-virtual row is then softmax-normalized over its
    nonzero support. Virtual rows get unit edges to all survivors.
    """
    a = T.as_tensor(a)
    if plan.empty:
        raise EmptySupportError("rewiring needs a nonempty drop plan")
    kept, dropped = plan.kept, plan.dropped
    block = T.take(a, kept, kept)
    col = T.reshape(T.tsum(T.take(a, kept, dropped), axis=1), (-1, 1))
    row = T.reshape(T.tsum(T.take(a, dropped, kept), axis=0), (1, -1))
    raw = T.concat([T.concat([block, col], axis=1), T.concat([row, np.zeros((1, 1))], axis=1)], axis=0)
    normed = T.masked_softmax(raw, raw.data > 0, 1.0, allow_empty=True)
    return _virtual_block(normed, k) if k else normed


def gcn_virtual_degeneracy_probe(n_kept: int, virtual: np.ndarray, features: np.ndarray, steps: int = 1) -> np.ndarray:
    """Virtual rows after ``steps`` mean-aggregation GCN updates with identity weights.

    Every virtual node sees the same kept nodes, so
    ``x_gk' = (Σ_i x_i + x_gk) / (2 + n_kept)`` and the K rows contract
    towards each other by ``1 / (2 + n_kept)`` per step.
    """
    virtual = np.asarray(virtual, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    total = features.sum(axis=0)
    for _ in range(steps):
        virtual = (total[None, :] + virtual) / (2.0 + n_kept)
    return virtual


@dataclass
class ForwardResult:
    embeddings: Tensor
    graph: AugmentedGraph
    plans: list[DropPlan | None]
    stage_rows: list[int]
    stage_scores: list[np.ndarray | None] = field(default_factory=list)


def _with_self_loops(a: Tensor) -> Tensor:
    return T.add(a, np.eye(a.shape[0]))


def _stage_scores(model: DotinModel, layer_idx: int, x: Tensor, a_loop: Tensor, aug: AugmentedGraph, cache):
    """Attentiveness logits for non-virtual rows at one stage."""
    nv, vr = aug.nonvirtual_rows, aug.virtual_rows
    spec = model.spec
    if spec.backbone == "gat":
        total = None
        for logits in cache:
            part = T.tsum(T.take(logits, vr, nv), axis=0)
            total = part if total is None else T.add(total, part)
        return total
    # Σ_k (x_gk W1)·(x_i W2) reassociated as x_i · W2 (W1ᵀ Σ_k x_gk): O(D² + ND) instead of O(ND²)
    da = model.drop_attention[layer_idx]
    q = T.matmul(T.reshape(T.tsum(T.take_rows(x, vr), axis=0), (1, -1)), da.w1)
    v = T.matmul(da.w2, T.transpose(q))
    return T.reshape(T.matmul(T.take_rows(x, nv), v), (-1,))


def dotin_forward(
    model: DotinModel,
    g: GraphInstance,
    rng: np.random.Generator | None = None,
    training: bool = False,
    selector=None,
) -> ForwardResult:
    """Stacked propagate/drop pass; returns the K task embeddings and drop plans.

    ``rng`` drives random-drop selection and, with ``training``, dropout.
    ``selector(stage, scores, alpha)`` may override which nodes are dropped.
    """
    spec = model.spec
    act = get_activation(spec.activation)
    tau = spec.temperature
    x0 = T.matmul(T.as_tensor(g.node_features), model.w_in)
    aug = inject_virtual_nodes(g, VirtualNodeBank(model.virtual, spec.tasks), features=x0)
    plans: list[DropPlan | None] = []
    rows = [aug.n_rows]
    scores_log: list[np.ndarray | None] = []
    for l in range(spec.n_layers):
        x, a = aug.features, aug.adjacency
        a_loop = _with_self_loops(a)
        if spec.backbone == "gat":
            heads = model.layers[l]
            cache, hs = [], []
            for hp in heads:
                s_att, logits = gat_attention(x, a_loop, hp, tau, spec.edge_prior)
                cache.append(logits)
                hs.append(T.matmul(s_att, x))
        else:
            cache, hs = None, [gcn_aggregate(x, a)]

        alpha = spec.alphas[l]
        plan = None
        n_nv = aug.n_nonvirtual
        if spec.drop_strategy != "none" and alpha > 0 and drop_count(n_nv, alpha) > 0:
            logits_nv = _stage_scores(model, l, x, a_loop, aug, cache)
            s = T.masked_softmax(logits_nv, np.ones(n_nv, dtype=bool), tau)
            if selector is not None:
                plan = plan_from_indices(s, selector(l, s.data, alpha), logits_nv, spec.lambda_source)
            elif spec.drop_strategy == "random":
                plan = random_plan(s, alpha, rng if rng is not None else np.random.default_rng(l), logits_nv, spec.lambda_source)
            else:
                plan = select_drop(s, alpha, logits_nv, spec.lambda_source)
            scores_log.append(s.data.copy())
            vr = aug.virtual_rows
            new_hs = []
            for h in hs:
                fused = fuse_dropped(T.take_rows(h, plan.dropped), plan.lam_tensor)
                new_hs.append(T.concat([T.take_rows(h, plan.kept), fused, T.take_rows(h, vr)], axis=0))
            hs = new_hs
            new_adj = rewire_edges(a, plan, aug.k)
            prov = [aug.provenance[i] for i in plan.kept] + [FUSED] + aug.provenance[n_nv:]
            orig = np.concatenate([aug.orig_index[plan.kept], [-1], aug.orig_index[n_nv:]])
        else:
            scores_log.append(None)
            new_adj, prov, orig = a, aug.provenance, aug.orig_index
        plans.append(plan)

        if spec.backbone == "gat":
            outs = [gat_transform(h, hp, act) for h, hp in zip(hs, model.layers[l])]
            x_next = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
        else:
            x_next = gcn_transform(hs[0], model.layers[l], act)
        if training and rng is not None and spec.dropout > 0:
            x_next = T.dropout(x_next, spec.dropout, rng)
        aug = AugmentedGraph(x_next, new_adj, prov, orig, aug.k)
        rows.append(aug.n_rows)
    return ForwardResult(T.take_rows(aug.features, aug.virtual_rows), aug, plans, rows, scores_log)


def reference_forward(model: DotinModel, g: GraphInstance) -> Tensor:
    """Plain backbone stack with virtual-node readout and no dropping."""
    spec = model.spec
    x = T.matmul(T.as_tensor(g.node_features), model.w_in)
    aug = inject_virtual_nodes(g, VirtualNodeBank(model.virtual), features=x)
    x, a = aug.features, aug.adjacency
    for l in range(spec.n_layers):
        if spec.backbone == "gat":
            x, _ = gat_layer(x, _with_self_loops(a), model.layers[l], spec.activation, spec.temperature, spec.edge_prior)
        else:
            x = gcn_layer(x, a, model.layers[l], spec.activation)
    return T.take_rows(x, aug.virtual_rows)


def per_task_attentiveness(model: DotinModel, g: GraphInstance, layer: int = -1, normalize: bool = True) -> np.ndarray:
    """K×N matrix of per-virtual-node attentiveness over the raw nodes.

    Scored on the input of ``layer`` of a no-drop pass, with both projected
    vectors L2-normalized first when ``normalize`` is set.
    """
    spec = model.spec
    layer = layer % spec.n_layers
    x = T.matmul(T.as_tensor(g.node_features), model.w_in)
    aug = inject_virtual_nodes(g, VirtualNodeBank(model.virtual), features=x)
    x, a = aug.features, aug.adjacency
    for l in range(layer):
        if spec.backbone == "gat":
            x, _ = gat_layer(x, _with_self_loops(a), model.layers[l], spec.activation, spec.temperature, spec.edge_prior)
        else:
            x = gcn_layer(x, a, model.layers[l], spec.activation)
    if spec.backbone == "gat":
        w1 = np.concatenate([hp.w1.data for hp in model.layers[layer]], axis=1)
        w2 = np.concatenate([hp.w2.data for hp in model.layers[layer]], axis=1)
    else:
        da = model.drop_attention[layer]
        w1 = da.w1.data if da is not None else np.eye(spec.hidden)
        w2 = da.w2.data if da is not None else np.eye(spec.hidden)
    q = x.data[aug.virtual_rows] @ w1
    kk = x.data[aug.nonvirtual_rows] @ w2
    if normalize:
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        kk = kk / np.maximum(np.linalg.norm(kk, axis=1, keepdims=True), 1e-12)
    tau = 1.0 if normalize else spec.temperature
    z = (q @ kk.T) / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def write_drop_plans_csv(records: Sequence[tuple[str, ForwardResult]], path: str | os.PathLike) -> None:
    """One row per scored node: graph id, stage, original index, score, dropped flag.

    Fused nodes have original index -1.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph", "stage", "node", "s", "dropped"])
        for gid, res in records:
            # the first scored stage sees the raw nodes in original order
            current = None
            for stage, plan in enumerate(res.plans):
                if plan is None:
                    continue
                if current is None:
                    current = np.arange(len(plan.s))
                dropped = set(plan.dropped.tolist())
                for i, sv in enumerate(plan.s):
                    w.writerow([gid, stage, int(current[i]), repr(float(sv)), int(i in dropped)])
                current = np.concatenate([current[plan.kept], [-1]])
