"""Graph-level objectives, GED triplet generation and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .exceptions import GenerationError, MetricError
from .graphs import GraphInstance
from .tensor import Tensor


def classification_loss(x_g: Tensor, head, label: int) -> Tensor:
    """Cross-entropy of ``head(x_g)`` against ``label``."""
    return T.cross_entropy_from_logits(head(x_g), label)


def multitask_loss(losses: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of per-task losses."""
    if not losses:
        raise ValueError("multitask_loss needs at least one task loss")
    total = losses[0]
    for l in losses[1:]:
        total = T.add(total, l)
    return T.scale(total, 1.0 / len(losses))


@dataclass
class GedTriplet:
    anchor: GraphInstance
    positive: GraphInstance
    negative: GraphInstance
    k_p: int
    k_n: int


def _substitute(g: GraphInstance, k: int, rng: np.random.Generator) -> GraphInstance:
    """Remove k distinct edges and add k distinct previously-absent edges."""
    n = g.num_nodes
    iu, ju = np.triu_indices(n, 1)
    present = g.adjacency[iu, ju] > 0
    edges = np.flatnonzero(present)
    holes = np.flatnonzero(~present)
    if len(edges) < k or len(holes) < k:
        raise GenerationError(
            f"graph {g.name!r} has {len(edges)} edges and {len(holes)} non-edges; need {k} of each"
        )
    out = g.copy()
    a = out.adjacency
    for e in rng.choice(edges, size=k, replace=False):
        a[iu[e], ju[e]] = a[ju[e], iu[e]] = 0.0
    for e in rng.choice(holes, size=k, replace=False):
        a[iu[e], ju[e]] = a[ju[e], iu[e]] = 1.0
    return out


def gen_ged_triplet(g: GraphInstance, k_p: int = 1, k_n: int = 2, seed=0) -> GedTriplet:
    """Anchor plus copies edited by ``k_p`` and ``k_n`` edge substitutions."""
    if k_p < 1:
        raise GenerationError("k_p must be >= 1")
    if k_p >= k_n:
        raise GenerationError(f"need k_p < k_n, got {k_p} >= {k_n}")
    rng = np.random.default_rng(seed)
    pos = _substitute(g, k_p, rng)
    neg = _substitute(g, k_n, rng)
    return GedTriplet(g, pos, neg, k_p, k_n)


def embedding_distance(e1: Tensor, e2: Tensor) -> Tensor:
    return T.squared_norm(T.sub(e1, e2))


def ged_margin_loss(e_a: Tensor, e_p: Tensor, e_n: Tensor, gamma: float = 1.0) -> Tensor:
    """``max(0, γ + ‖a - p‖² - ‖a - n‖²)``."""
    e_a, e_p, e_n = T.as_tensor(e_a), T.as_tensor(e_p), T.as_tensor(e_n)
    if not e_a.shape == e_p.shape == e_n.shape:
        raise ValueError(f"embedding shapes differ: {e_a.shape}, {e_p.shape}, {e_n.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    gap = T.sub(embedding_distance(e_a, e_p), embedding_distance(e_a, e_n))
    return T.relu(T.add(gap, gamma))


def pair_auc(similarities, labels) -> float:
    """Mann-Whitney AUC: P(similar pair scores above dissimilar pair), ties count 1/2."""
    s = np.asarray(similarities, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise MetricError("similarities and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("pair AUC needs both similar and dissimilar pairs")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def triplet_accuracy(distances) -> float:
    """Fraction of ``(d_pos, d_neg)`` pairs with ``d_pos < d_neg``."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1, 2)
    if len(d) == 0:
        raise MetricError("triplet accuracy of an empty set")
    return float(np.mean(d[:, 0] < d[:, 1]))
