"""GCN and GAT propagation on dense weighted adjacency.

Both layers are written as ``aggregate`` followed by ``transform`` so the
node-dropping stage can be slotted between the two; ``gcn_layer`` and
``gat_layer`` are exactly that composition with nothing in the middle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, DomainError
from .tensor import Tensor

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": T.elu,
    "relu": T.relu,
    "linear": T.identity,
}


def get_activation(name_or_fn) -> Callable[[Tensor], Tensor]:
    if callable(name_or_fn):
        return name_or_fn
    try:
        return ACTIVATIONS[name_or_fn]
    except KeyError:
        raise ValueError(f"unknown activation {name_or_fn!r}; choose from {sorted(ACTIVATIONS)}") from None


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


@dataclass
class GcnLayerParams:
    theta: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, prefix: str = "") -> GcnLayerParams:
        return cls(glorot(rng, d_in, d_out, f"{prefix}theta"))

    def tensors(self) -> list[Tensor]:
        return [self.theta]


@dataclass
class GatLayerParams:
    """One attention head: query ``w1``, key ``w2`` and output ``w_out``."""

    w1: Tensor
    w2: Tensor
    w_out: Tensor

    def __post_init__(self):
        if self.w1.shape != self.w2.shape:
            raise DimensionError(f"w1 {self.w1.shape} and w2 {self.w2.shape} must share the attention width")

    @property
    def d_att(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, d_att: int | None = None, prefix: str = "") -> GatLayerParams:
        d_att = d_att or d_out
        return cls(
            glorot(rng, d_in, d_att, f"{prefix}w1"),
            glorot(rng, d_in, d_att, f"{prefix}w2"),
            glorot(rng, d_in, d_out, f"{prefix}w_out"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.w2, self.w_out]


def normalize_adjacency(a) -> Tensor:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row-degree matrix of ``A + I``.

    Differentiable in ``a`` when it is a recorded tensor (rewired weights).
    """
    a = T.as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    if (a.data < 0).any():
        raise DomainError("adjacency has negative entries")
    n = a.shape[0]
    a_hat = T.add(a, np.eye(n))
    dinv = T.power(T.tsum(a_hat, axis=1), -0.5)
    return T.mul(T.mul(T.reshape(dinv, (n, 1)), a_hat), T.reshape(dinv, (1, n)))


def gcn_aggregate(x: Tensor, a) -> Tensor:
    return T.matmul(normalize_adjacency(a), T.as_tensor(x))


def gcn_transform(h: Tensor, p: GcnLayerParams, activation="elu") -> Tensor:
    if h.shape[1] != p.theta.shape[0]:
        raise DimensionError(f"features have width {h.shape[1]}, theta expects {p.theta.shape[0]}")
    return get_activation(activation)(T.matmul(h, p.theta))


def gcn_layer(x, a, p: GcnLayerParams, activation="elu") -> Tensor:
    """``σ(Ã x θ)``; the adjacency passes through unchanged."""
    x = T.as_tensor(x)
    if x.shape[1] != p.theta.shape[0]:
        raise DimensionError(f"features have width {x.shape[1]}, theta expects {p.theta.shape[0]}")
    return gcn_transform(gcn_aggregate(x, a), p, activation)


def attention_logits(x: Tensor, p: GatLayerParams) -> Tensor:
    """Raw scores ``(x W1)(x W2)^T``."""
    return T.matmul(T.matmul(x, p.w1), T.transpose(T.matmul(x, p.w2)))


def gat_attention(x, a, p: GatLayerParams, tau: float | None = None, edge_prior: bool = False):
    """Return ``(S, logits)``; ``S`` is the row softmax of logits over ``a > 0``.

    With ``edge_prior`` the edge weights multiply the unnormalized scores,
    i.e. ``S_ij ∝ a_ij exp(logit_ij / tau)``.
    """
    x = T.as_tensor(x)
    if x.shape[1] != p.w1.shape[0]:
        raise DimensionError(f"features have width {x.shape[1]}, w1 expects {p.w1.shape[0]}")
    tau = math.sqrt(p.d_att) if tau is None else tau
    a = T.as_tensor(a)
    if (a.data < 0).any():
        raise DomainError("adjacency has negative entries")
    mask = a.data > 0
    logits = attention_logits(x, p)
    scores = logits
    if edge_prior:
        safe = T.add(a, np.where(mask, 0.0, 1.0))
        scores = T.add(logits, T.scale(T.log(safe), tau))
    return T.masked_softmax(scores, mask, tau), logits


def gat_transform(h: Tensor, p: GatLayerParams, activation="elu") -> Tensor:
    return get_activation(activation)(T.matmul(h, p.w_out))


def gat_layer(x, a_mask, p: GatLayerParams | Sequence[GatLayerParams], activation="elu", tau=None, edge_prior=False):
    """``σ(S x W_out)`` with ``S`` from :func:`gat_attention`; returns ``(features, S)``.

    ``a_mask`` must already contain self-loops. A sequence of parameter sets
    runs one head each and concatenates the outputs; ``S`` is then a list.
    """
    x = T.as_tensor(x)
    heads = [p] if isinstance(p, GatLayerParams) else list(p)
    outs, atts = [], []
    for hp in heads:
        s, _ = gat_attention(x, a_mask, hp, tau, edge_prior)
        outs.append(gat_transform(T.matmul(s, x), hp, activation))
        atts.append(s)
    if len(heads) == 1:
        return outs[0], atts[0]
    return T.concat(outs, axis=1), atts
