"""Test-only oracles: central finite differences and brute-force references."""

import numpy as np

from dotin.backbone import GcnLayerParams
from dotin.tensor import Tape, Tensor, reverse_accumulate


def numeric_grad(f, arrays, h=1e-6):
    """Central-difference gradient of scalar ``f(*arrays)`` w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f(*arrays)
            a[idx] = old - h
            fm = f(*arrays)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    """Gradients from the tape for ``build(*tensors) -> scalar Tensor``."""
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build(*ts)
    reverse_accumulate(tape, loss)
    # parameters the loss never touched keep grad None
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in ts]


def max_rel_error(build, arrays, h=1e-6):
    """max |analytic - numeric| / max(1, |analytic|, |numeric|) over all entries."""

    def f(*arrs):
        return float(build(*[Tensor(a) for a in arrs]).data)

    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    an = analytic_grad(build, arrays)
    nu = numeric_grad(f, arrays, h)
    worst = 0.0
    for a, n in zip(an, nu):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def theorem_instance(rng):
    """One random pooling instance: global row, projections and a tie-free raw set.

    Returns ``(q, k_dropped, k_new)`` where ``q = x_g W1``, ``k_dropped`` are the
    dropped rows through ``W2`` and ``k_new`` is the fused row through ``W2``.
    """
    from dotin import tensor as T
    from dotin.core import attentiveness_logits, fuse_dropped, select_drop

    d = int(rng.integers(8, 65))
    d_att = int(rng.integers(4, d + 1))
    m = int(rng.integers(2, 11))
    n = m + int(rng.integers(1, 20))
    x_g = rng.normal(size=(1, d))
    w1 = rng.normal(size=(d, d_att)) / np.sqrt(d)
    w2 = rng.normal(size=(d, d_att)) / np.sqrt(d)
    x = rng.normal(size=(n, d))
    z = attentiveness_logits(Tensor(x_g @ w1), Tensor(x @ w2)).data
    assert len(np.unique(z)) == n
    s = T.masked_softmax(Tensor(z), np.ones(n, dtype=bool), np.sqrt(d_att))
    plan = select_drop(s, (m + 0.5) / n)
    assert plan.drop_count == m
    x_dropped = x[plan.dropped]
    x_new = fuse_dropped(Tensor(x_dropped), plan.lam).data
    return x_g @ w1, x_dropped @ w2, x_new @ w2


def theorem_claims(q, k_dropped, k_new):
    """(distance claim holds, attentiveness claim holds), both strict."""
    dist = lambda k: float(((q - k) ** 2).sum())
    a = dist(k_new) < np.mean([dist(k[None, :]) for k in k_dropped])
    b = float((q @ k_new.T).item()) > float(np.mean(q @ k_dropped.T))
    return a, b


def rebind(model, tensors):
    """Model sharing ``spec`` with ``model`` whose named parameters are the given tensors."""
    from dotin.backbone import GatLayerParams
    from dotin.model import ClassifierHead, DotinModel, DropAttention

    p = dict(zip(model.named_parameters(), tensors))
    layers = []
    for l, layer in enumerate(model.layers):
        if isinstance(layer, GcnLayerParams):
            layers.append(GcnLayerParams(p[f"layer{l}.theta"]))
        else:
            layers.append([GatLayerParams(*(p[f"layer{l}.head{h}.{w}"] for w in ("w1", "w2", "w_out"))) for h in range(len(layer))])
    drop = [None if da is None else DropAttention(p[f"layer{l}.drop_w1"], p[f"layer{l}.drop_w2"]) for l, da in enumerate(model.drop_attention)]
    heads = {k: ClassifierHead(p[f"head{k}.weight"], p[f"head{k}.bias"]) for k in model.heads}
    return DotinModel(model.spec, p["w_in"], p["virtual"], layers, drop, heads)
