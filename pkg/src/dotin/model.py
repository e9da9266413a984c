"""Model specification and the learnable parameter store."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .backbone import GatLayerParams, GcnLayerParams, glorot
from .exceptions import ConfigError
from .tensor import Tensor

TASK_KINDS = ("cls", "ged")


@dataclass
class ModelSpec:
    """Architecture of a DOTIN network.

    ``alphas`` holds one drop ratio per layer (0 disables dropping there).
    ``tasks`` lists one task kind per virtual node, so ``K = len(tasks)``.
    """

    in_features: int
    hidden: int = 64
    n_layers: int = 3
    backbone: str = "gat"
    alphas: tuple[float, ...] = (0.0, 0.0, 0.0)
    tasks: tuple[str, ...] = ("cls",)
    n_classes: int = 2
    heads: int = 1
    activation: str = "elu"
    dropout: float = 0.0
    lambda_source: str = "post"
    edge_prior: bool = False
    tau: float | None = None
    drop_strategy: str = "dotin"
    virtual_init_std: float = 1.0

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.tasks = tuple(self.tasks)
        if len(self.alphas) != self.n_layers:
            raise ConfigError(f"{len(self.alphas)} drop ratios for {self.n_layers} layers")
        if any(not 0.0 <= a < 1.0 for a in self.alphas):
            raise ConfigError(f"drop ratios must lie in [0, 1): {self.alphas}")
        if self.backbone not in ("gat", "gcn"):
            raise ConfigError(f"backbone must be 'gat' or 'gcn', got {self.backbone!r}")
        if not self.tasks or any(t not in TASK_KINDS for t in self.tasks):
            raise ConfigError(f"tasks must be drawn from {TASK_KINDS}, got {self.tasks}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.lambda_source not in ("post", "logits"):
            raise ConfigError("lambda_source must be 'post' or 'logits'")
        if self.drop_strategy not in ("dotin", "random", "none"):
            raise ConfigError("drop_strategy must be 'dotin', 'random' or 'none'")
        if self.in_features < 1 or self.hidden < 1 or self.n_layers < 1:
            raise ConfigError("in_features, hidden and n_layers must be positive")

    @property
    def k(self) -> int:
        return len(self.tasks)

    @property
    def d_att(self) -> int:
        return self.hidden // self.heads

    @property
    def temperature(self) -> float:
        return math.sqrt(self.d_att) if self.tau is None else float(self.tau)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def default_alphas(alpha: float, n_layers: int) -> tuple[float, ...]:
    """Uniform ratio at every layer except the last."""
    return tuple([float(alpha)] * (n_layers - 1) + [0.0])


@dataclass
class ClassifierHead:
    weight: Tensor
    bias: Tensor

    def __call__(self, x_g: Tensor) -> Tensor:
        from . import tensor as T

        return T.add(T.matmul(T.reshape(x_g, (1, -1)), self.weight), self.bias)

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class DropAttention:
    """Query/key projections used for scoring when the backbone has none (GCN)."""

    w1: Tensor
    w2: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.w2]


@dataclass
class DotinModel:
    """Parameter store: input projection, virtual nodes, layers and task heads."""

    spec: ModelSpec
    w_in: Tensor
    virtual: Tensor
    layers: list
    drop_attention: list[DropAttention | None]
    heads: dict[int, ClassifierHead] = field(default_factory=dict)

    @classmethod
    def init(cls, spec: ModelSpec, seed: int = 0) -> DotinModel:
        rng = np.random.default_rng(seed)
        d = spec.hidden
        w_in = glorot(rng, spec.in_features, d, "w_in")
        virtual = Tensor(rng.normal(0.0, spec.virtual_init_std, size=(spec.k, d)), requires_grad=True, name="virtual")
        layers, drop_att = [], []
        for l in range(spec.n_layers):
            if spec.backbone == "gat":
                layers.append(
                    [GatLayerParams.init(rng, d, spec.d_att, spec.d_att, prefix=f"layer{l}.head{h}.") for h in range(spec.heads)]
                )
                drop_att.append(None)
            else:
                layers.append(GcnLayerParams.init(rng, d, d, prefix=f"layer{l}."))
                drop_att.append(
                    DropAttention(glorot(rng, d, d, f"layer{l}.drop_w1"), glorot(rng, d, d, f"layer{l}.drop_w2"))
                    if spec.alphas[l] > 0
                    else None
                )
        heads = {}
        for k, task in enumerate(spec.tasks):
            if task == "cls":
                heads[k] = ClassifierHead(
                    glorot(rng, d, spec.n_classes, f"head{k}.weight"),
                    Tensor(np.zeros(spec.n_classes), requires_grad=True, name=f"head{k}.bias"),
                )
        return cls(spec, w_in, virtual, layers, drop_att, heads)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"w_in": self.w_in, "virtual": self.virtual}
        for l, layer in enumerate(self.layers):
            if isinstance(layer, GcnLayerParams):
                out[f"layer{l}.theta"] = layer.theta
            else:
                for h, hp in enumerate(layer):
                    out[f"layer{l}.head{h}.w1"] = hp.w1
                    out[f"layer{l}.head{h}.w2"] = hp.w2
                    out[f"layer{l}.head{h}.w_out"] = hp.w_out
            da = self.drop_attention[l]
            if da is not None:
                out[f"layer{l}.drop_w1"] = da.w1
                out[f"layer{l}.drop_w2"] = da.w2
        for k, head in sorted(self.heads.items()):
            out[f"head{k}.weight"] = head.weight
            out[f"head{k}.bias"] = head.bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ConfigError(f"{name}: checkpoint shape {arrays[name].shape} != model {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)

    def checksum(self) -> float:
        return float(sum(np.abs(p.data).sum() + p.data.sum() for p in self.parameters()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def task_index(self, kind: str) -> Sequence[int]:
        return [k for k, t in enumerate(self.spec.tasks) if t == kind]
