"""Training configuration and the flat ``key = value`` config format."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Any

from .exceptions import ConfigError
from .model import ModelSpec, default_alphas

# key -> help text; also the source for ``--help``
CONFIG_KEYS: dict[str, str] = {
    "backbone": "propagation rule: gat or gcn",
    "n_layers": "number of propagation layers",
    "hidden": "hidden width D",
    "heads": "attention heads (outputs concatenated)",
    "alpha": "drop ratio applied at every layer except the last",
    "alphas": "explicit comma-separated per-layer drop ratios (overrides alpha)",
    "tasks": "comma-separated task per virtual node: cls, ged",
    "lr": "Adam learning rate",
    "batch_size": "graphs per optimizer step (default 8, or 16 with several tasks)",
    "weight_decay": "decoupled weight decay",
    "epochs": "maximum epochs per fold",
    "patience": "stop after this many epochs without train-loss improvement (0 disables)",
    "restore_best": "end training on the parameters of the lowest-loss epoch (true/false)",
    "folds": "cross-validation folds",
    "seed": "master random seed",
    "dropout": "dropout on layer outputs during training",
    "activation": "elu, relu or linear",
    "k_p": "edge substitutions for GED positives",
    "k_n": "edge substitutions for GED negatives",
    "margin": "GED triplet margin gamma",
    "lambda_source": "fusion weights from post-softmax scores (post) or logits",
    "edge_prior": "multiply GAT attention by edge weights (true/false)",
    "drop_strategy": "dotin, random or none",
    "tau": "attentiveness temperature (empty = sqrt of attention width)",
    "virtual_init_std": "std of the Gaussian virtual-node initialization",
    "stratify": "stratify folds by class (true/false)",
    "dataset": "synthetic, or a TU dataset name",
    "data_dir": "directory holding TU files",
    "motifs": "synthetic: comma-separated class motifs",
    "graphs_per_class": "synthetic: graphs per class",
    "n_min": "synthetic: minimum node count",
    "n_max": "synthetic: maximum node count",
    "noise_p": "synthetic: noise-edge probability",
    "n_labels": "synthetic: node label vocabulary size",
    "data_seed": "synthetic: generator seed",
}


@dataclass
class TrainConfig:
    backbone: str = "gat"
    n_layers: int = 3
    hidden: int = 64
    heads: int = 1
    alpha: float = 0.0
    alphas: tuple[float, ...] | None = None
    tasks: tuple[str, ...] = ("cls",)
    lr: float = 1e-3
    batch_size: int | None = None
    weight_decay: float = 8e-4
    epochs: int = 50
    patience: int = 10
    restore_best: bool = True
    folds: int = 10
    seed: int = 0
    dropout: float = 0.2
    activation: str = "elu"
    k_p: int = 1
    k_n: int = 2
    margin: float = 1.0
    lambda_source: str = "post"
    edge_prior: bool = False
    drop_strategy: str = "dotin"
    tau: float | None = None
    virtual_init_std: float = 1.0
    stratify: bool = True
    dataset: str = "synthetic"
    data_dir: str = ""
    motifs: tuple[str, ...] = ("triangle", "star")
    graphs_per_class: int = 100
    n_min: int = 20
    n_max: int = 40
    noise_p: float = 0.0
    n_labels: int = 4
    data_seed: int = 0

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if self.batch_size is None:
            self.batch_size = 16 if len(self.tasks) > 1 else 8
        for name in ("n_layers", "hidden", "heads", "batch_size", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr < 0 or self.weight_decay < 0 or self.epochs < 0:
            raise ConfigError("lr, weight_decay and epochs must be non-negative")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.alphas is not None:
            self.alphas = tuple(float(a) for a in self.alphas)
            if len(self.alphas) != self.n_layers or any(not 0 <= a < 1 for a in self.alphas):
                raise ConfigError(f"alphas must hold {self.n_layers} values in [0, 1)")
        self.motifs = tuple(self.motifs)

    @property
    def schedule(self) -> tuple[float, ...]:
        return self.alphas if self.alphas is not None else default_alphas(self.alpha, self.n_layers)

    def model_spec(self, in_features: int, n_classes: int) -> ModelSpec:
        return ModelSpec(
            in_features=in_features,
            hidden=self.hidden,
            n_layers=self.n_layers,
            backbone=self.backbone,
            alphas=self.schedule,
            tasks=self.tasks,
            n_classes=n_classes,
            heads=self.heads,
            activation=self.activation,
            dropout=self.dropout,
            lambda_source=self.lambda_source,
            edge_prior=self.edge_prior,
            tau=self.tau,
            drop_strategy=self.drop_strategy,
            virtual_init_std=self.virtual_init_std,
        )

    def replace(self, **changes) -> TrainConfig:
        """Copy with ``changes``; a resolved batch size is kept unless ``batch_size=None`` is passed."""
        d = self.to_dict()
        d.update(changes)
        return TrainConfig(**d)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(name: str, raw: str) -> Any:
    f = {f.name: f for f in fields(TrainConfig)}[name]
    default = f.default
    raw = raw.strip()
    try:
        if name in ("alphas",):
            return tuple(float(v) for v in raw.split(",") if v.strip()) if raw else None
        if name in ("tasks", "motifs"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if name == "batch_size":
            return int(raw) if raw and raw.lower() != "none" else None
        if name == "tau":
            return float(raw) if raw and raw.lower() != "none" else None
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_overrides(pairs: dict[str, str]) -> dict[str, Any]:
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def read_flat(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> TrainConfig:
    raw = read_flat(path) if path else {}
    raw.update(overrides or {})
    try:
        return TrainConfig(**parse_overrides(raw))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def write_config(cfg: TrainConfig, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for key, value in cfg.to_dict().items():
            fh.write(f"{key} = {_fmt(value)}\n")
