"""scikit-learn style wrappers around the training loop.

``X`` is always a sequence of :class:`~dotin.graphs.GraphInstance` (a
:class:`~dotin.graphs.GraphSet` works too); ``y`` defaults to the graphs'
own class labels.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .exceptions import DimensionError
from .graphs import GraphInstance
from .model import DotinModel
from .trainer import embed, evaluate, fit, predict_logits


def check_graphs(X, n_features: int | None = None) -> list[GraphInstance]:
    """Validate a graph collection and return it as a list."""
    if isinstance(X, GraphInstance):
        raise TypeError("expected a sequence of graphs, got a single GraphInstance")
    graphs = list(X)
    if not graphs:
        raise ValueError("empty graph collection")
    for i, g in enumerate(graphs):
        if not isinstance(g, GraphInstance):
            raise TypeError(f"item {i} is {type(g).__name__}, not GraphInstance")
    widths = {g.num_features for g in graphs}
    if len(widths) > 1:
        raise DimensionError(f"graphs disagree on feature width: {sorted(widths)}")
    if n_features is not None and widths != {n_features}:
        raise DimensionError(f"model expects {n_features} features, graphs have {widths.pop()}")
    return graphs


def _check_labels(graphs: Sequence[GraphInstance], y) -> np.ndarray:
    if y is None:
        y = [g.label for g in graphs]
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(graphs):
        raise ValueError(f"y must be 1-D with one label per graph ({len(graphs)}), got shape {y.shape}")
    return y


class _DotinBase(BaseEstimator):
    _tasks: tuple[str, ...] = ("cls",)

    def __init__(
        self,
        backbone="gat",
        n_layers=3,
        hidden=64,
        heads=1,
        alpha=0.0,
        lr=1e-3,
        batch_size=8,
        weight_decay=8e-4,
        epochs=50,
        patience=10,
        dropout=0.2,
        drop_strategy="dotin",
        k_p=1,
        k_n=2,
        margin=1.0,
        seed=0,
    ):
        self.backbone = backbone
        self.n_layers = n_layers
        self.hidden = hidden
        self.heads = heads
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.patience = patience
        self.dropout = dropout
        self.drop_strategy = drop_strategy
        self.k_p = k_p
        self.k_n = k_n
        self.margin = margin
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(tasks=self._tasks, **self.get_params())

    def _fit_graphs(self, graphs: list[GraphInstance], n_classes: int):
        self.config_ = self._config()
        spec = self.config_.model_spec(graphs[0].num_features, n_classes)
        self.model_ = DotinModel.init(spec, self.seed)
        self.history_ = fit(self.model_, graphs, self.config_, seed=self.seed)
        self.n_features_in_ = graphs[0].num_features
        return self

    def transform(self, X) -> np.ndarray:
        """Graph-level embeddings read off the first virtual node, shape ``(n, hidden)``."""
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.n_features_in_)
        return embed(self.model_, graphs)[:, 0, :]


class DotinClassifier(ClassifierMixin, _DotinBase):
    """Graph classifier with one virtual node and attentive node dropping."""

    def fit(self, X, y=None):
        graphs = check_graphs(X)
        y = _check_labels(graphs, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        relabeled = [GraphInstance(g.node_features, g.adjacency, {**g.labels, "cls": int(c)}, g.name) for g, c in zip(graphs, codes)]
        return self._fit_graphs(relabeled, max(len(self.classes_), 2))

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return predict_logits(self.model_, check_graphs(X, self.n_features_in_))[:, : len(self.classes_)]

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        z = self.decision_function(X)
        return self.classes_[np.argmax(z, axis=1)]


class DotinGedEncoder(TransformerMixin, _DotinBase):
    """Siamese graph encoder trained on synthetic edit triplets.

    ``score`` returns triplet accuracy on freshly generated triplets.
    """

    _tasks = ("ged",)

    def fit(self, X, y=None):
        return self._fit_graphs(check_graphs(X), 2)

    def distance(self, X1, X2) -> np.ndarray:
        """Squared embedding distance between paired graphs."""
        a, b = self.transform(X1), self.transform(X2)
        if len(a) != len(b):
            raise ValueError(f"paired collections differ in length: {len(a)} vs {len(b)}")
        return ((a - b) ** 2).sum(axis=1)

    def score(self, X, y=None, seed: int = 12345) -> float:
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.n_features_in_)
        return evaluate(self.model_, graphs, self.config_, seed=seed)["triplet_accuracy"]
