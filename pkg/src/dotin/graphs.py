"""Graph containers, TU-format ingestion, synthetic motif graphs, batching and folds."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag
from sklearn.model_selection import KFold, StratifiedKFold

from .exceptions import ConsistencyError, DimensionError, IngestionError, SpecError

__all__ = [
    "GraphInstance",
    "GraphSet",
    "Batch",
    "SyntheticSpec",
    "MOTIFS",
    "parse_tu_dataset",
    "write_tu_dataset",
    "make_synthetic",
    "batch_graphs",
    "split_batch",
    "kfold_split",
    "write_summary_csv",
]


@dataclass
class GraphInstance:
    """One graph: ``node_features`` (N×F), weighted ``adjacency`` (N×N), task labels."""

    node_features: np.ndarray
    adjacency: np.ndarray
    labels: dict[str, int] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        n = self.adjacency.shape[0]
        if self.adjacency.ndim != 2 or self.adjacency.shape != (n, n):
            raise DimensionError(f"adjacency must be square, got {self.adjacency.shape}")
        if self.node_features.ndim != 2 or self.node_features.shape[0] != n:
            raise DimensionError(
                f"node_features has {self.node_features.shape[0]} rows for {n} nodes"
            )
        if (self.adjacency < 0).any():
            raise DimensionError("adjacency has negative weights")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_features(self) -> int:
        return self.node_features.shape[1]

    @property
    def num_edges(self) -> int:
        """Undirected edge count (upper triangle support)."""
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    @property
    def label(self) -> int:
        return self.labels.get("cls", -1)

    def edge_set(self) -> set[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return set(zip(i.tolist(), j.tolist()))

    def copy(self) -> GraphInstance:
        return GraphInstance(self.node_features.copy(), self.adjacency.copy(), dict(self.labels), self.name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphInstance):
            return NotImplemented
        return (
            self.name == other.name
            and self.labels == other.labels
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.adjacency, other.adjacency)
        )


@dataclass
class GraphSet:
    graphs: list[GraphInstance]
    num_features: int
    num_classes: int
    name: str = ""

    def __post_init__(self):
        for g in self.graphs:
            if g.num_features != self.num_features:
                raise DimensionError(
                    f"graph {g.name!r} has {g.num_features} features, set has {self.num_features}"
                )

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return self.graphs[idx]
        return GraphSet([self.graphs[i] for i in idx], self.num_features, self.num_classes, self.name)

    def __iter__(self):
        return iter(self.graphs)

    @property
    def y(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def node_counts(self) -> np.ndarray:
        return np.array([g.num_nodes for g in self.graphs])


@dataclass
class Batch:
    """Block-diagonal union of graphs; ``ranges[i]`` is graph i's node slice."""

    adjacency: np.ndarray
    node_features: np.ndarray
    ranges: list[tuple[int, int]]
    labels: list[dict[str, int]]
    names: list[str]

    def __len__(self) -> int:
        return len(self.ranges)


def _read_int_table(path: Path, required: bool = True) -> np.ndarray | None:
    if not path.exists():
        if required:
            raise IngestionError(f"missing dataset file: {path.name}")
        return None
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise IngestionError(f"unreadable dataset file {path.name}: {exc}") from exc
    return data


def parse_tu_dataset(directory: str | os.PathLike, name: str) -> GraphSet:
    """Read a TU-format dataset (``{name}_A.txt`` etc., 1-indexed node ids).

    Node labels are one-hot encoded when ``{name}_node_labels.txt`` exists,
    otherwise each node gets the constant feature 1.0. Graph labels are
    remapped to ``0..C-1`` in sorted order.
    """
    root = Path(directory)
    edges = _read_int_table(root / f"{name}_A.txt")
    indicator = _read_int_table(root / f"{name}_graph_indicator.txt")[:, 0]
    graph_labels = _read_int_table(root / f"{name}_graph_labels.txt")[:, 0]
    node_labels = _read_int_table(root / f"{name}_node_labels.txt", required=False)

    n_total = indicator.shape[0]
    graph_ids = np.unique(indicator)
    if len(graph_ids) != len(graph_labels):
        raise ConsistencyError(
            f"{len(graph_ids)} graph ids in indicator but {len(graph_labels)} graph labels"
        )
    classes = np.unique(graph_labels)
    class_of = {int(c): i for i, c in enumerate(classes)}

    if node_labels is not None:
        node_labels = node_labels[:, 0]
        if node_labels.shape[0] != n_total:
            raise ConsistencyError(f"{node_labels.shape[0]} node labels for {n_total} nodes")
        vocab = np.unique(node_labels)
        codes = np.searchsorted(vocab, node_labels)
        features = np.zeros((n_total, len(vocab)))
        features[np.arange(n_total), codes] = 1.0
    else:
        features = np.ones((n_total, 1))

    # per-graph contiguous node blocks, TU files list nodes grouped by graph
    order = np.argsort(indicator, kind="stable")
    if not np.array_equal(order, np.arange(n_total)):
        raise ConsistencyError("graph indicator is not grouped by graph id")
    starts = {int(g): int(np.searchsorted(indicator, g, side="left")) for g in graph_ids}
    sizes = {int(g): int(np.count_nonzero(indicator == g)) for g in graph_ids}
    adjs = {int(g): np.zeros((sizes[int(g)], sizes[int(g)])) for g in graph_ids}

    for lineno, (u, v) in enumerate(edges, start=1):
        if not (1 <= u <= n_total and 1 <= v <= n_total):
            raise ConsistencyError(f"{name}_A.txt line {lineno}: node id out of range ({u}, {v})")
        gu, gv = int(indicator[u - 1]), int(indicator[v - 1])
        if gu != gv:
            raise ConsistencyError(
                f"{name}_A.txt line {lineno}: edge ({u}, {v}) joins graphs {gu} and {gv}"
            )
        if u == v:
            continue
        s = starts[gu]
        a = adjs[gu]
        a[u - 1 - s, v - 1 - s] = 1.0
        a[v - 1 - s, u - 1 - s] = 1.0

    graphs = []
    for k, g in enumerate(graph_ids):
        g = int(g)
        s = starts[g]
        graphs.append(
            GraphInstance(
                node_features=features[s : s + sizes[g]].copy(),
                adjacency=adjs[g],
                labels={"cls": class_of[int(graph_labels[k])]},
                name=f"{name}_{g}",
            )
        )
    return GraphSet(graphs, features.shape[1], len(classes), name)


def write_tu_dataset(gset: GraphSet, directory: str | os.PathLike, name: str | None = None) -> Path:
    """Write ``gset`` in TU format; features must be one-hot (stored as node labels)."""
    name = name or gset.name or "DS"
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(root / f"{name}_A.txt", "w") as fa, open(root / f"{name}_graph_indicator.txt", "w") as fi, open(
        root / f"{name}_graph_labels.txt", "w"
    ) as fl, open(root / f"{name}_node_labels.txt", "w") as fn:
        for gid, g in enumerate(gset.graphs, start=1):
            i, j = np.nonzero(g.adjacency)
            for u, v in zip(i.tolist(), j.tolist()):
                fa.write(f"{u + 1 + offset}, {v + 1 + offset}\n")
            for row in g.node_features:
                fi.write(f"{gid}\n")
                fn.write(f"{int(np.argmax(row))}\n")
            fl.write(f"{g.label}\n")
            offset += g.num_nodes
    return root


MOTIFS: dict[str, list[tuple[int, int]]] = {
    "triangle": [(0, 1), (1, 2), (0, 2)],
    "star": [(0, 1), (0, 2), (0, 3), (0, 4)],
    "square": [(0, 1), (1, 2), (2, 3), (3, 0)],
    "clique4": [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
    "house": [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)],
}


def _motif_size(motif: str) -> int:
    return 1 + max(max(e) for e in MOTIFS[motif])


@dataclass
class SyntheticSpec:
    """Recipe for a motif-classification set.

    Each graph has ``n_min..n_max`` nodes: a random tree on the background
    nodes, the class motif on the rest, one edge joining the two, extra noise
    edges with probability ``noise_p`` per pair, then a random node order. Background nodes carry one of
    ``n_labels - 1`` random node labels; motif nodes carry the reserved last
    label.
    """

    motifs: Sequence[str] = ("triangle", "star")
    graphs_per_class: int = 100
    n_min: int = 20
    n_max: int = 40
    noise_p: float = 0.0
    n_labels: int = 4
    name: str = "SYNTH"


def make_synthetic(spec: SyntheticSpec, seed: int = 0) -> GraphSet:
    motifs = list(spec.motifs)
    if len(motifs) < 2:
        raise SpecError("need at least two class motifs")
    for m in motifs:
        if m not in MOTIFS:
            raise SpecError(f"unknown motif {m!r}; known: {sorted(MOTIFS)}")
    biggest = max(_motif_size(m) for m in motifs)
    if spec.n_min < biggest:
        raise SpecError(f"n_min={spec.n_min} is smaller than the largest motif ({biggest} nodes)")
    if spec.n_max < spec.n_min:
        raise SpecError("n_max must be >= n_min")
    if spec.n_labels < 2:
        raise SpecError("n_labels must be >= 2")
    rng = np.random.default_rng(seed)
    graphs = []
    for cls, motif in enumerate(motifs):
        for k in range(spec.graphs_per_class):
            n = int(rng.integers(spec.n_min, spec.n_max + 1))
            m = _motif_size(motif)
            nb = n - m
            adj = np.zeros((n, n))
            for v in range(1, nb):
                u = int(rng.integers(0, v))
                adj[u, v] = adj[v, u] = 1.0
            if spec.noise_p > 0:
                noise = np.triu(rng.random((n, n)) < spec.noise_p, 1)
                adj[noise | noise.T] = 1.0
            nodes = nb + np.arange(m)
            for a, b in MOTIFS[motif]:
                adj[nodes[a], nodes[b]] = adj[nodes[b], nodes[a]] = 1.0
            if nb:
                u, v = int(rng.integers(0, nb)), int(nodes[rng.integers(0, m)])
                adj[u, v] = adj[v, u] = 1.0
            perm = rng.permutation(n)
            adj = adj[np.ix_(perm, perm)]
            nodes = np.argsort(perm)[nodes]
            codes = rng.integers(0, spec.n_labels - 1, size=n)
            codes[nodes] = spec.n_labels - 1
            feats = np.zeros((n, spec.n_labels))
            feats[np.arange(n), codes] = 1.0
            graphs.append(GraphInstance(feats, adj, {"cls": cls}, f"{spec.name}_{cls}_{k}"))
    return GraphSet(graphs, spec.n_labels, len(motifs), spec.name)


def batch_graphs(graphs: Sequence[GraphInstance]) -> Batch:
    if not graphs:
        raise ValueError("cannot batch an empty graph list")
    f = graphs[0].num_features
    for g in graphs:
        if g.num_features != f:
            raise DimensionError(f"feature width {g.num_features} != {f} in batch")
    ranges = []
    start = 0
    for g in graphs:
        ranges.append((start, start + g.num_nodes))
        start += g.num_nodes
    return Batch(
        adjacency=block_diag(*[g.adjacency for g in graphs]),
        node_features=np.vstack([g.node_features for g in graphs]),
        ranges=ranges,
        labels=[dict(g.labels) for g in graphs],
        names=[g.name for g in graphs],
    )


def split_batch(batch: Batch) -> list[GraphInstance]:
    return [
        GraphInstance(
            batch.node_features[s:e].copy(),
            batch.adjacency[s:e, s:e].copy(),
            dict(lab),
            name,
        )
        for (s, e), lab, name in zip(batch.ranges, batch.labels, batch.names)
    ]


def kfold_split(
    gset: GraphSet, k: int, seed: int = 0, stratify: bool = True
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition, class-stratified when every class has >= k graphs."""
    n = len(gset)
    if not 2 <= k <= n:
        raise SpecError(f"k={k} out of range for {n} graphs")
    y = gset.y
    _, counts = np.unique(y, return_counts=True)
    if stratify and counts.min() >= k:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        folds = splitter.split(np.zeros(n), y)
    else:
        folds = KFold(n_splits=k, shuffle=True, random_state=seed).split(np.zeros(n))
    return [(np.sort(tr), np.sort(te)) for tr, te in folds]


def write_summary_csv(gset: GraphSet, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "N", "E", "label"])
        for g in gset.graphs:
            w.writerow([g.name, g.num_nodes, g.num_edges, g.label])
