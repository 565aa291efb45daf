"""Graph representation, on-disk ingestion, synthetic generation, node splits.

Graphs are undirected and immutable: features (N x d float64), a canonical
edge list (src < dst, deduplicated, lexicographically sorted), per-node
class labels, and optional train/val/test masks. The on-disk layout is
plain text so any public dump can be converted with a small script:

    meta.json       {"num_nodes": N, "num_features": d, "num_classes": C}
    edges.tsv       one "src\\tdst" per line, 0-indexed
    features.csv    N rows of d comma-separated decimals
    labels.tsv      one class id per line
    masks.tsv       optional, lines "node\\t{train|val|test}"
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger("fgssl.graphs")

__all__ = [
    "Graph",
    "SplitMasks",
    "GraphLoadError",
    "canonical_edges",
    "load_graph",
    "save_graph",
    "generate_sbm",
    "split_nodes",
    "neighbors",
    "adjacency",
    "load_masks",
    "save_masks",
]


class GraphLoadError(ValueError):
    """A dataset directory is missing files or internally inconsistent."""


@dataclass(frozen=True)
class SplitMasks:
    """Disjoint train/val/test node-id sets, stored as sorted index arrays."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, np.unique(arr))
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split masks must be pairwise disjoint")

    def bool_mask(self, which: str, num_nodes: int) -> np.ndarray:
        out = np.zeros(num_nodes, dtype=bool)
        out[getattr(self, which)] = True
        return out


@dataclass(frozen=True)
class Graph:
    """Undirected graph with node features and labels.

    edges rows satisfy src < dst, contain no duplicates and no self-loops,
    and are sorted lexicographically; construction validates all of it.
    """

    features: np.ndarray  # (N, d) float64
    edges: np.ndarray  # (E, 2) int64
    labels: np.ndarray  # (N,) int64
    num_classes: int
    masks: SplitMasks | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", labels)
        n = feats.shape[0]
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match {n} nodes")
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels out of range [0, num_classes)")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy src < dst (no self-loops)")
            keys = edges[:, 0] * n + edges[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise ValueError("edges must be sorted and deduplicated")
        if self.masks is not None:
            for which in ("train", "val", "test"):
                idx = getattr(self.masks, which)
                if idx.size and idx.max() >= n:
                    raise ValueError(f"{which} mask references node >= {n}")

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def with_masks(self, masks: SplitMasks) -> "Graph":
        return replace(self, masks=masks)


def canonical_edges(pairs, num_nodes: int) -> np.ndarray:
    """Canonicalize an edge list: undirected, src < dst, dedup, sorted."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return arr
    if arr.min() < 0 or arr.max() >= num_nodes:
        raise ValueError(f"edge endpoint out of range [0, {num_nodes})")
    arr = arr[arr[:, 0] != arr[:, 1]]  # drop self-loops
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keys = lo * num_nodes + hi
    keys = np.unique(keys)
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1)


def adjacency(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """CSR-style neighbor structure (indptr, indices), both directions."""
    n = graph.num_nodes
    if graph.num_edges == 0:
        return np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    src = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    dst = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst


def neighbors(graph: Graph, i: int) -> set[int]:
    """Neighbor ids of node i (symmetric, excludes i itself)."""
    if i < 0 or i >= graph.num_nodes:
        raise IndexError(f"node id {i} out of range [0, {graph.num_nodes})")
    indptr, idx = adjacency(graph)
    return set(idx[indptr[i]:indptr[i + 1]].tolist())


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def _require(path: Path) -> Path:
    if not path.is_file():
        raise GraphLoadError(f"missing dataset file: {path}")
    return path


def load_graph(dataset_dir) -> Graph:
    """Load a graph from a dataset directory (see module docstring)."""
    d = Path(dataset_dir)
    if not d.is_dir():
        raise GraphLoadError(f"dataset directory not found: {d}")
    try:
        meta = json.loads(_require(d / "meta.json").read_text())
        n = int(meta["num_nodes"])
        dim = int(meta["num_features"])
        num_classes = int(meta["num_classes"])
    except (KeyError, ValueError, json.JSONDecodeError) as err:
        raise GraphLoadError(f"bad meta.json in {d}: {err}") from err

    feats = np.loadtxt(_require(d / "features.csv"), delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(_require(d / "labels.tsv"), dtype=np.int64, ndmin=1)
    edge_path = _require(d / "edges.tsv")
    raw = edge_path.read_text().split()
    if len(raw) % 2 != 0:
        raise GraphLoadError(f"odd number of endpoints in {edge_path}")
    pairs = np.asarray([int(x) for x in raw], dtype=np.int64).reshape(-1, 2)

    if feats.shape[0] != n or labels.shape[0] != n:
        raise GraphLoadError(
            f"row-count mismatch in {d}: meta says {n} nodes, "
            f"features has {feats.shape[0]} rows, labels has {labels.shape[0]}"
        )
    if feats.shape[1] != dim:
        raise GraphLoadError(f"feature width {feats.shape[1]} != meta num_features {dim}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise GraphLoadError(f"label out of range [0, {num_classes}) in {d}")
    try:
        edges = canonical_edges(pairs, n)
    except ValueError as err:
        raise GraphLoadError(f"bad edges in {edge_path}: {err}") from err

    masks = None
    if (d / "masks.tsv").is_file():
        masks = load_masks(d / "masks.tsv")
    return Graph(features=feats, edges=edges, labels=labels, num_classes=num_classes, masks=masks)


def save_graph(graph: Graph, dataset_dir) -> None:
    """Write a graph in the canonical plain-text layout (load round-trips)."""
    d = Path(dataset_dir)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": graph.num_nodes,
        "num_features": graph.feature_dim,
        "num_classes": graph.num_classes,
    }
    (d / "meta.json").write_text(json.dumps(meta) + "\n")
    np.savetxt(d / "features.csv", graph.features, delimiter=",", fmt="%.17g")
    np.savetxt(d / "labels.tsv", graph.labels, fmt="%d")
    np.savetxt(d / "edges.tsv", graph.edges, delimiter="\t", fmt="%d")
    if graph.masks is not None:
        save_masks(graph.masks, d / "masks.tsv")


def load_masks(path) -> SplitMasks:
    groups: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            node, which = line.split("\t")
            groups[which].append(int(node))
        except (ValueError, KeyError) as err:
            raise GraphLoadError(f"{path}:{line_no}: bad mask line {line!r}") from err
    return SplitMasks(train=np.array(groups["train"], dtype=np.int64),
                      val=np.array(groups["val"], dtype=np.int64),
                      test=np.array(groups["test"], dtype=np.int64))


def save_masks(masks: SplitMasks, path) -> None:
    lines = []
    for which in ("train", "val", "test"):
        lines.extend(f"{i}\t{which}" for i in getattr(masks, which).tolist())
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# synthetic graphs and node splits
# ---------------------------------------------------------------------------


def generate_sbm(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feature_noise: float,
    seed: int,
) -> Graph:
    """Stochastic block model: one class per block, one-hot features + noise.

    Every unordered node pair gets an independent Bernoulli edge with
    probability p_in (same block) or p_out (different blocks).
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if blocks < 1 or nodes_per_block < 1:
        raise ValueError("blocks and nodes_per_block must be positive")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks, dtype=np.int64), nodes_per_block)
    features = np.eye(blocks)[labels] + feature_noise * rng.standard_normal((n, blocks))

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = canonical_edges(np.stack([iu[keep], ju[keep]], axis=1), n)
    return Graph(features=features, edges=edges, labels=labels, num_classes=blocks)


def split_nodes(graph: Graph, ratios: tuple[float, float, float], seed: int) -> SplitMasks:
    """Per-class stratified shuffle into train/val/test index sets."""
    r_train, r_val, r_test = (float(r) for r in ratios)
    if min(r_train, r_val, r_test) < 0 or r_train + r_val + r_test > 1 + 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to <= 1, got {ratios}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in range(graph.num_classes):
        ids = np.flatnonzero(graph.labels == c)
        if ids.size == 0:
            continue
        if ids.size < 3:
            log.warning("class %d has only %d node(s); split is degenerate", c, ids.size)
        ids = rng.permutation(ids)
        k1 = int(round(r_train * ids.size))
        k2 = int(round((r_train + r_val) * ids.size))
        k3 = int(round((r_train + r_val + r_test) * ids.size))
        train.extend(ids[:k1].tolist())
        val.extend(ids[k1:k2].tolist())
        test.extend(ids[k2:k3].tolist())
    return SplitMasks(train=np.array(train, dtype=np.int64),
                      val=np.array(val, dtype=np.int64),
                      test=np.array(test, dtype=np.int64))
