"""Louvain community detection and community-to-client assignment.

Clients are synthesized by detecting communities on the full graph, packing
whole communities onto clients with a greedy size balancer, and inducing
each client's subgraph (cross-client edges are dropped, not mended).

The Louvain implementation is the classic two-phase scheme: greedy local
moves maximizing modularity gain, then aggregation of communities into
supernodes, repeated until the modularity gain falls below 1e-7. Node
visit order is shuffled by the seed; ties in gain break toward the lowest
community id so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import Graph, SplitMasks

__all__ = [
    "CommunityAssignment",
    "ClientPartition",
    "InducedSubgraph",
    "modularity",
    "louvain_partition",
    "communities_to_clients",
    "induce_subgraph",
    "save_partition",
    "load_partition",
]


@dataclass(frozen=True)
class CommunityAssignment:
    """node id -> community id, with community ids contiguous from 0."""

    community_of: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.community_of, dtype=np.int64)
        object.__setattr__(self, "community_of", arr)
        if arr.size == 0:
            raise ValueError("empty assignment")
        present = np.unique(arr)
        if present[0] != 0 or present[-1] != present.size - 1:
            raise ValueError("community ids must be contiguous from 0")

    @property
    def num_communities(self) -> int:
        return int(self.community_of.max()) + 1

    def sizes(self) -> np.ndarray:
        return np.bincount(self.community_of, minlength=self.num_communities)


@dataclass(frozen=True)
class ClientPartition:
    """node id -> client id in [0, num_clients); every client non-empty."""

    client_of: np.ndarray
    num_clients: int

    def __post_init__(self):
        arr = np.asarray(self.client_of, dtype=np.int64)
        object.__setattr__(self, "client_of", arr)
        if arr.min() < 0 or arr.max() >= self.num_clients:
            raise ValueError("client id out of range")
        sizes = np.bincount(arr, minlength=self.num_clients)
        if np.any(sizes == 0):
            raise ValueError(f"every client must be non-empty, got sizes {sizes.tolist()}")

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.client_of == m)


def modularity(graph: Graph, assignment) -> float:
    """Newman modularity Q of a node partition; undefined on edgeless graphs."""
    comm = assignment.community_of if isinstance(assignment, CommunityAssignment) else np.asarray(assignment)
    m = graph.num_edges
    if m == 0:
        raise ValueError("modularity is undefined for a graph with no edges")
    ncomm = int(comm.max()) + 1
    intra = np.zeros(ncomm)
    same = comm[graph.edges[:, 0]] == comm[graph.edges[:, 1]]
    np.add.at(intra, comm[graph.edges[:, 0]][same], 1.0)
    deg = np.zeros(graph.num_nodes)
    np.add.at(deg, graph.edges[:, 0], 1.0)
    np.add.at(deg, graph.edges[:, 1], 1.0)
    deg_c = np.zeros(ncomm)
    np.add.at(deg_c, comm, deg)
    return float((intra / m).sum() - ((deg_c / (2.0 * m)) ** 2).sum())


# ---------------------------------------------------------------------------
# Louvain
# ---------------------------------------------------------------------------

_GAIN_TOL = 1e-7


def _one_level(adj: list[dict[int, float]], self_w: list[float], rng: np.random.Generator) -> tuple[list[int], bool]:
    """Greedy local-move phase on one (possibly aggregated) weighted graph."""
    n = len(adj)
    k = [sum(adj[v].values()) + 2.0 * self_w[v] for v in range(n)]
    m2 = sum(k)
    comm = list(range(n))
    sigma_tot = k.copy()
    order = rng.permutation(n)
    moved_any = False

    while True:
        moved = False
        for v in order:
            c_old = comm[v]
            ncw: dict[int, float] = {}
            for u, w in adj[v].items():
                ncw[comm[u]] = ncw.get(comm[u], 0.0) + w
            sigma_tot[c_old] -= k[v]
            stay_gain = ncw.get(c_old, 0.0) - sigma_tot[c_old] * k[v] / m2
            best_c, best_gain = c_old, stay_gain
            for c in sorted(ncw):
                if c == c_old:
                    continue
                gain = ncw[c] - sigma_tot[c] * k[v] / m2
                # strictly better wins; an exact tie prefers the lower id
                if gain > best_gain or (gain == best_gain and c < best_c):
                    best_c, best_gain = c, gain
            sigma_tot[best_c] += k[v]
            comm[v] = best_c
            if best_c != c_old:
                moved = True
                moved_any = True
        if not moved:
            return comm, moved_any


def _aggregate(adj: list[dict[int, float]], self_w: list[float], comm: list[int]) -> tuple[list[dict[int, float]], list[float], dict[int, int]]:
    ids = sorted(set(comm))
    remap = {c: i for i, c in enumerate(ids)}
    nn = len(ids)
    new_adj: list[dict[int, float]] = [{} for _ in range(nn)]
    new_self = [0.0] * nn
    for v in range(len(adj)):
        a = remap[comm[v]]
        new_self[a] += self_w[v]
        for u, w in adj[v].items():
            if u <= v:
                continue  # each undirected pair once
            b = remap[comm[u]]
            if a == b:
                new_self[a] += w
            else:
                new_adj[a][b] = new_adj[a].get(b, 0.0) + w
                new_adj[b][a] = new_adj[b].get(a, 0.0) + w
    return new_adj, new_self, remap


def louvain_partition(graph: Graph, seed: int) -> CommunityAssignment:
    """Two-phase Louvain; deterministic per seed, modularity non-decreasing."""
    if graph.num_edges == 0:
        raise ValueError("louvain requires a graph with at least one edge")
    rng = np.random.default_rng(seed)
    n = graph.num_nodes
    adj: list[dict[int, float]] = [{} for _ in range(n)]
    for u, v in graph.edges:
        adj[u][v] = adj[u].get(v, 0.0) + 1.0
        adj[v][u] = adj[v].get(u, 0.0) + 1.0
    self_w = [0.0] * n

    level_of = np.arange(n)  # original node -> node id in the current level graph
    best = level_of
    q_prev = modularity(graph, level_of)
    while True:
        comm, moved = _one_level(adj, self_w, rng)
        flat = np.asarray(comm)[level_of]  # original node -> community label
        q_new = modularity(graph, _contiguous(flat))
        if q_new < q_prev - 1e-12:
            raise AssertionError(f"louvain phase decreased modularity: {q_prev} -> {q_new}")
        if q_new > q_prev:
            best = flat
        if not moved or q_new - q_prev <= _GAIN_TOL:
            break
        q_prev = q_new
        adj, self_w, remap = _aggregate(adj, self_w, comm)
        level_of = np.asarray([remap[c] for c in comm])[level_of]
    return CommunityAssignment(community_of=_contiguous(best))


def _contiguous(labels: np.ndarray) -> np.ndarray:
    """Relabel community ids contiguously, in order of first occurrence."""
    remap: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, c in enumerate(labels.tolist()):
        if c not in remap:
            remap[c] = len(remap)
        out[i] = remap[c]
    return out


# ---------------------------------------------------------------------------
# client assignment and subgraph induction
# ---------------------------------------------------------------------------


def communities_to_clients(assignment: CommunityAssignment, num_clients: int, seed: int) -> ClientPartition:
    """Greedy size balancing: largest community first onto the lightest client.

    Equal-size communities are ordered by the seeded shuffle; equal loads
    break toward the lowest client id. Communities are never split.
    """
    sizes = assignment.sizes()
    n_comm = sizes.size
    if n_comm < num_clients:
        raise ValueError(f"cannot spread {n_comm} communities over {num_clients} clients")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_comm)
    order = order[np.argsort(-sizes[order], kind="stable")]
    loads = np.zeros(num_clients, dtype=np.int64)
    comm_client = np.empty(n_comm, dtype=np.int64)
    for c in order:
        m = int(np.argmin(loads))  # argmin returns the first (lowest) index on ties
        comm_client[c] = m
        loads[m] += sizes[c]
    return ClientPartition(client_of=comm_client[assignment.community_of], num_clients=num_clients)


@dataclass(frozen=True)
class InducedSubgraph:
    """A node-induced subgraph plus the mapping back to original node ids."""

    graph: Graph
    original_ids: np.ndarray  # new id -> original id, sorted ascending

    def old_to_new(self) -> dict[int, int]:
        return {int(o): i for i, o in enumerate(self.original_ids.tolist())}


def induce_subgraph(graph: Graph, nodes) -> InducedSubgraph:
    """Keep the given nodes and every edge with both endpoints inside."""
    ids = np.unique(np.asarray(list(nodes), dtype=np.int64))
    if ids.size == 0:
        raise ValueError("cannot induce a subgraph on an empty node set")
    if ids.min() < 0 or ids.max() >= graph.num_nodes:
        raise ValueError("node id out of range")
    pos = np.full(graph.num_nodes, -1, dtype=np.int64)
    pos[ids] = np.arange(ids.size)

    keep = (pos[graph.edges[:, 0]] >= 0) & (pos[graph.edges[:, 1]] >= 0)
    new_edges = pos[graph.edges[keep]]

    masks = None
    if graph.masks is not None:
        def restrict(idx: np.ndarray) -> np.ndarray:
            inside = idx[pos[idx] >= 0]
            return pos[inside]

        masks = SplitMasks(train=restrict(graph.masks.train),
                           val=restrict(graph.masks.val),
                           test=restrict(graph.masks.test))
    sub = Graph(features=graph.features[ids].copy(), edges=new_edges,
                labels=graph.labels[ids].copy(), num_classes=graph.num_classes, masks=masks)
    return InducedSubgraph(graph=sub, original_ids=ids)


def save_partition(partition: ClientPartition, path) -> None:
    lines = [f"{node}\t{client}" for node, client in enumerate(partition.client_of.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_partition(path) -> ClientPartition:
    client_of: dict[int, int] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            node, client = (int(x) for x in line.split("\t"))
        except ValueError as err:
            raise ValueError(f"{path}:{line_no}: bad partition line {line!r}") from err
        client_of[node] = client
    if sorted(client_of) != list(range(len(client_of))):
        raise ValueError(f"{path}: partition must cover node ids 0..N-1 exactly once")
    arr = np.array([client_of[i] for i in range(len(client_of))], dtype=np.int64)
    return ClientPartition(client_of=arr, num_clients=int(arr.max()) + 1)
