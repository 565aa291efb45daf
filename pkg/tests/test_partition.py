"""Louvain, modularity, client assignment, subgraph induction."""

import itertools

import numpy as np
import pytest

from fgssl.graphs import Graph, generate_sbm, split_nodes
from fgssl.partition import (
    ClientPartition,
    CommunityAssignment,
    communities_to_clients,
    induce_subgraph,
    load_partition,
    louvain_partition,
    modularity,
    save_partition,
)


def graph_from_edges(n, edges):
    return Graph(features=np.eye(n), edges=np.asarray(sorted(tuple(sorted(e)) for e in edges)),
                 labels=np.zeros(n, dtype=np.int64), num_classes=1)


def all_partitions(items):
    """Every set partition of `items` (Bell-number many)."""
    items = list(items)
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for smaller in all_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [smaller[i] + [head]] + smaller[i + 1:]
        yield [[head]] + smaller


def brute_force_best_partition(graph):
    best_q, best = -np.inf, None
    for parts in all_partitions(range(graph.num_nodes)):
        labels = np.empty(graph.num_nodes, dtype=np.int64)
        for cid, block in enumerate(parts):
            labels[block] = cid
        q = modularity(graph, labels)
        if q > best_q:
            best_q, best = q, labels
    return best_q, best


# --- modularity --------------------------------------------------------------


def test_modularity_two_disjoint_k2():
    g = graph_from_edges(4, [(0, 1), (2, 3)])
    assignment = np.array([0, 0, 1, 1])
    assert modularity(g, assignment) == pytest.approx(0.5)


def test_modularity_single_community_closed_form():
    g = graph_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)])
    m = g.num_edges
    deg = np.zeros(5)
    np.add.at(deg, g.edges[:, 0], 1)
    np.add.at(deg, g.edges[:, 1], 1)
    expected = 1.0 - (deg.sum() / (2 * m)) ** 2
    assert modularity(g, np.zeros(5, dtype=np.int64)) == pytest.approx(expected)


def test_modularity_random_assignment_near_zero():
    g = generate_sbm(3, 10, 0.5, 0.2, 0.0, seed=0)
    rng = np.random.default_rng(0)
    qs = [modularity(g, rng.integers(0, 4, g.num_nodes)) for _ in range(1000)]
    assert abs(float(np.mean(qs))) < 0.05


def test_modularity_range_and_edgeless_error():
    g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3)])
    for labels in ([0, 0, 1, 1], [0, 1, 2, 3], [0, 0, 0, 0]):
        q = modularity(g, np.asarray(labels))
        assert -0.5 <= q < 1.0
    empty = Graph(features=np.eye(2), edges=np.empty((0, 2)), labels=np.zeros(2, dtype=np.int64), num_classes=1)
    with pytest.raises(ValueError):
        modularity(empty, np.array([0, 1]))


# --- louvain against brute force ----------------------------------------------


def test_louvain_two_cliques_with_bridge():
    clique = lambda nodes: list(itertools.combinations(nodes, 2))
    g = graph_from_edges(8, clique(range(4)) + clique(range(4, 8)) + [(3, 4)])
    best_q, best_labels = brute_force_best_partition(g)
    found = louvain_partition(g, seed=0)
    assert modularity(g, found) == pytest.approx(best_q)
    # the optimum is the two cliques
    assert len({best_labels[i] for i in range(4)}) == 1
    assert found.num_communities == 2
    assert len({found.community_of[i] for i in range(4)}) == 1
    assert len({found.community_of[i] for i in range(4, 8)}) == 1


def test_louvain_triangle_single_community():
    g = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])
    best_q, _ = brute_force_best_partition(g)  # over all Bell(3)=5 partitions
    found = louvain_partition(g, seed=0)
    assert found.num_communities == 1
    assert modularity(g, found) == pytest.approx(best_q)


def test_louvain_deterministic_per_seed():
    g = generate_sbm(4, 20, 0.3, 0.02, 0.0, seed=7)
    a = louvain_partition(g, seed=3)
    b = louvain_partition(g, seed=3)
    assert np.array_equal(a.community_of, b.community_of)


def test_louvain_never_decreases_modularity_vs_singletons():
    for seed in range(4):
        g = generate_sbm(3, 12, 0.4, 0.05, 0.0, seed=seed)
        singleton_q = modularity(g, np.arange(g.num_nodes))
        q = modularity(g, louvain_partition(g, seed=seed))
        assert q >= singleton_q


def test_louvain_requires_edges():
    empty = Graph(features=np.eye(3), edges=np.empty((0, 2)), labels=np.zeros(3, dtype=np.int64), num_classes=1)
    with pytest.raises(ValueError):
        louvain_partition(empty, seed=0)


# --- community -> client assignment --------------------------------------------


def make_assignment(sizes):
    community_of = np.concatenate([np.full(s, i, dtype=np.int64) for i, s in enumerate(sizes)])
    return CommunityAssignment(community_of=community_of)


def test_greedy_balancing_trace():
    assignment = make_assignment([5, 4, 3, 2])
    part = communities_to_clients(assignment, 2, seed=0)
    loads = np.bincount(part.client_of)
    np.testing.assert_array_equal(np.sort(loads), [7, 7])
    # 5 and 2 share a client, 4 and 3 share the other
    client_of_comm = [part.client_of[assignment.community_of == c][0] for c in range(4)]
    assert client_of_comm[0] == client_of_comm[3]
    assert client_of_comm[1] == client_of_comm[2]


def test_one_community_per_client():
    assignment = make_assignment([4, 3, 2])
    part = communities_to_clients(assignment, 3, seed=0)
    assert part.num_clients == 3
    for c in range(3):
        members = np.flatnonzero(assignment.community_of == c)
        assert len(set(part.client_of[members])) == 1


def test_single_client_takes_everything():
    assignment = make_assignment([3, 3])
    part = communities_to_clients(assignment, 1, seed=0)
    assert set(part.client_of) == {0}


def test_communities_never_split():
    g = generate_sbm(4, 25, 0.25, 0.02, 0.0, seed=2)
    assignment = louvain_partition(g, seed=0)
    part = communities_to_clients(assignment, 3, seed=0)
    for c in range(assignment.num_communities):
        members = np.flatnonzero(assignment.community_of == c)
        assert len(set(part.client_of[members].tolist())) == 1


def test_too_few_communities_error():
    with pytest.raises(ValueError):
        communities_to_clients(make_assignment([5, 5]), 3, seed=0)


# --- induced subgraphs ----------------------------------------------------------


def test_induce_triangle_pair():
    g = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])
    sub = induce_subgraph(g, [0, 1])
    assert sub.graph.num_nodes == 2 and sub.graph.num_edges == 1
    np.testing.assert_array_equal(sub.original_ids, [0, 1])


def test_induce_full_set_is_identity():
    g = generate_sbm(3, 6, 0.5, 0.2, 0.3, seed=4)
    sub = induce_subgraph(g, np.arange(g.num_nodes))
    assert np.array_equal(sub.graph.edges, g.edges)
    assert np.array_equal(sub.graph.features, g.features)


def test_induce_restricts_masks_and_maps_ids():
    g = generate_sbm(3, 10, 0.4, 0.1, 0.2, seed=5)
    g = g.with_masks(split_nodes(g, (0.6, 0.2, 0.2), seed=0))
    nodes = np.arange(0, g.num_nodes, 2)
    sub = induce_subgraph(g, nodes)
    o2n = sub.old_to_new()
    for new_id, train_old in enumerate(sub.original_ids):
        assert o2n[int(train_old)] == new_id
    # restricted train mask contains exactly the kept original train nodes
    kept_train = {o2n[int(i)] for i in g.masks.train if int(i) in o2n}
    assert kept_train == set(sub.graph.masks.train.tolist())


def test_induce_empty_error():
    g = generate_sbm(2, 3, 0.5, 0.1, 0.0, seed=0)
    with pytest.raises(ValueError):
        induce_subgraph(g, [])


def test_partition_covers_nodes_and_loses_cross_edges():
    g = generate_sbm(4, 30, 0.3, 0.05, 0.0, seed=6)
    part = communities_to_clients(louvain_partition(g, seed=0), 4, seed=0)
    subs = [induce_subgraph(g, part.members(m)) for m in range(4)]
    covered = np.concatenate([s.original_ids for s in subs])
    assert sorted(covered.tolist()) == list(range(g.num_nodes))
    total_edges = sum(s.graph.num_edges for s in subs)
    assert total_edges < g.num_edges  # cross-client edges are dropped
    # edge sets are pairwise disjoint in original-id space
    seen = set()
    for s in subs:
        for u, v in s.graph.edges:
            key = (int(s.original_ids[u]), int(s.original_ids[v]))
            assert key not in seen
            seen.add(key)


def test_partition_file_round_trip(tmp_path):
    g = generate_sbm(3, 10, 0.4, 0.05, 0.0, seed=1)
    part = communities_to_clients(louvain_partition(g, seed=0), 3, seed=0)
    save_partition(part, tmp_path / "partition.tsv")
    loaded = load_partition(tmp_path / "partition.tsv")
    assert np.array_equal(part.client_of, loaded.client_of)
    assert part.num_clients == loaded.num_clients


def test_client_partition_rejects_empty_client():
    with pytest.raises(ValueError):
        ClientPartition(client_of=np.array([0, 0, 0]), num_clients=2)
