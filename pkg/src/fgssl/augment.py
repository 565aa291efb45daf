"""Graph view generation: edge removal and feature-dimension masking.

Views never change the node count, ordering, labels, or split masks, so
node i in every view refers to the same entity. Feature masking zeroes
whole dimensions (the same columns for every node). The strong/weak pair
supports the asymmetric contrast design: the strong view feeds the
trainable local model, the weak view the frozen global model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graphs import Graph

__all__ = ["AugmentConfig", "AugmentPair", "remove_edges", "mask_features", "make_views"]


@dataclass(frozen=True)
class AugmentConfig:
    p_edge_remove: float
    p_feature_mask: float

    def __post_init__(self):
        for name in ("p_edge_remove", "p_feature_mask"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class AugmentPair:
    strong: AugmentConfig
    weak: AugmentConfig


def remove_edges(graph: Graph, p: float, rng: np.random.Generator) -> Graph:
    """Drop each stored undirected edge independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge-removal probability must lie in [0, 1], got {p}")
    keep = rng.random(graph.num_edges) >= p
    return replace(graph, edges=graph.edges[keep])


def mask_features(graph: Graph, p: float, rng: np.random.Generator) -> Graph:
    """Zero a random fraction p of feature dimensions, shared by all nodes."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"feature-mask probability must lie in [0, 1], got {p}")
    keep = rng.random(graph.feature_dim) >= p
    return replace(graph, features=graph.features * keep[None, :])


def apply_augment(graph: Graph, config: AugmentConfig, rng: np.random.Generator) -> Graph:
    """Edge removal first, then feature masking, from one random stream."""
    return mask_features(remove_edges(graph, config.p_edge_remove, rng), config.p_feature_mask, rng)


def make_views(graph: Graph, pair: AugmentPair, rng: np.random.Generator) -> tuple[Graph, Graph]:
    """(strong view, weak view), drawn in that order from the given stream."""
    strong = apply_augment(graph, pair.strong, rng)
    weak = apply_augment(graph, pair.weak, rng)
    return strong, weak
