"""Federated graph learning simulator with a from-scratch differentiable GAT.

Subpackages cover the full pipeline: graph ingestion and synthetic
generation, Louvain-based client partitioning, a reverse-mode autodiff
engine, the attention network, graph-view augmentation, the training
objectives (cross-entropy, supervised cross-view contrast, neighbor-
similarity distillation, proximal penalty), federated round orchestration,
and divergence analysis/export.
"""

__version__ = "0.1.0"
