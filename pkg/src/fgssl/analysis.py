"""Divergence diagnostics and result export.

Linear centered kernel alignment compares two representation matrices on
the same probe rows; the pairwise report runs every client model over one
shared probe graph so scores are comparable. Exports are plain CSV/JSON:
per-round curves, per-method mean/std summaries (sample standard
deviation, ddof=1), final per-node logits, and the CKA matrix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .federation import ExperimentResult, RoundReport
from .gat import GnnModel, extractor_forward
from .graphs import Graph

__all__ = [
    "CkaReport",
    "linear_cka",
    "pairwise_client_cka",
    "summarize",
    "export_curves",
    "read_curves",
    "export_summary",
    "export_logits",
    "export_cka",
]

METRIC_COLUMNS = ["seed", "round", "method", "loss_ce", "loss_fnsc", "loss_fgsd",
                  "loss_total", "val_acc", "test_acc"]


@dataclass(frozen=True)
class CkaReport:
    matrix: np.ndarray  # (M, M) in [0, 1]
    probe: str

    def mean_off_diagonal(self) -> float:
        m = self.matrix.shape[0]
        if m < 2:
            raise ValueError("need at least two models for an off-diagonal mean")
        mask = ~np.eye(m, dtype=bool)
        return float(self.matrix[mask].mean())


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear CKA between two representation matrices with aligned rows.

    Columns are centered first; the score is ||Y'X||_F^2 / (||X'X||_F ||Y'Y||_F),
    lies in [0, 1], and is invariant to orthogonal transforms and non-zero
    isotropic scaling of either argument.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"expected matrices with the same row count, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least two rows")
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(yc.T @ xc, "fro") ** 2
    nx = np.linalg.norm(xc.T @ xc, "fro")
    ny = np.linalg.norm(yc.T @ yc, "fro")
    if nx == 0.0 or ny == 0.0:
        raise ValueError("linear CKA undefined for zero-variance input")
    return float(cross / (nx * ny))


def pairwise_client_cka(models, probe_graph: Graph, probe_idx=None) -> CkaReport:
    """CKA matrix over client models' embeddings on shared probe nodes.

    Every model runs on the full probe graph; rows at `probe_idx` (default:
    the graph's test mask) enter the comparison.
    """
    models = list(models)
    if len(models) < 2:
        raise ValueError("need at least two models")
    if probe_idx is None:
        if probe_graph.masks is None:
            raise ValueError("probe graph has no masks; pass probe_idx explicitly")
        probe_idx = probe_graph.masks.test
    probe_idx = np.asarray(probe_idx, dtype=np.int64)
    reps = [extractor_forward(m, probe_graph).data[probe_idx] for m in models]
    n = len(models)
    mat = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = linear_cka(reps[i], reps[j])
    return CkaReport(matrix=mat, probe=f"test nodes of full graph (n={probe_idx.size})")


# ---------------------------------------------------------------------------
# summaries and file export
# ---------------------------------------------------------------------------


def summarize(results) -> dict:
    """Per-method mean/std (ddof=1) of final and best-validation-round test accuracy."""
    out = {"_std_convention": "sample standard deviation (ddof=1); 0 for a single seed"}
    for res in results:
        finals = res.final_accs()
        bests = res.best_accs()
        out[res.method] = {
            "seeds": [sr.seed for sr in res.seed_results],
            "final_test_mean": float(finals.mean()),
            "final_test_std": float(finals.std(ddof=1)) if finals.size > 1 else 0.0,
            "best_val_test_mean": float(bests.mean()),
            "best_val_test_std": float(bests.std(ddof=1)) if bests.size > 1 else 0.0,
            "per_seed_final": [float(v) for v in finals],
            "per_seed_best": [float(v) for v in bests],
        }
    return out


def export_curves(reports, path) -> None:
    """metrics.csv: one row per (seed, round, method)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in reports:
            writer.writerow([r.seed, r.round, r.method,
                             repr(r.loss_ce), repr(r.loss_fnsc), repr(r.loss_fgsd),
                             repr(r.loss_total), repr(r.val_acc), repr(r.test_acc)])


def read_curves(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != METRIC_COLUMNS:
        raise ValueError(f"{path}: unexpected metrics header {rows[0]}")
    out = []
    for row in rows[1:]:
        out.append(RoundReport(seed=int(row[0]), round=int(row[1]), method=row[2],
                               loss_ce=float(row[3]), loss_fnsc=float(row[4]),
                               loss_fgsd=float(row[5]), loss_total=float(row[6]),
                               val_acc=float(row[7]), test_acc=float(row[8])))
    return out


def export_summary(summary: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def export_logits(graph: Graph, logits: np.ndarray, path) -> None:
    """logits.csv: node_id, class_0..class_{C-1}, label (raw, for external plots)."""
    logits = np.asarray(getattr(logits, "data", logits))
    if logits.shape != (graph.num_nodes, graph.num_classes):
        raise ValueError(f"logits shape {logits.shape} does not match the graph")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id"] + [f"class_{c}" for c in range(graph.num_classes)] + ["label"])
        for i in range(graph.num_nodes):
            writer.writerow([i] + [repr(float(v)) for v in logits[i]] + [int(graph.labels[i])])


def export_cka(report: CkaReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in report.matrix:
            writer.writerow([repr(float(v)) for v in row])
