"""Federated round orchestration: broadcast, local updates, aggregation.

Methods
-------
Local    clients train independently; no synchronization after a shared init
Global   one client holding the full graph (centralized reference)
FedAvg   weighted parameter averaging each round
FedProx  FedAvg plus a proximal pull toward the broadcast parameters
FGSSL    FedAvg plus cross-view node contrast and neighbor-similarity
         distillation against the frozen broadcast model

A local update runs E full-batch epochs. Under FGSSL each epoch computes
cross-entropy on the clean graph, then draws a strong/weak view pair
(per-(seed, client, round, epoch) streams), contrasts local strong-view
embeddings against frozen weak-view embeddings, and distills the frozen
model's neighbor-similarity distributions over the client's stored
adjacency. Clients whose train split holds a single class skip the
contrast term (it has no negatives there); clients without edges skip
distillation.

Optimizer velocity persists across rounds by default so that one client
training T rounds of E epochs is bit-identical to a plain T*E-epoch loop;
`reset_velocity` restores fresh-per-round behavior.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, AugmentPair, make_views
from .autodiff import NumericsError, SgdState, sgd_step
from .gat import (
    GnnModel,
    build_model,
    classifier_forward,
    extractor_forward,
    freeze_model,
    get_params,
    message_structure,
    model_forward,
    set_params,
)
from .graphs import Graph
from .losses import FgsdConfig, FnscConfig, cross_entropy, fgsd_loss, fnsc_loss, prox_term, total_loss
from .partition import ClientPartition, induce_subgraph

log = logging.getLogger("fgssl.federation")

METHODS = ("Local", "Global", "FedAvg", "FedProx", "FGSSL")

__all__ = [
    "METHODS",
    "TrainConfig",
    "ClientState",
    "ServerState",
    "RoundReport",
    "SeedResult",
    "ExperimentResult",
    "make_clients",
    "broadcast",
    "local_update",
    "aggregate",
    "evaluate",
    "run_single_seed",
    "run_experiment",
]


def _default_augment() -> AugmentPair:
    return AugmentPair(strong=AugmentConfig(0.4, 0.4), weak=AugmentConfig(0.2, 0.2))


@dataclass(frozen=True)
class TrainConfig:
    method: str = "FedAvg"
    rounds: int = 200
    local_epochs: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hidden_dim: int = 128
    heads: int = 1
    fnsc: FnscConfig = field(default_factory=FnscConfig)
    fgsd: FgsdConfig = field(default_factory=FgsdConfig)
    augment: AugmentPair = field(default_factory=_default_augment)
    prox_mu: float = 0.01
    seeds: tuple = (0, 1, 2)
    reset_velocity: bool = False
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.rounds < 1 or self.local_epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("rounds, local_epochs and steps_per_epoch must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class ClientState:
    client_id: int
    data: Graph
    original_ids: np.ndarray
    model: GnnModel
    optimizer: SgdState
    run_seed: int
    warned_single_class: bool = False

    @property
    def size(self) -> int:
        return self.data.num_nodes


@dataclass
class ServerState:
    params: list
    round: int = 0


@dataclass(frozen=True)
class RoundReport:
    seed: int
    round: int
    method: str
    loss_ce: float
    loss_fnsc: float
    loss_fgsd: float
    loss_total: float
    val_acc: float
    test_acc: float


@dataclass
class SeedResult:
    seed: int
    method: str
    reports: list
    final_test: float
    best_val_round: int
    best_val_test: float
    global_params: list
    client_models: list


@dataclass
class ExperimentResult:
    method: str
    seed_results: list

    @property
    def reports(self) -> list:
        return [r for sr in self.seed_results for r in sr.reports]

    def final_accs(self) -> np.ndarray:
        return np.array([sr.final_test for sr in self.seed_results])

    def best_accs(self) -> np.ndarray:
        return np.array([sr.best_val_test for sr in self.seed_results])


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def make_clients(graph: Graph, partition: ClientPartition, config: TrainConfig, run_seed: int) -> list[ClientState]:
    if graph.masks is None:
        raise ValueError("graph needs split masks before federated training")
    clients = []
    for m in range(partition.num_clients):
        sub = induce_subgraph(graph, partition.members(m))
        model = build_model(graph.feature_dim, graph.num_classes,
                            hidden_dim=config.hidden_dim, heads=config.heads, seed=run_seed)
        opt = SgdState(lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
        clients.append(ClientState(client_id=m, data=sub.graph, original_ids=sub.original_ids,
                                   model=model, optimizer=opt, run_seed=run_seed))
    return clients


def broadcast(server: ServerState, clients, reset_velocity: bool = False) -> None:
    """Copy the global parameters into every client (no aliasing)."""
    for c in clients:
        set_params(c.model, server.params)
        if reset_velocity and c.optimizer.velocities:
            c.optimizer.reset_velocity()


def aggregate(param_lists, sizes) -> list:
    """Node-count-weighted parameter mean, summed in client-id order.

    Anchored at client 0 so any coordinate all clients agree on (and the
    whole vector when M == 1) is preserved bit-exactly.
    """
    total = float(sum(sizes))
    if total <= 0:
        raise ValueError("aggregate needs a positive total size")
    if any(len(p) != len(param_lists[0]) for p in param_lists):
        raise ValueError("clients disagree on the number of parameter blocks")
    weights = [s / total for s in sizes]
    out = []
    for b in range(len(param_lists[0])):
        base = param_lists[0][b]
        delta = np.zeros_like(base)
        for m, w in enumerate(weights):
            blk = param_lists[m][b]
            if blk.shape != base.shape:
                raise ValueError(f"parameter block {b} shape mismatch across clients")
            delta += w * (blk - base)
        out.append(base + delta)
    return out


def local_update(client: ClientState, global_model: GnnModel | None, config: TrainConfig,
                 round_idx: int) -> dict:
    """Run E local epochs on one client; returns the last epoch's loss parts."""
    g = client.data
    train_idx = g.masks.train if g.masks is not None else np.empty(0, np.int64)
    parts = {"ce": 0.0, "fnsc": 0.0, "fgsd": 0.0, "total": 0.0}
    if train_idx.size == 0:
        log.warning("client %d has no train nodes; skipping local update", client.client_id)
        return parts

    is_fgssl = config.method == "FGSSL"
    lam_c = config.fnsc.lambda_c if is_fgssl else 0.0
    lam_d = config.fgsd.lambda_d if is_fgssl else 0.0
    can_contrast = np.unique(g.labels[train_idx]).size >= 2
    if is_fgssl and lam_c > 0 and not can_contrast and not client.warned_single_class:
        # with no negatives the contrast term is identically zero, so skip it
        log.warning("client %d train split has one class; contrast term skipped", client.client_id)
        client.warned_single_class = True
    global_ref = get_params(global_model) if config.method == "FedProx" else None

    params = client.model.parameters()
    try:
        for epoch in range(config.local_epochs):
            for _ in range(config.steps_per_epoch):
                _, z = model_forward(client.model, g)
                ce = cross_entropy(z, g.labels, train_idx)
                loss = ce
                if config.method == "FedProx":
                    loss = ad.add(ce, prox_term(params, global_ref, config.prox_mu))
                fnsc_val = 0.0
                fgsd_val = 0.0
                if is_fgssl and (lam_c > 0.0 or lam_d > 0.0):
                    rng = np.random.default_rng([client.run_seed, round_idx, epoch, client.client_id])
                    strong, weak = make_views(g, config.augment, rng)
                    s_msgs = message_structure(strong)
                    w_msgs = message_structure(weak)
                    h_local = extractor_forward(client.model, strong, s_msgs)
                    h_global = extractor_forward(global_model, weak, w_msgs)
                    fnsc = ad.Tensor(0.0)
                    fgsd = ad.Tensor(0.0)
                    if lam_c > 0.0 and can_contrast:
                        keys = h_global if config.fnsc.key_source == "global" else h_local
                        fnsc = fnsc_loss(h_local, keys, g.labels, train_idx, config.fnsc)
                        fnsc_val = float(fnsc.data)
                    if lam_d > 0.0:
                        z_local = classifier_forward(client.model, h_local, strong, s_msgs)
                        z_global = classifier_forward(global_model, h_global, weak, w_msgs)
                        fgsd = fgsd_loss(z_local, z_global.data, g, config.fgsd.omega)
                        fgsd_val = float(fgsd.data)
                    loss = total_loss(loss, fnsc, fgsd, lam_c, lam_d)
                ad.zero_grad(params)
                ad.backward(loss)
                sgd_step(params, [p.grad for p in params], client.optimizer)
                parts = {"ce": float(ce.data), "fnsc": fnsc_val, "fgsd": fgsd_val,
                         "total": float(loss.data)}
    except NumericsError as err:
        raise NumericsError(
            f"non-finite value at client {client.client_id}, round {round_idx}: {err}"
        ) from err
    return parts


def evaluate(model: GnnModel, clients, split: str = "test") -> float:
    """Accuracy of one model pooled over every client's split nodes."""
    correct = 0
    total = 0
    for c in clients:
        idx = getattr(c.data.masks, split)
        if idx.size == 0:
            continue
        _, z = model_forward(model, c.data)
        pred = z.data.argmax(axis=1)
        correct += int((pred[idx] == c.data.labels[idx]).sum())
        total += int(idx.size)
    if total == 0:
        raise ValueError(f"no nodes in split {split!r} on any client")
    return correct / total


def evaluate_local_models(clients, split: str = "test") -> float:
    """Mean over clients of each local model's pooled accuracy.

    Each independently trained model is scored on every client's split
    nodes, so a model that only ever saw a few classes pays for it.
    """
    return float(np.mean([evaluate(c.model, clients, split) for c in clients]))


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def _resolve_threads(threads: int | None, num_clients: int) -> int:
    if threads is not None:
        return max(1, int(threads))
    return max(1, min(num_clients, os.cpu_count() or 1))


def run_single_seed(graph: Graph, partition: ClientPartition, config: TrainConfig, seed: int,
                    threads: int | None = None) -> SeedResult:
    if config.method == "Global":
        partition = ClientPartition(client_of=np.zeros(graph.num_nodes, dtype=np.int64), num_clients=1)
    clients = make_clients(graph, partition, config, seed)
    sizes = [c.size for c in clients]
    init = build_model(graph.feature_dim, graph.num_classes,
                       hidden_dim=config.hidden_dim, heads=config.heads, seed=seed)
    server = ServerState(params=get_params(init))
    eval_model = build_model(graph.feature_dim, graph.num_classes,
                             hidden_dim=config.hidden_dim, heads=config.heads, seed=seed)

    is_local = config.method == "Local"
    needs_snapshot = config.method in ("FGSSL", "FedProx")
    n_threads = _resolve_threads(threads, len(clients))
    reports = []
    broadcast(server, clients)  # shared init for every method

    for t in range(config.rounds):
        if not is_local and t > 0:
            broadcast(server, clients, reset_velocity=config.reset_velocity)
        snapshot = freeze_model(eval_and_set(eval_model, server.params)) if needs_snapshot else None

        def work(client: ClientState) -> dict:
            return local_update(client, snapshot, config, t)

        if n_threads > 1 and len(clients) > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                losses = list(pool.map(work, clients))
        else:
            losses = [work(c) for c in clients]

        if needs_snapshot:
            _assert_frozen(snapshot, server.params)
        if not is_local:
            server.params = aggregate([get_params(c.model) for c in clients], sizes)
        server.round = t + 1

        if is_local:
            val_acc = evaluate_local_models(clients, "val")
            test_acc = evaluate_local_models(clients, "test")
        else:
            shared = eval_and_set(eval_model, server.params)
            val_acc = evaluate(shared, clients, "val")
            test_acc = evaluate(shared, clients, "test")
        w = np.asarray(sizes, dtype=np.float64)
        w /= w.sum()
        reports.append(RoundReport(
            seed=seed, round=t, method=config.method,
            loss_ce=float(sum(wi * l["ce"] for wi, l in zip(w, losses))),
            loss_fnsc=float(sum(wi * l["fnsc"] for wi, l in zip(w, losses))),
            loss_fgsd=float(sum(wi * l["fgsd"] for wi, l in zip(w, losses))),
            loss_total=float(sum(wi * l["total"] for wi, l in zip(w, losses))),
            val_acc=val_acc,
            test_acc=test_acc,
        ))

    best = max(range(len(reports)), key=lambda i: (reports[i].val_acc, -i))
    return SeedResult(
        seed=seed, method=config.method, reports=reports,
        final_test=reports[-1].test_acc,
        best_val_round=best, best_val_test=reports[best].test_acc,
        global_params=server.params if not is_local else None,
        client_models=[c.model for c in clients],
    )


def eval_and_set(model: GnnModel, params) -> GnnModel:
    set_params(model, params)
    return model


def _assert_frozen(snapshot: GnnModel, reference) -> None:
    for p, r in zip(snapshot.parameters(), reference):
        if not np.array_equal(p.data, r):
            raise AssertionError("frozen global snapshot was mutated during local updates")


def run_experiment(graph: Graph, partition: ClientPartition, config: TrainConfig,
                   threads: int | None = None) -> ExperimentResult:
    """Train config.seeds independent runs; one SeedResult per seed."""
    results = []
    for seed in config.seeds:
        log.info("method=%s seed=%d: %d rounds x %d epochs on %d clients",
                 config.method, seed, config.rounds, config.local_epochs, partition.num_clients)
        results.append(run_single_seed(graph, partition, config, seed, threads=threads))
    return ExperimentResult(method=config.method, seed_results=results)
