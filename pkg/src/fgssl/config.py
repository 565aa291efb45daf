"""Experiment configuration: defaults, YAML loading, dotted overrides.

One config tree drives every command. Unknown keys are hard errors so a
typo never silently falls back to a default. `--set a.b.c=value` overrides
win over the file; values parse as YAML scalars. The FGSSL_SEED environment
variable (comma-separated ints) overrides train.seeds.
"""

from __future__ import annotations

import copy
import logging
import os
from pathlib import Path

import numpy as np
import yaml

from .augment import AugmentConfig, AugmentPair
from .federation import TrainConfig
from .graphs import Graph, generate_sbm, load_graph, split_nodes
from .losses import FgsdConfig, FnscConfig
from .partition import ClientPartition, communities_to_clients, load_partition, louvain_partition

log = logging.getLogger("fgssl.config")

__all__ = ["ConfigError", "DEFAULTS", "load_config", "resolve_graph", "resolve_partition", "to_train_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


SBM_DEFAULTS = {
    "blocks": 3,
    "nodes_per_block": 200,
    "p_in": 0.05,
    "p_out": 0.01,
    "feature_noise": 1.0,
    "seed": 0,
}

DEFAULTS = {
    "dataset": {
        "path": None,  # directory with meta.json / edges.tsv / features.csv / labels.tsv
        "sbm": None,  # synthetic source; see SBM_DEFAULTS for the inner keys
    },
    "split": {
        "ratios": [0.6, 0.2, 0.2],
        "seed": 0,
    },
    "partition": {
        "clients": 5,
        "louvain_seed": 0,
        "assign_seed": 0,
        "file": None,  # partition.tsv path; replaces the louvain source
    },
    "train": {
        "methods": ["FedAvg"],
        "rounds": 200,
        "local_epochs": 4,
        "lr": 0.01,
        "momentum": 0.9,
        "weight_decay": 5.0e-4,
        "hidden_dim": 128,
        "heads": 1,
        "seeds": [0, 1, 2],
        "reset_velocity": False,
        "steps_per_epoch": 1,
    },
    "loss": {
        "tau": 0.1,
        "omega": 5.0,
        "lambda_c": 1.0,
        "lambda_d": 1.0,
        "key_source": "global",
    },
    "prox": {
        "mu": 0.01,
    },
    "augment": {
        "weak": {"edge": 0.2, "feat": 0.2},
        "strong": {"edge": 0.4, "feat": 0.4},
    },
    "sweep": {
        "tau": [],
        "omega": [],
        "lambda_c": [],
        "lambda_d": [],
        "eta": [],
    },
    "output": {
        "dir": "runs",
        "save_checkpoints": False,
    },
    "threads": None,
}


def _check_keys(user: dict, schema: dict, prefix: str = "") -> None:
    for key, value in user.items():
        where = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {where}")
        default = schema[key]
        if isinstance(default, dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be a mapping")
            _check_keys(value, default, prefix=f"{where}.")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse value for {dotted}: {err}") from err

    schema = DEFAULTS
    node = cfg
    for i, k in enumerate(keys[:-1]):
        if not isinstance(schema, dict) or k not in schema:
            raise ConfigError(f"unknown config key: {'.'.join(keys[: i + 1])}")
        schema = schema[k]
        if schema is None and k == "sbm":
            schema = SBM_DEFAULTS
        if node.get(k) is None:
            node[k] = copy.deepcopy(SBM_DEFAULTS) if k == "sbm" else {}
        node = node[k]
    last = keys[-1]
    if not isinstance(schema, dict) or last not in schema:
        raise ConfigError(f"unknown config key: {dotted}")
    node[last] = value


def load_config(path=None, overrides=()) -> dict:
    """Merged, validated config tree: defaults <- file <- --set overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {p}: {err}") from err
        if not isinstance(user, dict):
            raise ConfigError(f"{p} must contain a mapping at the top level")
        schema = copy.deepcopy(DEFAULTS)
        schema["dataset"]["sbm"] = SBM_DEFAULTS
        _check_keys(user, schema)
        if isinstance(user.get("dataset", {}).get("sbm"), dict):
            user["dataset"]["sbm"] = _merge(SBM_DEFAULTS, user["dataset"]["sbm"])
        cfg = _merge(cfg, user)
    for assignment in overrides:
        _apply_set(cfg, assignment)

    env_seeds = os.environ.get("FGSSL_SEED")
    if env_seeds:
        try:
            cfg["train"]["seeds"] = [int(s) for s in env_seeds.replace(",", " ").split()]
        except ValueError as err:
            raise ConfigError(f"FGSSL_SEED must be comma-separated integers: {env_seeds!r}") from err

    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    ds = cfg["dataset"]
    if (ds["path"] is None) == (ds["sbm"] is None):
        raise ConfigError("exactly one dataset source is required: dataset.path or dataset.sbm")
    if ds["sbm"] is not None:
        _check_keys(ds["sbm"], SBM_DEFAULTS, prefix="dataset.sbm.")
    ratios = cfg["split"]["ratios"]
    if len(ratios) != 3:
        raise ConfigError("split.ratios must have three entries")
    for method in cfg["train"]["methods"]:
        from .federation import METHODS

        if method not in METHODS:
            raise ConfigError(f"train.methods entries must be in {METHODS}, got {method!r}")
    if not cfg["train"]["seeds"]:
        raise ConfigError("train.seeds must be non-empty")
    if cfg["partition"]["file"] is not None and not Path(cfg["partition"]["file"]).is_file():
        raise ConfigError(f"partition.file not found: {cfg['partition']['file']}")


# ---------------------------------------------------------------------------
# turning config into runtime objects
# ---------------------------------------------------------------------------


def resolve_graph(cfg: dict) -> Graph:
    """Load or generate the graph; attach masks (dataset-provided or split)."""
    ds = cfg["dataset"]
    if ds["path"] is not None:
        graph = load_graph(ds["path"])
    else:
        s = ds["sbm"]
        graph = generate_sbm(blocks=int(s["blocks"]), nodes_per_block=int(s["nodes_per_block"]),
                             p_in=float(s["p_in"]), p_out=float(s["p_out"]),
                             feature_noise=float(s["feature_noise"]), seed=int(s["seed"]))
    if graph.masks is None:
        masks = split_nodes(graph, tuple(cfg["split"]["ratios"]), int(cfg["split"]["seed"]))
        graph = graph.with_masks(masks)
    else:
        log.info("using masks shipped with the dataset")
    return graph


def resolve_partition(cfg: dict, graph: Graph) -> ClientPartition:
    part = cfg["partition"]
    if part["file"] is not None:
        partition = load_partition(part["file"])
        if partition.client_of.size != graph.num_nodes:
            raise ConfigError(
                f"partition file covers {partition.client_of.size} nodes, graph has {graph.num_nodes}"
            )
        return partition
    m = int(part["clients"])
    if m == 1:
        return ClientPartition(client_of=np.zeros(graph.num_nodes, dtype=np.int64), num_clients=1)
    communities = louvain_partition(graph, seed=int(part["louvain_seed"]))
    return communities_to_clients(communities, m, seed=int(part["assign_seed"]))


def to_train_config(cfg: dict, method: str) -> TrainConfig:
    t = cfg["train"]
    a = cfg["augment"]
    return TrainConfig(
        method=method,
        rounds=int(t["rounds"]),
        local_epochs=int(t["local_epochs"]),
        lr=float(t["lr"]),
        momentum=float(t["momentum"]),
        weight_decay=float(t["weight_decay"]),
        hidden_dim=int(t["hidden_dim"]),
        heads=int(t["heads"]),
        fnsc=FnscConfig(tau=float(cfg["loss"]["tau"]), lambda_c=float(cfg["loss"]["lambda_c"]),
                        key_source=str(cfg["loss"]["key_source"])),
        fgsd=FgsdConfig(omega=float(cfg["loss"]["omega"]), lambda_d=float(cfg["loss"]["lambda_d"])),
        augment=AugmentPair(
            strong=AugmentConfig(float(a["strong"]["edge"]), float(a["strong"]["feat"])),
            weak=AugmentConfig(float(a["weak"]["edge"]), float(a["weak"]["feat"])),
        ),
        prox_mu=float(cfg["prox"]["mu"]),
        seeds=tuple(int(s) for s in t["seeds"]),
        reset_velocity=bool(t["reset_velocity"]),
        steps_per_epoch=int(t["steps_per_epoch"]),
    )
