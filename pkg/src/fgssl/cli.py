"""Command-line experiment driver.

    fgssl prepare --config c.yaml [--set k=v]... [--out dir]
    fgssl train   --config c.yaml [--set k=v]... [--out dir] [--threads n]
    fgssl sweep   --config c.yaml ...
    fgssl ablate  --config c.yaml ...
    fgssl cka     --config c.yaml --checkpoints a.ckpt b.ckpt ... [--out dir]

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
Reruns with identical config and seeds reproduce outputs bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .autodiff import NumericsError
from .config import ConfigError, load_config, resolve_graph, resolve_partition, to_train_config
from .federation import run_experiment
from .gat import build_model, load_checkpoint, model_forward, save_checkpoint, set_params
from .graphs import GraphLoadError, save_masks
from .partition import communities_to_clients, louvain_partition, modularity, save_partition

log = logging.getLogger("fgssl.cli")


def _out_dir(cfg: dict, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_prepare(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    graph = resolve_graph(cfg)
    save_masks(graph.masks, out / "masks.tsv")
    partition = resolve_partition(cfg, graph)
    save_partition(partition, out / "partition.tsv")
    sizes = np.bincount(partition.client_of, minlength=partition.num_clients)
    if cfg["partition"]["file"] is None and partition.num_clients > 1:
        communities = louvain_partition(graph, seed=int(cfg["partition"]["louvain_seed"]))
        log.info("louvain found %d communities, Q=%.4f",
                 communities.num_communities, modularity(graph, communities))
    print(f"prepared {graph.num_nodes} nodes / {graph.num_edges} edges into "
          f"{partition.num_clients} client(s), sizes {sizes.tolist()}")
    print(f"wrote {out / 'masks.tsv'} and {out / 'partition.tsv'}")
    return 0


def _run_methods(cfg: dict, graph, partition, threads):
    results = []
    for method in cfg["train"]["methods"]:
        results.append(run_experiment(graph, partition, to_train_config(cfg, method), threads=threads))
    return results


def _save_run_outputs(cfg: dict, out: Path, graph, results) -> None:
    reports = [r for res in results for r in res.reports]
    analysis.export_curves(reports, out / "metrics.csv")
    analysis.export_summary(analysis.summarize(results), out / "summary.json")
    for res in results:
        for sr in res.seed_results:
            if sr.global_params is not None:
                model = build_model(graph.feature_dim, graph.num_classes,
                                    hidden_dim=int(cfg["train"]["hidden_dim"]),
                                    heads=int(cfg["train"]["heads"]), seed=0)
                set_params(model, sr.global_params)
                if sr is res.seed_results[0]:
                    _, z = model_forward(model, graph)
                    analysis.export_logits(graph, z.data, out / f"logits_{res.method}.csv")
                if cfg["output"]["save_checkpoints"]:
                    ckpt_dir = out / "ckpt"
                    ckpt_dir.mkdir(exist_ok=True)
                    save_checkpoint(model, ckpt_dir / f"{res.method}_seed{sr.seed}_global.ckpt")
            if cfg["output"]["save_checkpoints"]:
                ckpt_dir = out / "ckpt"
                ckpt_dir.mkdir(exist_ok=True)
                for client_model, cid in zip(sr.client_models, range(len(sr.client_models))):
                    save_checkpoint(client_model, ckpt_dir / f"{res.method}_seed{sr.seed}_client{cid}.ckpt")


def cmd_train(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    graph = resolve_graph(cfg)
    partition = resolve_partition(cfg, graph)
    results = _run_methods(cfg, graph, partition, args.threads if args.threads else cfg["threads"])
    _save_run_outputs(cfg, out, graph, results)
    summary = analysis.summarize(results)
    for method in cfg["train"]["methods"]:
        s = summary[method]
        print(f"{method}: final {100 * s['final_test_mean']:.2f} +- {100 * s['final_test_std']:.2f}, "
              f"best-val {100 * s['best_val_test_mean']:.2f} +- {100 * s['best_val_test_std']:.2f}")
    return 0


def cmd_sweep(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    axes = {name: list(cfg["sweep"][name]) for name in ("tau", "omega", "lambda_c", "lambda_d", "eta")}
    active = {k: v for k, v in axes.items() if v}
    if not active:
        raise ConfigError("sweep grid is empty; set at least one of sweep.{tau,omega,lambda_c,lambda_d,eta}")
    graph = resolve_graph(cfg)
    partition = resolve_partition(cfg, graph)
    names = sorted(active)
    rows = []
    for combo in itertools.product(*(active[k] for k in names)):
        cell = dict(zip(names, combo))
        cell_cfg = apply_sweep_cell(cfg, cell)
        results = _run_methods(cell_cfg, graph, partition, args.threads if args.threads else cfg["threads"])
        summary = analysis.summarize(results)
        for method in cell_cfg["train"]["methods"]:
            s = summary[method]
            rows.append({
                "method": method,
                "tau": cell.get("tau", cfg["loss"]["tau"]),
                "omega": cell.get("omega", cfg["loss"]["omega"]),
                "lambda_c": cell.get("lambda_c", cfg["loss"]["lambda_c"]),
                "lambda_d": cell.get("lambda_d", cfg["loss"]["lambda_d"]),
                "eta": cell.get("eta", cfg["train"]["lr"]),
                "final_test_mean": s["final_test_mean"],
                "final_test_std": s["final_test_std"],
                "best_val_test_mean": s["best_val_test_mean"],
                "best_val_test_std": s["best_val_test_std"],
            })
            print(f"{method} {cell}: best-val {100 * s['best_val_test_mean']:.2f}")
    _write_rows(out / "sweep.csv", rows)
    return 0


def apply_sweep_cell(cfg: dict, cell: dict) -> dict:
    """Deep-copied config with one sweep cell applied."""
    import copy

    out = copy.deepcopy(cfg)
    if "tau" in cell:
        out["loss"]["tau"] = float(cell["tau"])
    if "omega" in cell:
        out["loss"]["omega"] = float(cell["omega"])
    if "lambda_c" in cell:
        out["loss"]["lambda_c"] = float(cell["lambda_c"])
    if "lambda_d" in cell:
        out["loss"]["lambda_d"] = float(cell["lambda_d"])
    if "eta" in cell:
        out["train"]["lr"] = float(cell["eta"])
    return out


def cmd_ablate(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    graph = resolve_graph(cfg)
    partition = resolve_partition(cfg, graph)
    threads = args.threads if args.threads else cfg["threads"]
    base_lc = float(cfg["loss"]["lambda_c"])
    base_ld = float(cfg["loss"]["lambda_d"])

    rows = []
    for use_c, use_d in ((False, False), (False, True), (True, False), (True, True)):
        cell = apply_sweep_cell(cfg, {
            "lambda_c": base_lc if use_c else 0.0,
            "lambda_d": base_ld if use_d else 0.0,
        })
        tc = to_train_config(cell, "FGSSL")
        res = run_experiment(graph, partition, tc, threads=threads)
        s = analysis.summarize([res])["FGSSL"]
        rows.append({"fnsc": "on" if use_c else "off", "fgsd": "on" if use_d else "off",
                     "final_test_mean": s["final_test_mean"], "final_test_std": s["final_test_std"],
                     "best_val_test_mean": s["best_val_test_mean"],
                     "best_val_test_std": s["best_val_test_std"]})
        print(f"fnsc={rows[-1]['fnsc']} fgsd={rows[-1]['fgsd']}: "
              f"best-val {100 * s['best_val_test_mean']:.2f}")
    _write_rows(out / "ablation_components.csv", rows)

    # augmentation 2x2 on the contrast-only variant: pair.strong feeds the
    # local model, pair.weak feeds the frozen model, whatever their strengths
    aug_rows = []
    presets = {"weak": cfg["augment"]["weak"], "strong": cfg["augment"]["strong"]}
    for local_kind, global_kind in (("weak", "weak"), ("weak", "strong"),
                                    ("strong", "strong"), ("strong", "weak")):
        cell = apply_sweep_cell(cfg, {"lambda_d": 0.0})
        cell["augment"] = {"strong": dict(presets[local_kind]), "weak": dict(presets[global_kind])}
        tc = to_train_config(cell, "FGSSL")
        res = run_experiment(graph, partition, tc, threads=threads)
        s = analysis.summarize([res])["FGSSL"]
        aug_rows.append({"local": local_kind, "global": global_kind,
                         "final_test_mean": s["final_test_mean"],
                         "final_test_std": s["final_test_std"],
                         "best_val_test_mean": s["best_val_test_mean"],
                         "best_val_test_std": s["best_val_test_std"]})
        print(f"local={local_kind} global={global_kind}: best-val {100 * s['best_val_test_mean']:.2f}")
    _write_rows(out / "ablation_augment.csv", aug_rows)
    return 0


def cmd_cka(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    if len(args.checkpoints) < 2:
        raise ConfigError("cka needs at least two --checkpoints")
    models = [load_checkpoint(p) for p in args.checkpoints]
    graph = resolve_graph(cfg)
    report = analysis.pairwise_client_cka(models, graph)
    analysis.export_cka(report, out / "cka.csv")
    print(f"wrote {out / 'cka.csv'} ({report.matrix.shape[0]}x{report.matrix.shape[1]}, "
          f"mean off-diagonal {report.mean_off_diagonal():.4f})")
    return 0


def _write_rows(path: Path, rows: list) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgssl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("prepare", cmd_prepare), ("train", cmd_train), ("sweep", cmd_sweep),
                     ("ablate", cmd_ablate), ("cka", cmd_cka)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", default=None, help="output directory (default: output.dir)")
        p.add_argument("--threads", type=int, default=None,
                       help="client-level parallelism (default: min(clients, cpus))")
        if name == "cka":
            p.add_argument("--checkpoints", nargs="+", default=[], help="model checkpoint files")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return args.handler(cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericsError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except (GraphLoadError, OSError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
