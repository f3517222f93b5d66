"""Command-line driver.

    nrgcn precompute --config exp.json
    nrgcn train      --config exp.json [--seed S] [--out DIR] [--deterministic]
    nrgcn eval       --config exp.json [--checkpoint model.nrgm]
    nrgcn attack     --config exp.json [--mode evasion] [--T 1 2 3 4]
    nrgcn sweep-p2   --config exp.json [--p2 1 2 3 4 5]
    nrgcn bench      [--config exp.json | --synthetic N]
    nrgcn convert-planetoid RAW_DIR NAME OUT_DIR
    nrgcn synth OUT_DIR [--nodes N]
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend
from .attacks import attack_run, write_edit_log
from .datasets import load_planetoid, make_synthetic
from .experiment import ExperimentConfig, get_tensor, load_dataset, run_once, summarize, sweep_p2
from .graph import row_normalize, save_bundle
from .model import TrainConfig, evaluate, init_params, load_checkpoint, save_checkpoint, train
from .precompute import build_embedding_tensor
from .sampler import sample_all

log = logging.getLogger("nrgcn")

HISTORY_COLUMNS = ["epoch", "train_loss", "val_acc", "test_acc", "epoch_seconds", "train_acc", "val_loss"]


def write_csv(path, rows, columns=None):
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def print_table(rows, columns):
    cells = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for row in cells:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if getattr(args, "bundle", None):
        cfg.bundle = str(Path(args.bundle).resolve())
    if args.seed is not None:
        cfg.sampling_seed = cfg.init_seed = cfg.training_seed = args.seed
    if args.out:
        cfg.out = args.out
    if args.deterministic:
        cfg.deterministic = True
    if getattr(args, "num_seeds", None):
        cfg.num_seeds = args.num_seeds
    if getattr(args, "epochs", None):
        cfg.model["max_epochs"] = args.epochs
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    if cfg.cache_dir is None:
        cfg.cache_dir = str(Path(cfg.out) / "cache")
    return cfg


@contextlib.contextmanager
def execution_mode(cfg: ExperimentConfig):
    """Single-threaded BLAS and kernels in deterministic mode."""
    if not cfg.deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_precompute(args) -> int:
    cfg = load_config(args)
    bundle = load_dataset(cfg)
    with execution_mode(cfg):
        rows = []
        for run in range(cfg.num_seeds):
            seed = cfg.seeds_for(run)["sampling"]
            tensor, info = get_tensor(bundle.graph, bundle.features, cfg.plan, seed, cfg.cache_dir, cfg.backend,
                                      1 if cfg.deterministic else cfg.threads)
            rows.append({"seed": seed, "shape": "x".join(map(str, tensor.values.shape)),
                         "seconds": info["seconds"], "cache_hit": info["cache_hit"], "path": info["path"]})
    print_table(rows, ["seed", "shape", "seconds", "cache_hit", "path"])
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    bundle = load_dataset(cfg)
    out = _out(cfg)
    results = []
    t_start = time.perf_counter()
    with execution_mode(cfg):
        for run in range(cfg.num_seeds):
            r = run_once(bundle, cfg, run)
            run_dir = out / f"seed{run}"
            run_dir.mkdir(exist_ok=True)
            write_csv(run_dir / "history.csv", r.history, HISTORY_COLUMNS)
            save_checkpoint(r.params, cfg.plan, run_dir / "model.nrgm")
            epoch_seconds = [h["epoch_seconds"] for h in r.history]
            report = {
                "config": cfg.to_dict(), "seeds": r.seeds, "history": r.history,
                "train_acc": r.train_acc, "val_acc": r.val_acc, "test_acc": r.test_acc,
                "timings": {"precompute_seconds": r.precompute_seconds,
                            "epoch_seconds_mean": float(np.mean(epoch_seconds)) if epoch_seconds else 0.0,
                            "train_seconds": r.train_seconds},
            }
            (run_dir / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
            results.append({"run": run, "sampling_seed": r.seeds["sampling"], "epochs": len(r.history),
                            "train_acc": r.train_acc, "val_acc": r.val_acc, "test_acc": r.test_acc,
                            "precompute_s": r.precompute_seconds, "train_s": r.train_seconds})
    mean, std = summarize([r["test_acc"] for r in results])
    summary = {"config": cfg.to_dict(), "runs": results, "test_acc_mean": mean, "test_acc_std": std,
               "total_seconds": time.perf_counter() - t_start}
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    write_csv(out / "summary.csv", results)
    print_table(results, ["run", "sampling_seed", "epochs", "train_acc", "val_acc", "test_acc", "precompute_s",
                          "train_s"])
    print(f"test accuracy: {mean:.4f} +- {std:.4f} over {len(results)} seeds")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args)
    bundle = load_dataset(cfg)
    ckpt = Path(args.checkpoint or Path(cfg.out) / "seed0" / "model.nrgm")
    params, plan = load_checkpoint(ckpt)
    tensor, _ = get_tensor(bundle.graph, bundle.features, plan, cfg.sampling_seed, cfg.cache_dir, cfg.backend,
                           cfg.threads)
    rows = [{"split": name, "nodes": len(mask), "accuracy": evaluate(params, tensor, bundle.labels, mask, plan)}
            for name, mask in (("train", bundle.splits.train), ("val", bundle.splits.val),
                               ("test", bundle.splits.test)) if len(mask)]
    print_table(rows, ["split", "nodes", "accuracy"])
    return 0


def monotone_decreasing(values, slack: float = 0.005) -> bool:
    """Strictly decreasing, tolerating at most one inversion of size <= ``slack``."""
    inversions = 0
    for a, b in zip(values, values[1:]):
        if b < a:
            continue
        if b - a <= slack:
            inversions += 1
        else:
            return False
    return inversions <= 1


def cmd_attack(args) -> int:
    cfg = load_config(args)
    if args.mode or args.T:
        cfg.attack = dict(cfg.attack or {})
        if args.mode:
            cfg.attack["mode"] = args.mode
        if args.T:
            cfg.attack["T"] = args.T
    bundle = load_dataset(cfg)
    out = _out(cfg)
    rows = []
    with execution_mode(cfg):
        for spec in cfg.attack_specs():
            accs = []
            for run in range(cfg.num_seeds):
                r = attack_run(bundle, cfg.plan, cfg.train_config(run), spec, cfg.seeds_for(run)["sampling"],
                               cfg.cache_dir, cfg.backend, 1 if cfg.deterministic else cfg.threads)
                accs.append(r["accuracy"])
                if run == 0:
                    write_edit_log(r["edits"], out / f"edits-{spec.mode}-T{spec.T}.txt")
            mean, std = summarize(accs)
            rows.append({"mode": spec.mode, "T": spec.T, "mean_accuracy": mean, "std": std,
                         "accuracies": " ".join(f"{a:.4f}" for a in accs)})
    write_csv(out / "attack.csv", rows)
    print_table(rows, ["mode", "T", "mean_accuracy", "std"])
    for mode in sorted({r["mode"] for r in rows}):
        series = [r["mean_accuracy"] for r in sorted(rows, key=lambda r: r["T"]) if r["mode"] == mode]
        print(f"{mode}: monotone decreasing over T = {monotone_decreasing(series)}")
    return 0


def cmd_sweep_p2(args) -> int:
    cfg = load_config(args)
    values = args.p2 or cfg.p2_values
    bundle = load_dataset(cfg)
    out = _out(cfg)
    with execution_mode(cfg):
        rows = sweep_p2(bundle, cfg, values)
    write_csv(out / "p2_sweep.csv", rows, ["P_2", "mean_accuracy", "std"])
    print_table(rows, ["P_2", "mean_accuracy", "std"])
    return 0


def _time_epochs(bundle, tensor, plan, epochs, hidden):
    tc = TrainConfig(hidden=hidden, max_epochs=epochs, patience=epochs + 1, track_test=False)
    params = init_params(bundle.feature_dim, hidden, bundle.num_classes, plan.K + 1, seed=0)
    _, history = train(params, tensor, bundle.labels, bundle.splits, tc, plan)
    return [h["epoch_seconds"] for h in history]


def run_bench(bundle, plan, epochs: int = 5, hidden: int = 128, repeats: int = 3, backends=None,
              l2_factor: int = 5) -> dict:
    """Precompute-once versus per-epoch cost, and aggregation scaling with the plan."""
    backends = backends or _backend.available()
    out = {"plan": plan.to_config(), "num_nodes": bundle.num_nodes, "feature_dim": bundle.feature_dim}

    def timed(p, backend):
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            t = build_embedding_tensor(bundle.graph, bundle.features, p, seed=0, backend=backend, bundle_hash="")
            best = min(best, time.perf_counter() - t0)
        return best, t

    pre = {}
    for name in backends:
        pre[name], tensor = timed(plan, name)
    out["precompute_seconds"] = pre
    fastest = min(pre, key=pre.get)
    epoch_s = _time_epochs(bundle, tensor, plan, epochs, hidden)
    out["epoch_seconds_median"] = float(np.median(epoch_s))
    out["train_seconds"] = float(np.sum(epoch_s))
    out["precompute_fraction"] = pre[fastest] / (pre[fastest] + out["train_seconds"])

    # per-node cost at L and 2L: sampling+aggregation, and aggregation alone into a reused buffer
    impl = _backend.get(fastest)
    buffer = np.empty_like(tensor.values)
    scaling = []
    for factor in (1, 2):
        p = plan
        for l in range(1, plan.K + 1):
            p = p.with_layer(l, L=plan.layer(l).L * factor)
        total = agg = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            table = sample_all(bundle.graph, p, 0, backend=fastest)
            t1 = time.perf_counter()
            impl.aggregate_raw(bundle.features, table.members, table.member_counts, 0, buffer)
            t2 = time.perf_counter()
            total, agg = min(total, t2 - t0), min(agg, t2 - t1)
        scaling.append({"L_factor": factor, "sum_SL": sum(x.S * x.L for x in p.layers),
                        "sampled_members": int(table.member_counts.sum()),
                        "seconds_per_node": total / bundle.num_nodes,
                        "aggregation_seconds_per_node": agg / bundle.num_nodes})
    out["scaling"] = scaling
    out["doubling_ratio"] = scaling[1]["aggregation_seconds_per_node"] / scaling[0]["aggregation_seconds_per_node"]
    # below 2 when small neighborhoods clamp L
    out["member_ratio"] = scaling[1]["sampled_members"] / scaling[0]["sampled_members"]
    out["doubling_ratio_with_sampling"] = scaling[1]["seconds_per_node"] / scaling[0]["seconds_per_node"]

    big = plan.with_layer(plan.K, L=plan.layer(plan.K).L * l2_factor)
    _, t_big = timed(big, fastest)
    out["epoch_seconds_median_bigL"] = float(np.median(_time_epochs(bundle, t_big, big, epochs, hidden)))
    out["epoch_time_change"] = abs(out["epoch_seconds_median_bigL"] / out["epoch_seconds_median"] - 1.0)
    return out


def cmd_bench(args) -> int:
    if args.synthetic:
        bundle = make_synthetic(num_nodes=args.synthetic, feature_dim=args.features, avg_degree=args.degree,
                                seed=args.seed or 0)
        bundle.features = row_normalize(bundle.features)
        cfg = ExperimentConfig(out=args.out or "runs/bench")
    else:
        cfg = load_config(args)
        bundle = load_dataset(cfg)
    with execution_mode(cfg):
        res = run_bench(bundle, cfg.plan, epochs=args.epochs or 5, hidden=cfg.train_config(0).hidden)
    rows = [{"measure": f"precompute seconds [{k}]", "value": v} for k, v in res["precompute_seconds"].items()]
    rows += [
        {"measure": "epoch seconds (median)", "value": res["epoch_seconds_median"]},
        {"measure": "training seconds (all epochs)", "value": res["train_seconds"]},
        {"measure": "precompute / total", "value": res["precompute_fraction"]},
        {"measure": "per-node aggregation ratio, 2x L", "value": res["doubling_ratio"]},
        {"measure": "sampled member ratio, 2x L", "value": res["member_ratio"]},
        {"measure": "per-node sampling+aggregation ratio, 2x L", "value": res["doubling_ratio_with_sampling"]},
        {"measure": "epoch seconds, L_K x5", "value": res["epoch_seconds_median_bigL"]},
        {"measure": "relative epoch-time change, L_K x5", "value": res["epoch_time_change"]},
    ]
    print_table(rows, ["measure", "value"])
    out = _out(cfg)
    write_csv(out / "bench.csv", rows)
    (out / "bench.json").write_text(json.dumps(res, indent=2), encoding="utf-8")
    return 0


def cmd_convert(args) -> int:
    bundle = load_planetoid(args.raw_dir, args.name, args.split)
    save_bundle(bundle, args.out_dir)
    print(f"{args.name}: N={bundle.num_nodes} F={bundle.feature_dim} C={bundle.num_classes} "
          f"edges={bundle.graph.num_edges} train/val/test={len(bundle.splits.train)}/"
          f"{len(bundle.splits.val)}/{len(bundle.splits.test)} -> {args.out_dir}")
    return 0


def cmd_synth(args) -> int:
    bundle = make_synthetic(num_nodes=args.nodes, num_classes=args.classes, feature_dim=args.features,
                            avg_degree=args.degree, homophily=args.homophily, seed=args.seed)
    save_bundle(bundle, args.out_dir)
    print(f"synthetic bundle N={bundle.num_nodes} edges={bundle.graph.num_edges} -> {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrgcn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment JSON file")
        p.add_argument("--bundle", help="bundle directory (overrides config)")
        p.add_argument("--seed", type=int, help="base seed for sampling, init and training")
        p.add_argument("--out", help="output directory")
        p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible")
        p.add_argument("--num-seeds", type=int)
        p.add_argument("--epochs", type=int, help="max epochs")
        p.add_argument("--backend", choices=_backend.available())
        return p

    common(sub.add_parser("precompute", help="build and cache embedding tensors")).set_defaults(func=cmd_precompute)
    common(sub.add_parser("train", help="train and report over seeds")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("attack", help="DICE evasion/poisoning grid"))
    p.add_argument("--mode", choices=["evasion", "poisoning"])
    p.add_argument("--T", type=int, nargs="+")
    p.set_defaults(func=cmd_attack)
    p = common(sub.add_parser("sweep-p2", help="accuracy versus hop-2 parent size"))
    p.add_argument("--p2", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep_p2)
    p = common(sub.add_parser("bench", help="precompute versus training cost"))
    p.add_argument("--synthetic", type=int, metavar="N", help="benchmark a synthetic N-node graph instead")
    p.add_argument("--features", type=int, default=500)
    p.add_argument("--degree", type=float, default=4.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("convert-planetoid", help="convert ind.<name>.* files to a bundle")
    p.add_argument("raw_dir")
    p.add_argument("name")
    p.add_argument("out_dir")
    p.add_argument("--split", choices=["full", "public"], default="full")
    p.set_defaults(func=cmd_convert)
    p = sub.add_parser("synth", help="write a synthetic bundle")
    p.add_argument("out_dir")
    p.add_argument("--nodes", type=int, default=600)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--features", type=int, default=200)
    p.add_argument("--degree", type=float, default=4.0)
    p.add_argument("--homophily", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
