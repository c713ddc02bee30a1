"""Command-line front end: ``oafmtl {recover,train,bound,se,schema}``."""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .training import SCHEMES

log = logging.getLogger("oafmtl")

SCHEMAS = {
    "recover.csv": {
        "seed": "experiment seed",
        "scheme": "m_turbo_cs | scheme2 (per-task, interference-blind) | tdm (one block per task) | se",
        "iteration": "turbo iteration, 1-based",
        "task": "task index",
        "predicted_v": "receiver's own per-entry posterior variance (SE rows: predicted MSE)",
        "simulated_mse": "mean squared error of the denoiser output against the truth (NaN for SE rows)",
    },
    "se.csv": {
        "iteration": "state-evolution step, 1-based",
        "task": "task index",
        "v_a_pri": "module-A prior variance entering the step",
        "v_b_pri": "denoiser input variance",
        "mse": "predicted per-entry output MSE",
        "converged": "1 if the recursion met rel_tol",
        "diverged": "1 if a variance hit the ceiling",
    },
    "train.csv": {
        "seed": "experiment seed",
        "round": "global round t (the row describes theta^(t+1))",
        "scheme": "oa_fmtl | scheme1_tdm | scheme2 | error_free",
        "task": "task index",
        "accuracy": "held-out test accuracy (quadratic: 1 - normalized MSE)",
        "loss": "training loss after the update",
        "gap": "loss minus the loss at the known optimum (NaN if unknown)",
        "recovery_error": "||scheduled weighted sparsified gradient - estimate||^2",
        "e1_sq": "sparsification error squared norm",
        "e2_sq": "device-selection error squared norm",
        "e3_sq": "recovery error squared norm",
        "total_err_sq": "||exact gradient - estimate||^2",
        "grad_norm_sq": "squared norm of the exact weighted gradient",
        "max_sample_grad_sq": "largest per-sample squared gradient norm this round",
        "v_star": "state-evolution fixed point for the learned priors (NaN for scheme2)",
        "participation": "scheduled share of the task's samples",
        "scheduled": "number of scheduled devices",
        "channel_uses": "channel blocks consumed this round",
        "lemma1_ok": "1 if the one-step descent inequality held",
        "max_power": "largest device transmit energy",
        "power_ok": "1 if every device met the power budget",
        "ef_identity_max": "max |accumulated - (sparsified + buffer)| over devices",
        "sparsity_est": "receiver's learned sparsity",
        "active_var_est": "receiver's learned active variance",
    },
    "tstar.csv": {
        "seed": "experiment seed",
        "scheme": "scheme name",
        "xi": "target fraction of each task's best accuracy",
        "t_star": "rounds of channel use to reach the target (max over tasks, or sum for scheme1_tdm); -1 if unreached",
        "reached": "1 if every task reached its target",
    },
    "bound.csv": {
        "round": "global round t",
        "scheme": "always oa_fmtl",
        "seed": "experiment seed",
        "gap": "measured total optimality gap after the update",
        "bound": "convergence upper bound for that round",
        "upsilon": "worst per-task contraction factor",
        "dominates": "1 if bound >= gap",
        "lemma1_ok": "1 if the descent inequality held for every task",
        "e1_within": "1 if measured sparsification and selection errors respect their bounds",
    },
}


def write_csv(path, rows, columns):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})


def write_manifest(out, conf, command):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as fh:
        json.dump(cfgmod.manifest(conf, command), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pool_map(fn, jobs, items):
    """Order-preserving map; pool size never changes the results."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _recover_job(args):
    from .experiments import recover_rows

    rc, seed = args
    return recover_rows(rc, seed)


def _train_job(args):
    from .experiments import train_rows

    conf, seed, scheme = args
    cfg = cfgmod.build_train_config(conf, seed)
    return train_rows(cfg, conf["rounds"], seed, scheme)


def _bound_job(args):
    from .experiments import bound_experiment_rows

    conf, seed = args
    cfg = cfgmod.build_bound_config(conf, seed)
    return bound_experiment_rows(cfg, conf["bound"]["rounds"], seed, conf["bound"]["beta2"])


def cmd_recover(conf, out):
    rc = cfgmod.recover_section(conf)
    chunks = _pool_map(_recover_job, conf["jobs"], [(rc, s) for s in conf["seeds"]])
    rows = [r for c in chunks for r in c]
    write_csv(out / "recover.csv", rows, list(SCHEMAS["recover.csv"]))
    write_manifest(out, conf, "recover")
    return rows


def cmd_se(conf, out):
    from .experiments import se_rows

    rows = se_rows(cfgmod.recover_section(conf))
    write_csv(out / "se.csv", rows, list(SCHEMAS["se.csv"]))
    write_manifest(out, conf, "se")
    return rows


def cmd_train(conf, out):
    from .experiments import t_star_rows

    schemes = SCHEMES if conf["scheme"] == "all" else (conf["scheme"],)
    jobs = [(conf, s, sc) for sc in schemes for s in conf["seeds"]]
    results = _pool_map(_train_job, conf["jobs"], jobs)
    rows, curves = [], {}
    for (_, seed, scheme), (r, c) in zip(jobs, results):
        rows += r
        curves[(scheme, seed)] = c
    write_csv(out / "train.csv", rows, list(SCHEMAS["train.csv"]))
    write_csv(out / "tstar.csv", t_star_rows(curves), list(SCHEMAS["tstar.csv"]))
    write_manifest(out, conf, "train")
    return rows


def cmd_bound(conf, out):
    chunks = _pool_map(_bound_job, conf["jobs"], [(conf, s) for s in conf["bound"]["seeds"]])
    rows = [r for c in chunks for r in c]
    write_csv(out / "bound.csv", rows, list(SCHEMAS["bound.csv"]))
    write_manifest(out, conf, "bound")
    return rows


def cmd_schema(stream=None):
    stream = stream or sys.stdout
    for name, cols in SCHEMAS.items():
        stream.write(f"{name}\n")
        for c, doc in cols.items():
            stream.write(f"  {c:<20} {doc}\n")
        stream.write("\n")


def build_parser():
    p = argparse.ArgumentParser(prog="oafmtl", description="Over-the-air federated multi-task learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("recover", "one-shot sparse recovery: joint turbo vs per-task vs time division, with SE"),
        ("train", "federated training runs for each scheme, plus the t* table"),
        ("bound", "convergence bound against the measured gap on quadratic tasks"),
        ("se", "state evolution only"),
        ("schema", "document every CSV column"),
    ]:
        sp = sub.add_parser(name, help=helptext)
        if name == "schema":
            continue
        sp.add_argument("--config", help="YAML config (or a previous run's manifest.json)")
        sp.add_argument("--seed", type=int, help="run a single seed")
        sp.add_argument("--seeds", type=str, help="comma-separated seeds, e.g. 0,1,2")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scheme", choices=("all",) + SCHEMES)
        sp.add_argument("--paper-ratio", action="store_true", help="use s/d instead of 2s/d in module A")
        sp.add_argument("--paper-sigma", action="store_true", help="use the sigma_w / (2 gamma sum K) noise constant")
        sp.add_argument("--jobs", type=int, help="worker processes for seed sweeps")
    return p


def _overrides(args):
    o = {}
    seeds = None
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise cfgmod.ConfigError([f"--seeds: expected comma-separated integers, got {args.seeds!r}"])
    if args.seed is not None:
        seeds = [args.seed]
    if seeds is not None:
        o["seeds"] = seeds
        if args.command == "bound":
            o["bound"] = {"seeds": seeds}
    if args.scheme:
        o["scheme"] = args.scheme
    if args.jobs is not None:
        o["jobs"] = args.jobs
    if args.paper_ratio:
        o["turbo"] = {"paper_ratio": True}
        o.setdefault("recover", {})["paper_ratio"] = True
    if args.paper_sigma:
        o["paper_sigma"] = True
        o.setdefault("recover", {})["paper_sigma"] = True
    return o


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    if args.command == "schema":
        cmd_schema()
        return 0
    try:
        conf = cfgmod.load(args.config, _overrides(args))
    except cfgmod.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or os.environ.get(cfgmod.OUTPUT_ENV) or conf["output_dir"])
    handler = {"recover": cmd_recover, "train": cmd_train, "bound": cmd_bound, "se": cmd_se}[args.command]
    try:
        rows = handler(conf, out)
    except cfgmod.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    log.info("%s: wrote %d rows to %s", args.command, len(rows), out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
