"""Run configuration: defaults, YAML loading, validation with field-level messages."""

import copy
import hashlib
import json
import re

import numpy as np
import yaml

from . import __version__
from .data import federate_arrays, ingest_idx, make_synthetic, rescale_smoothness
from .models import TaskSpec
from .receiver import TurboOptions
from .training import SCHEMES, TrainConfig
from .transmitter import PowerPolicy

OUTPUT_ENV = "OAFMTL_OUTPUT_DIR"

DEFAULTS = {
    "scheme": "all",
    "seeds": [0, 1, 2, 3, 4],
    "output_dir": "results",
    "jobs": 1,
    "rounds": 100,
    "num_devices": 20,
    "rows": 768,
    "noise_var_w": 0.1,
    "paper_sigma": False,
    "fading": "unit",
    "learning_rate": 2.0,
    "power": {"budget": 0.1, "mode": "fixed_gamma", "gamma": 1000.0, "threshold": 0.0},
    "turbo": {"max_iters": 30, "rel_tol": 1e-6, "em": True, "paper_ratio": False, "init": "observation"},
    "tasks": [
        {"dim": 1024, "top_k": 102, "kind": "logistic", "classes": 8, "reg": 1e-3},
        {"dim": 1024, "top_k": 102, "kind": "logistic", "classes": 8, "reg": 1e-3},
    ],
    "data": {
        "source": "synthetic",
        "samples_per_device": 500,
        "test_samples": 1000,
        "separation": 3.0,
        "informative": 10,
        "noise_scale": 0.05,
        "condition": 10.0,
        "idx": [],
    },
    "recover": {
        "dim": 8192,
        "rows": 6144,
        "signal_priors": [[0.5515, 0.2175], [0.5230, 0.1281]],
        "priors": "known",
        "noise_var_w": 0.1,
        "gamma": 1000.0,
        "normalizer": 50000,
        "iterations": 20,
        "rel_tol": 0.0,
        "init": "prior",
        "paper_ratio": False,
        "paper_sigma": False,
    },
    "bound": {
        "num_tasks": 2,
        "dim": 256,
        "rows": 192,
        "top_k": 25,
        "reg": 0.05,
        "learning_rate": 0.1,
        "samples_per_device": 50,
        "condition": 10.0,
        "rounds": 100,
        "beta2": 1e-6,
        "seeds": list(range(10)),
    },
}


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-6`` (no dot) as a float, like JSON does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)(?:[eE][-+]?[0-9]+)?$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Raised with every offending field listed, one per line."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in self.problems))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in out:
            raise ConfigError([f"{k}: unknown field"])
        if isinstance(out[k], dict) and isinstance(v, dict):
            for kk in v:
                if kk not in out[k]:
                    raise ConfigError([f"{k}.{kk}: unknown field"])
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load(path=None, overrides=None):
    """Defaults <- YAML file (or a previous run's manifest) <- ``overrides``."""
    conf = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            raw = yaml.load(fh, Loader=_Loader) or {}
        if not isinstance(raw, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        if "config" in raw and "version" in raw:
            raw = raw["config"]
        conf = _merge(conf, raw)
    conf = _merge(conf, overrides or {})
    validate(conf)
    return conf


def _pos(problems, name, v, strict=True):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v) or (v <= 0 if strict else v < 0):
        problems.append(f"{name}: must be a {'positive' if strict else 'nonnegative'} number, got {v!r}")
        return False
    return True


def _int(problems, name, v, lo=None):
    if not isinstance(v, int) or isinstance(v, bool) or (lo is not None and v < lo):
        problems.append(f"{name}: must be an integer >= {lo}, got {v!r}")
        return False
    return True


def _prior_list(problems, name, priors):
    if not isinstance(priors, list) or not priors:
        problems.append(f"{name}: must be a non-empty list of [sparsity, active_variance]")
        return
    for i, p in enumerate(priors):
        if not (isinstance(p, (list, tuple)) and len(p) == 2):
            problems.append(f"{name}[{i}]: must be [sparsity, active_variance]")
            continue
        lam, v = p
        if not (isinstance(lam, (int, float)) and 0 < lam <= 1):
            problems.append(f"{name}[{i}].sparsity: must lie in (0, 1], got {lam!r}")
        _pos(problems, f"{name}[{i}].active_variance", v)


def validate(conf):
    p = []
    if conf["scheme"] != "all" and conf["scheme"] not in SCHEMES:
        p.append(f"scheme: must be 'all' or one of {list(SCHEMES)}, got {conf['scheme']!r}")
    if not isinstance(conf["seeds"], list) or not conf["seeds"]:
        p.append("seeds: must be a non-empty list of integers")
    else:
        for i, s in enumerate(conf["seeds"]):
            _int(p, f"seeds[{i}]", s, 0)
    _int(p, "jobs", conf["jobs"], 1)
    _int(p, "rounds", conf["rounds"], 0)
    _int(p, "num_devices", conf["num_devices"], 1)
    _pos(p, "noise_var_w", conf["noise_var_w"], strict=False)
    _pos(p, "learning_rate", conf["learning_rate"])
    if conf["fading"] not in ("unit", "rayleigh"):
        p.append(f"fading: must be 'unit' or 'rayleigh', got {conf['fading']!r}")
    pw = conf["power"]
    _pos(p, "power.budget", pw["budget"])
    if pw["mode"] not in ("fixed_gamma", "auto_gamma"):
        p.append(f"power.mode: must be 'fixed_gamma' or 'auto_gamma', got {pw['mode']!r}")
    _pos(p, "power.gamma", pw["gamma"])
    _pos(p, "power.threshold", pw["threshold"], strict=False)
    tb = conf["turbo"]
    _int(p, "turbo.max_iters", tb["max_iters"], 1)
    _pos(p, "turbo.rel_tol", tb["rel_tol"], strict=False)
    if tb["init"] not in ("prior", "observation"):
        p.append(f"turbo.init: must be 'prior' or 'observation', got {tb['init']!r}")

    rows = conf["rows"]
    if _int(p, "rows", rows, 2) and rows % 2:
        p.append(f"rows: must be even (two real entries per complex channel use), got {rows}")
    if not isinstance(conf["tasks"], list) or not conf["tasks"]:
        p.append("tasks: must be a non-empty list")
    else:
        for i, t in enumerate(conf["tasks"]):
            name = f"tasks[{i}]"
            unknown = set(t) - {"dim", "top_k", "kind", "classes", "reg"}
            if unknown:
                p.append(f"{name}: unknown field(s) {sorted(unknown)}")
            dim, k = t.get("dim"), t.get("top_k")
            kind, classes = t.get("kind", "logistic"), t.get("classes", 1)
            if _int(p, f"{name}.dim", dim, 1) and isinstance(rows, int) and rows > dim:
                p.append(f"{name}.dim: rows ({rows}) exceeds dim ({dim})")
            if _int(p, f"{name}.top_k", k, 1) and isinstance(dim, int) and k > dim:
                p.append(f"{name}.top_k: must not exceed dim ({dim}), got {k}")
            if kind not in ("logistic", "quadratic"):
                p.append(f"{name}.kind: must be 'logistic' or 'quadratic', got {kind!r}")
            if _int(p, f"{name}.classes", classes, 1) and kind == "logistic" and isinstance(dim, int) and dim % classes:
                p.append(f"{name}.classes: dim ({dim}) must be a multiple of classes ({classes})")
            _pos(p, f"{name}.reg", t.get("reg", 0.0), strict=False)
    d = conf["data"]
    if d["source"] not in ("synthetic", "idx"):
        p.append(f"data.source: must be 'synthetic' or 'idx', got {d['source']!r}")
    _int(p, "data.samples_per_device", d["samples_per_device"], 1)
    _int(p, "data.test_samples", d["test_samples"], 1)
    if d["source"] == "idx" and len(d["idx"]) != len(conf["tasks"]):
        p.append("data.idx: need one {train_images, train_labels, test_images, test_labels} entry per task")

    r = conf["recover"]
    if _int(p, "recover.dim", r["dim"], 1) and _int(p, "recover.rows", r["rows"], 1) and r["rows"] > r["dim"]:
        p.append(f"recover.rows: rows ({r['rows']}) exceeds dim ({r['dim']})")
    _prior_list(p, "recover.signal_priors", r["signal_priors"])
    if r["priors"] not in ("known", "estimate"):
        p.append(f"recover.priors: must be 'known' or 'estimate', got {r['priors']!r}")
    _pos(p, "recover.noise_var_w", r["noise_var_w"], strict=False)
    _pos(p, "recover.gamma", r["gamma"])
    _pos(p, "recover.normalizer", r["normalizer"])
    _int(p, "recover.iterations", r["iterations"], 1)
    if r["init"] not in ("prior", "observation"):
        p.append(f"recover.init: must be 'prior' or 'observation', got {r['init']!r}")

    b = conf["bound"]
    _int(p, "bound.num_tasks", b["num_tasks"], 1)
    if _int(p, "bound.dim", b["dim"], 2) and _int(p, "bound.rows", b["rows"], 2):
        if b["rows"] > b["dim"] or b["rows"] % 2:
            p.append(f"bound.rows: must be even and at most dim ({b['dim']}), got {b['rows']}")
    if _int(p, "bound.top_k", b["top_k"], 1) and isinstance(b["dim"], int) and b["top_k"] > b["dim"]:
        p.append("bound.top_k: must not exceed bound.dim")
    _pos(p, "bound.reg", b["reg"])
    _pos(p, "bound.learning_rate", b["learning_rate"])
    _pos(p, "bound.beta2", b["beta2"])
    _int(p, "bound.rounds", b["rounds"], 0)
    if p:
        raise ConfigError(p)
    return conf


def config_hash(conf):
    blob = json.dumps(conf, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def manifest(conf, command):
    return {
        "version": __version__,
        "command": command,
        "config_hash": config_hash(conf),
        "seeds": conf["seeds"] if command != "bound" else conf["bound"]["seeds"],
        "config": conf,
    }


def recover_section(conf):
    r = dict(conf["recover"])
    r["priors"] = r["signal_priors"] if r["priors"] == "known" else "estimate"
    return r


def _datasets(conf, seed):
    d = conf["data"]
    out = []
    for n, t in enumerate(conf["tasks"]):
        kind, classes = t.get("kind", "logistic"), t.get("classes", 1)
        if d["source"] == "idx":
            src = d["idx"][n]
            X, y = ingest_idx(src["train_images"], src["train_labels"], classes)
            Xt, yt = ingest_idx(src["test_images"], src["test_labels"], classes)
            X = np.hstack([X, np.ones((len(X), 1))])
            Xt = np.hstack([Xt, np.ones((len(Xt), 1))])[: d["test_samples"]]
            if X.shape[1] * classes != t["dim"]:
                raise ConfigError([f"tasks[{n}].dim: IDX data gives {X.shape[1]} features (with bias) "
                                   f"x {classes} classes != {t['dim']}"])
            out.append(federate_arrays(X, y, conf["num_devices"], d["samples_per_device"], Xt, yt[: len(Xt)],
                                       task_id=n, seed=100 * seed + n))
        else:
            out.append(make_synthetic(
                kind, t["dim"], classes, samples_per_device=d["samples_per_device"], seed=100 * seed + n,
                num_devices=conf["num_devices"], test_samples=d["test_samples"], reg=t.get("reg", 0.0),
                separation=d["separation"], condition=d["condition"], task_id=n,
                informative=d["informative"] if kind == "logistic" else None, noise_scale=d["noise_scale"],
            ))
    return out


def turbo_options(conf):
    tb = conf["turbo"]
    return TurboOptions(max_iters=tb["max_iters"], rel_tol=tb["rel_tol"], em_enabled=tb["em"],
                        paper_ratio=tb["paper_ratio"], init=tb["init"])


def build_train_config(conf, seed):
    tasks = [
        TaskSpec(n, t["dim"], t["top_k"], t.get("kind", "logistic"), t.get("reg", 0.0), conf["learning_rate"],
                 t.get("classes", 1))
        for n, t in enumerate(conf["tasks"])
    ]
    pw = conf["power"]
    return TrainConfig(
        tasks=tasks, datasets=_datasets(conf, seed), rows=conf["rows"], noise_var_w=conf["noise_var_w"],
        power=PowerPolicy(pw["budget"], pw["gamma"], pw["threshold"], pw["mode"]), fading=conf["fading"],
        turbo=turbo_options(conf), paper_sigma=conf["paper_sigma"], operator_seed=seed,
    )


def build_bound_config(conf, seed):
    """Quadratic tasks rescaled so the step size is exactly ``1 / L``."""
    b = conf["bound"]
    lr, reg = b["learning_rate"], b["reg"]
    tasks, data = [], []
    for n in range(b["num_tasks"]):
        ds = make_synthetic("quadratic", b["dim"], samples_per_device=b["samples_per_device"], seed=100 * seed + n,
                            num_devices=conf["num_devices"], reg=reg, condition=b["condition"], task_id=n)
        data.append(rescale_smoothness(ds, 1.0 / lr, reg))
        tasks.append(TaskSpec(n, b["dim"], b["top_k"], "quadratic", reg, lr))
    pw = conf["power"]
    return TrainConfig(
        tasks=tasks, datasets=data, rows=b["rows"], noise_var_w=conf["noise_var_w"],
        power=PowerPolicy(pw["budget"], pw["gamma"], pw["threshold"], pw["mode"]), fading=conf["fading"],
        turbo=turbo_options(conf), paper_sigma=conf["paper_sigma"], operator_seed=seed,
    )
