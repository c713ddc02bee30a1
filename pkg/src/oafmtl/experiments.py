"""Seeded experiment runners that produce long-format rows (one dict per CSV line)."""

import numpy as np

from .analysis import SeConfig, SeTask, state_evolution
from .channel import scaled_noise_var
from .prior import BgPrior, sample_bg
from .receiver import TurboOptions, m_turbo_cs, scheme2_recover_all
from .training import SCHEMES, accuracy_curves, bound_rows, run_training, t_star
from .transform import forward, make_partial_dct

XI_GRID = (0.8, 0.85, 0.9, 0.95, 1.0)


def _seed_streams(seed, count):
    ss = np.random.SeedSequence([int(seed), 0xC5])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(count)]


def recovery_instance(dim, rows, priors, noise_var, seed):
    """Operators, BG ground truth and the superimposed noisy observation for one seed."""
    n = len(priors)
    streams = _seed_streams(seed, 2 * n + 1)
    ops = [make_partial_dct(dim, rows, streams[k]) for k in range(n)]
    truth = [sample_bg(dim, p, streams[n + k]) for k, p in enumerate(priors)]
    rng = np.random.default_rng(streams[-1])
    noise = np.sqrt(noise_var) * rng.standard_normal((n + 1, rows))
    y = sum(forward(op, x) for op, x in zip(ops, truth)) + noise[0]
    # per-task observations for time division use their own noise draws
    y_tdm = [forward(op, x) + noise[k + 1] for k, (op, x) in enumerate(zip(ops, truth))]
    return ops, truth, y, y_tdm


def _trace_to_rows(result, truth, seed, scheme, task_offset=0):
    rows = []
    for r in result.trace:
        rows.append({
            "seed": seed, "scheme": scheme, "iteration": r["iter"], "task": r["task"] + task_offset,
            "predicted_v": r["v_b_post"], "simulated_mse": r["empirical_mse"],
        })
    return rows


def recover_rows(rc, seed):
    """One-shot recovery: joint turbo, interference-blind per task, time division, and SE.

    ``rc`` is the ``recover`` section of a run config.
    """
    known = rc["priors"] != "estimate"
    priors = [BgPrior(*p) for p in rc["priors"]] if known else None
    truth_priors = [BgPrior(*p) for p in rc["signal_priors"]]
    n = len(truth_priors)
    nv = scaled_noise_var(rc["noise_var_w"], rc["gamma"], rc["normalizer"], rc["paper_sigma"])
    opts = TurboOptions(max_iters=rc["iterations"], rel_tol=rc["rel_tol"], em_enabled=not known,
                        paper_ratio=rc["paper_ratio"], init=rc["init"])
    ops, truth, y, y_tdm = recovery_instance(rc["dim"], rc["rows"], truth_priors, nv, seed)
    rec_priors = priors if known else "estimate"
    rows = _trace_to_rows(m_turbo_cs(y, ops, rec_priors, opts, noise_var=nv, truth=truth), truth, seed, "m_turbo_cs")
    for k, res in enumerate(scheme2_recover_all(y, ops, rec_priors, opts, noise_var=nv, truth=truth)):
        rows += _trace_to_rows(res, truth, seed, "scheme2", task_offset=k)
    for k in range(n):
        p = [priors[k]] if known else "estimate"
        res = m_turbo_cs(y_tdm[k], [ops[k]], p, opts, noise_var=nv, truth=[truth[k]])
        rows += _trace_to_rows(res, truth, seed, "tdm", task_offset=k)
    se = state_evolution(SeConfig([SeTask(rc["dim"], rc["rows"], p) for p in truth_priors], noise_var=nv,
                                  max_iters=rc["iterations"], rel_tol=rc["rel_tol"], paper_ratio=rc["paper_ratio"]))
    for it, mse in enumerate(se.mse_trace, start=1):
        for k in range(n):
            rows.append({"seed": seed, "scheme": "se", "iteration": it, "task": k,
                         "predicted_v": mse[k], "simulated_mse": float("nan")})
    return rows


def se_rows(rc):
    truth_priors = [BgPrior(*p) for p in rc["signal_priors"]]
    nv = scaled_noise_var(rc["noise_var_w"], rc["gamma"], rc["normalizer"], rc["paper_sigma"])
    res = state_evolution(SeConfig([SeTask(rc["dim"], rc["rows"], p) for p in truth_priors], noise_var=nv,
                                   max_iters=rc["iterations"], rel_tol=rc["rel_tol"], paper_ratio=rc["paper_ratio"]))
    rows = []
    for entry in res.trace:
        for k in range(len(truth_priors)):
            rows.append({
                "iteration": entry["iter"], "task": k, "v_a_pri": entry["v_a_pri"][k],
                "v_b_pri": entry["v_b_pri"][k], "mse": entry["mse"][k],
                "converged": int(res.converged), "diverged": int(res.diverged),
            })
    return rows


def train_rows(cfg, rounds, seed, scheme):
    """Per-round, per-task rows plus the accuracy curves for t* post-processing."""
    records = run_training(cfg, rounds, seed, scheme)
    rows = []
    for r in records:
        for row in r.csv_rows():
            rows.append(dict(row, seed=seed))
    return rows, accuracy_curves(records)


def t_star_rows(curves_by_run, xis=XI_GRID):
    """``curves_by_run[(scheme, seed)]`` -> rows of t*(xi); unreached targets get -1."""
    rows = []
    for (scheme, seed), curves in sorted(curves_by_run.items(), key=lambda kv: (SCHEMES.index(kv[0][0]), kv[0][1])):
        for xi in xis:
            val = t_star(curves, xi, scheme) if curves else None
            rows.append({"seed": seed, "scheme": scheme, "xi": xi,
                         "t_star": -1 if val is None else int(val), "reached": int(val is not None)})
    return rows


def bound_experiment_rows(cfg, rounds, seed, beta2):
    return bound_rows(cfg, rounds, seed, "oa_fmtl", beta2)
