"""End-to-end federated multi-task training over the simulated uplink.

Schemes:

* ``oa_fmtl``: all tasks superimposed in one channel block, joint turbo recovery.
* ``scheme1_tdm``: one channel block per task, single-task turbo recovery.
* ``scheme2``: one shared block, per-task turbo recovery that ignores the other tasks.
* ``error_free``: the exact weighted gradient, no compression and no channel.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import models
from .analysis import (
    BoundParams,
    SeConfig,
    SeTask,
    appendix_error_bounds,
    error_decomposition,
    lemma1_check,
    state_evolution,
    theorem1_bound,
)
from .channel import ChannelRound, draw_fading, effective_observation, transmit
from .receiver import TurboOptions, m_turbo_cs, scheme2_recover_all
from .transform import make_partial_dct
from .transmitter import (
    DeviceState,
    PowerPolicy,
    auto_gamma,
    channel_invert,
    compress_device,
    pack_complex,
)

SCHEMES = ("oa_fmtl", "scheme1_tdm", "scheme2", "error_free")
CONCURRENT_SCHEMES = ("oa_fmtl", "scheme2", "error_free")


@dataclass
class TrainConfig:
    tasks: list
    datasets: list
    rows: int
    noise_var_w: float = 0.1
    power: PowerPolicy = field(default_factory=PowerPolicy)
    fading: str = "unit"
    turbo: TurboOptions = field(default_factory=lambda: TurboOptions(em_enabled=True))
    paper_sigma: bool = False
    operator_seed: int = 0
    diagnostics: bool = True

    def __post_init__(self):
        if len(self.tasks) != len(self.datasets):
            raise ValueError("need one dataset per task")
        if self.rows % 2:
            raise ValueError("rows (2s) must be even")
        for t in self.tasks:
            if self.rows > t.dim:
                raise ValueError(f"rows ({self.rows}) exceeds task {t.task_id} dimension ({t.dim})")
        devices = {d.num_devices for d in self.datasets}
        if len(devices) != 1:
            raise ValueError("every task must be split over the same devices")
        rates = {t.learning_rate for t in self.tasks}
        if len(rates) != 1:
            raise ValueError("tasks share one learning rate")
        if self.noise_var_w < 0:
            raise ValueError("noise_var_w must be nonnegative")

    @property
    def num_devices(self):
        return self.datasets[0].num_devices

    @property
    def learning_rate(self):
        return self.tasks[0].learning_rate

    def dataset_sizes(self):
        """``K[n][m]``."""
        return [d.counts for d in self.datasets]


@dataclass
class SystemState:
    round: int
    params: list
    devices: list
    operators: list


@dataclass
class RoundRecord:
    round: int
    scheme: str
    accuracy: list
    loss: list
    recovery_error: list
    error_terms: list
    scheduled: int
    channel_uses: int
    participation: list
    v_star: list
    grad_norm_sq: list
    max_sample_grad_sq: list
    lemma1_ok: list
    gap: list
    max_power: float
    power_ok: bool
    ef_identity_max: float
    priors: list
    wall_clock: float = 0.0

    def csv_rows(self):
        rows = []
        for n in range(len(self.accuracy)):
            rows.append({
                "round": self.round,
                "scheme": self.scheme,
                "task": n,
                "accuracy": self.accuracy[n],
                "loss": self.loss[n],
                "gap": self.gap[n],
                "recovery_error": self.recovery_error[n],
                "e1_sq": self.error_terms[n]["e1_sq"],
                "e2_sq": self.error_terms[n]["e2_sq"],
                "e3_sq": self.error_terms[n]["e3_sq"],
                "total_err_sq": self.error_terms[n]["total_sq"],
                "grad_norm_sq": self.grad_norm_sq[n],
                "max_sample_grad_sq": self.max_sample_grad_sq[n],
                "v_star": self.v_star[n],
                "participation": self.participation[n],
                "scheduled": self.scheduled,
                "channel_uses": self.channel_uses,
                "lemma1_ok": int(self.lemma1_ok[n]),
                "max_power": self.max_power,
                "power_ok": int(self.power_ok),
                "ef_identity_max": self.ef_identity_max,
                "sparsity_est": self.priors[n][0],
                "active_var_est": self.priors[n][1],
            })
        return rows


CSV_COLUMNS = [
    "round", "scheme", "task", "accuracy", "loss", "gap", "recovery_error", "e1_sq", "e2_sq",
    "e3_sq", "total_err_sq", "grad_norm_sq", "max_sample_grad_sq", "v_star", "participation",
    "scheduled", "channel_uses", "lemma1_ok", "max_power", "power_ok", "ef_identity_max",
    "sparsity_est", "active_var_est",
]


def initial_state(cfg):
    K = cfg.dataset_sizes()
    devices = [
        DeviceState.fresh(m, [t.dim for t in cfg.tasks], [K[n][m] for n in range(len(cfg.tasks))])
        for m in range(cfg.num_devices)
    ]
    ops = [make_partial_dct(t.dim, cfg.rows, cfg.operator_seed * 1000 + n) for n, t in enumerate(cfg.tasks)]
    return SystemState(round=1, params=[np.zeros(t.dim) for t in cfg.tasks], devices=devices, operators=ops)


def _round_seeds(seed, t, count):
    ss = np.random.SeedSequence([int(seed), int(t)])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(count)]


def _weighted(vectors, weights, members=None):
    members = range(len(vectors)) if members is None else sorted(members)
    total = sum(weights[m] for m in members)
    if total == 0:
        return np.zeros_like(vectors[0])
    out = np.zeros_like(vectors[0])
    for m in members:
        out += weights[m] * vectors[m]
    return out / total


def _air_block(xs, gains, cfg, K_table, noise_seed):
    """Send one real vector per device through a single channel block."""
    channel = ChannelRound(gains=gains, noise_std=float(np.sqrt(cfg.noise_var_w)),
                           threshold=cfg.power.threshold, seed=noise_seed)
    x_tilde = [pack_complex(x) for x in xs]
    if cfg.power.mode == "auto_gamma":
        gamma = auto_gamma([np.linalg.norm(x) for x in x_tilde], gains, cfg.power.budget, cfg.power.threshold)
    else:
        gamma = cfg.power.gamma
    signals, powers, oks = [], [], []
    for xt, h in zip(x_tilde, gains):
        s, ok = channel_invert(xt, h, cfg.power, gamma)
        signals.append(s)
        powers.append(float(np.vdot(s, s).real))
        oks.append(ok)
    r = transmit(signals, channel)
    obs = effective_observation(r, channel, gamma, K_table, paper_sigma=cfg.paper_sigma)
    return obs, channel, max(powers), all(oks)


def _se_fixed_point(ops, priors, noise_var, turbo):
    cfg = SeConfig(
        tasks=[SeTask(op.dim, op.rows, p) for op, p in zip(ops, priors)],
        noise_var=noise_var,
        max_iters=turbo.max_iters,
        rel_tol=turbo.rel_tol,
        paper_ratio=turbo.paper_ratio,
    )
    return state_evolution(cfg).fixed_point


def run_round(state, cfg, scheme, seed):
    """Advance one global round; returns ``(new_state, RoundRecord)``."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    start = time.perf_counter()
    t = state.round
    tasks, data = cfg.tasks, cfg.datasets
    n_tasks, n_dev = len(tasks), cfg.num_devices
    K = cfg.dataset_sizes()
    gain_seed, *noise_seeds = _round_seeds(seed, t, 1 + n_tasks)

    grads = [
        [models.local_gradient(tasks[n], state.params[n], data[n].device_X[m], data[n].device_y[m])
         for n in range(n_tasks)]
        for m in range(n_dev)
    ]
    full = [_weighted([grads[m][n] for m in range(n_dev)], K[n]) for n in range(n_tasks)]
    gains = draw_fading(n_dev, cfg.fading, gain_seed)
    scheduled = set(range(n_dev)) if scheme == "error_free" else {
        m for m in range(n_dev) if abs(gains[m]) >= cfg.power.threshold
    }
    participation = [
        sum(K[n][m] for m in scheduled) / max(sum(K[n]), 1) for n in range(n_tasks)
    ]
    channel_uses = 0
    max_power, power_ok, ef_max = 0.0, True, 0.0
    devices = state.devices
    v_star = [0.0] * n_tasks
    priors = [(np.nan, np.nan)] * n_tasks

    if scheme == "error_free":
        g_hat = [g.copy() for g in full]
        sp_all = sp_sched = [g.copy() for g in full]
    else:
        k = [tk.top_k for tk in tasks]
        updates = [compress_device(grads[m], devices[m], state.operators, k) for m in range(n_dev)]
        devices = [u.state for u in updates]
        for u in updates:
            for acc, sp, buf in zip(u.accumulated, u.sparsified, u.state.buffers):
                ef_max = max(ef_max, float(np.max(np.abs(acc - (sp + buf)))))
        sp_all = [_weighted([u.sparsified[n] for u in updates], K[n]) for n in range(n_tasks)]
        sp_sched = [_weighted([u.sparsified[n] for u in updates], K[n], scheduled) for n in range(n_tasks)]
        design = [tk.top_k / tk.dim for tk in tasks]

        if scheme == "scheme1_tdm":
            g_hat = []
            for n in range(n_tasks):
                xs = [K[n][m] * updates[m].compressed[n] for m in range(n_dev)]
                obs, _, p, ok = _air_block(xs, gains, cfg, [K[n]], noise_seeds[n])
                res = m_turbo_cs(obs, [state.operators[n]], "estimate", cfg.turbo, design_sparsity=[design[n]])
                g_hat.append(res.estimates[0])
                learned = res.priors[0]
                priors[n] = (learned.sparsity, learned.active_variance)
                v_star[n] = _se_fixed_point([state.operators[n]], [learned], obs.noise_var, cfg.turbo)[0]
                max_power, power_ok = max(max_power, p), power_ok and ok
            channel_uses = n_tasks
        else:
            xs = [u.superposed for u in updates]
            obs, _, max_power, power_ok = _air_block(xs, gains, cfg, K, noise_seeds[0])
            channel_uses = 1
            if scheme == "oa_fmtl":
                res = m_turbo_cs(obs, state.operators, "estimate", cfg.turbo, design_sparsity=design)
                g_hat = res.estimates
                learned = res.priors
                v_star = _se_fixed_point(state.operators, learned, obs.noise_var, cfg.turbo)
            else:
                results = scheme2_recover_all(obs, state.operators, "estimate", cfg.turbo, design_sparsity=design)
                g_hat = [r.estimates[0] for r in results]
                learned = [r.priors[0] for r in results]
                v_star = [np.nan] * n_tasks
            priors = [(p.sparsity, p.active_variance) for p in learned]

    terms = error_decomposition(full, sp_all, sp_sched, g_hat)
    new_params = [models.global_step(state.params[n], g_hat[n], cfg.learning_rate) for n in range(n_tasks)]

    acc, loss, gap, lemma, gnorm, sample_max, rec_err = [], [], [], [], [], [], []
    for n in range(n_tasks):
        Xtr, ytr = data[n].X_train, data[n].y_train
        before = models.loss(tasks[n], state.params[n], Xtr, ytr)
        after = models.loss(tasks[n], new_params[n], Xtr, ytr)
        g2 = float(full[n] @ full[n])
        gnorm.append(g2)
        lemma.append(lemma1_check(before, after, g2, terms[n]["total_sq"], 1.0 / cfg.learning_rate))
        loss.append(after)
        acc.append(models.accuracy(tasks[n], new_params[n], data[n].X_test, data[n].y_test))
        if data[n].optimum is not None:
            gap.append(after - models.loss(tasks[n], data[n].optimum, Xtr, ytr))
        else:
            gap.append(np.nan)
        if cfg.diagnostics:
            sample_max.append(float(np.max(models.per_sample_gradient_norms_sq(tasks[n], state.params[n], Xtr, ytr))))
        else:
            sample_max.append(np.nan)
        rec_err.append(terms[n]["e3_sq"])

    record = RoundRecord(
        round=t, scheme=scheme, accuracy=acc, loss=loss, recovery_error=rec_err,
        error_terms=[{k: v for k, v in tm.items() if k.endswith("_sq")} for tm in terms],
        scheduled=len(scheduled), channel_uses=channel_uses, participation=participation,
        v_star=[float(v) for v in v_star], grad_norm_sq=gnorm, max_sample_grad_sq=sample_max,
        lemma1_ok=lemma, gap=gap, max_power=max_power, power_ok=power_ok, ef_identity_max=ef_max,
        priors=[(float(a), float(b)) for a, b in priors], wall_clock=time.perf_counter() - start,
    )
    new_state = SystemState(round=t + 1, params=new_params, devices=devices, operators=state.operators)
    return new_state, record


def initial_losses(cfg, state):
    out = []
    for n, tk in enumerate(cfg.tasks):
        d = cfg.datasets[n]
        out.append(models.loss(tk, state.params[n], d.X_train, d.y_train))
    return out


def run_training(cfg, rounds, seed, scheme="oa_fmtl"):
    """Run ``rounds`` global rounds from zero parameters; deterministic per seed."""
    state = initial_state(cfg)
    records = []
    for _ in range(int(rounds)):
        state, rec = run_round(state, cfg, scheme, seed)
        records.append(rec)
    return records


def accuracy_curves(records):
    """Per-task accuracy lists indexed by round (round 1 first)."""
    if not records:
        return []
    return [[r.accuracy[n] for r in records] for n in range(len(records[0].accuracy))]


def t_star(curves, xi, scheme="oa_fmtl", xi_max=None):
    """Rounds of channel use for every task to reach ``xi`` of its best accuracy.

    ``curves[n][i]`` is task ``n``'s accuracy after round ``i + 1``.  The
    per-task counts combine by ``max`` for concurrent schemes and by sum for
    time division.  Returns ``None`` when some task never reaches its target.
    """
    if not (0 < xi <= 1):
        raise ValueError("xi must lie in (0, 1]")
    per_task = []
    for n, curve in enumerate(curves):
        top = max(curve) if xi_max is None else xi_max[n]
        hit = next((i + 1 for i, a in enumerate(curve) if a >= xi * top), None)
        if hit is None:
            return None
        per_task.append(hit)
    return sum(per_task) if scheme == "scheme1_tdm" else max(per_task)


def optimality_gaps(records):
    """Total gap ``sum_n L_n(theta_n^(t+1)) - L_n(theta_n*)`` per round."""
    return np.array([float(np.sum(r.gap)) for r in records])


def bound_inputs(cfg, records, beta2=1e-6):
    """Honest bound constants from the data and a finished run.

    ``omega``/``L`` come from the Hessian spectrum of each task's training
    loss, ``beta1`` is the largest per-sample squared gradient norm seen on
    the trajectory (it bounds every device gradient, so any ``beta2 > 0``
    is admissible), and participation / ``v*`` are the per-round values the
    run reported.
    """
    omega, lips = [], []
    for tk, ds in zip(cfg.tasks, cfg.datasets):
        o, L = models.curvature_bounds(tk, ds.X_train, ds.y_train)
        omega.append(o)
        lips.append(L)
    beta1 = [max(r.max_sample_grad_sq[n] for r in records) for n in range(len(cfg.tasks))]
    state = initial_state(cfg)
    gap0 = 0.0
    for n, (tk, ds) in enumerate(zip(cfg.tasks, cfg.datasets)):
        if ds.optimum is None:
            raise ValueError("bound check needs tasks with a known optimum")
        gap0 += models.loss(tk, state.params[n], ds.X_train, ds.y_train) - models.loss(
            tk, ds.optimum, ds.X_train, ds.y_train)
    return BoundParams(
        omega=omega, lipschitz=lips, beta1=beta1, beta2=[beta2] * len(cfg.tasks),
        dims=[t.dim for t in cfg.tasks], top_k=[t.top_k for t in cfg.tasks],
        participation=[r.participation for r in records],
        v_star=[r.v_star for r in records], initial_gap=gap0,
    )


def bound_rows(cfg, rounds, seed, scheme="oa_fmtl", beta2=1e-6):
    """Run training and pair the bound with the measured gap, one row per round."""
    records = run_training(cfg, rounds, seed, scheme)
    if not records:
        return []
    params = bound_inputs(cfg, records, beta2)
    res = theorem1_bound(params, len(records))
    gaps = optimality_gaps(records)
    rows = []
    for i, r in enumerate(records):
        rows.append({
            "round": r.round, "scheme": scheme, "seed": seed,
            "gap": gaps[i], "bound": float(res.bounds[i]), "upsilon": float(res.upsilon[i]),
            "dominates": int(res.bounds[i] >= gaps[i]),
            "lemma1_ok": int(all(r.lemma1_ok)),
            "e1_within": int(all(_appendix_ok(params, r, n) for n in range(len(r.gap)))),
        })
    return rows


def _appendix_ok(params, record, n):
    b1, b2 = appendix_error_bounds(params.ratios[n], record.round, record.participation[n],
                                   record.grad_norm_sq[n], params.beta1[n], params.beta2[n])
    terms = record.error_terms[n]
    return terms["e1_sq"] <= b1 * (1 + 1e-9) + 1e-300 and terms["e2_sq"] <= b2 * (1 + 1e-9) + 1e-300
