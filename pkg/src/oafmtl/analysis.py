"""State evolution of the turbo receiver and the convergence-bound machinery."""

from dataclasses import dataclass, field

import numpy as np

from .prior import BgPrior, bg_mmse


@dataclass
class SeTask:
    dim: int
    rows: int
    prior: BgPrior
    init_var: float = None


@dataclass
class SeConfig:
    tasks: list
    noise_var: float = 0.0
    max_iters: int = 30
    rel_tol: float = 1e-6
    var_floor: float = 1e-12
    var_ceil: float = 1e12
    paper_ratio: bool = False

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("SeConfig needs at least one task")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        for t in self.tasks:
            if t.rows > t.dim:
                raise ValueError(f"rows ({t.rows}) exceeds dim ({t.dim})")
        if len({t.rows for t in self.tasks}) != 1:
            raise ValueError("all tasks share one observation, so rows must agree")


@dataclass
class SeResult:
    trace: list
    fixed_point: list
    converged: bool
    diverged: bool = False
    iterations: int = 0
    mse_trace: list = field(default_factory=list)


def state_evolution(cfg):
    """Iterate the scalar variance recursion of the turbo receiver.

    Each step maps the module-A prior variances to the denoiser input
    variances ``(d/rows)(sum_k v_a_k + noise) - v_a``, evaluates the scalar
    MMSE there, and removes the denoiser input by precision subtraction.
    ``mse_trace[t][n]`` predicts the per-entry MSE of the denoiser output at
    turbo iteration ``t + 1``; ``fixed_point`` is its last value.
    """
    v_a = [t.init_var if t.init_var is not None else t.prior.second_moment for t in cfg.tasks]
    trace, mse_trace = [], []
    converged = diverged = False
    previous = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        total = sum(v_a) + cfg.noise_var
        v_b, mmse, v_a_next = [], [], []
        for t, va in zip(cfg.tasks, v_a):
            rows = t.rows / 2.0 if cfg.paper_ratio else t.rows
            vb = (t.dim / rows) * total - va
            vb = min(max(vb, cfg.var_floor), cfg.var_ceil)
            m = min(max(bg_mmse(vb, t.prior), cfg.var_floor), cfg.var_ceil)
            precision = 1.0 / m - 1.0 / vb
            nxt = cfg.var_ceil if precision <= 0 else min(max(1.0 / precision, cfg.var_floor), cfg.var_ceil)
            v_b.append(vb)
            mmse.append(m)
            v_a_next.append(nxt)
        trace.append({"iter": it, "v_a_pri": list(v_a), "v_b_pri": v_b, "mse": mmse})
        mse_trace.append(mmse)
        v_a = v_a_next
        if any(vb >= cfg.var_ceil for vb in v_b):
            diverged = True
            break
        score = sum(mmse)
        if score <= len(mmse) * cfg.var_floor:
            converged = True
            break
        if previous is not None and abs(score - previous) <= cfg.rel_tol * abs(previous):
            converged = True
            break
        previous = score
    return SeResult(trace=trace, fixed_point=list(mse_trace[-1]), converged=converged and not diverged,
                    diverged=diverged, iterations=it, mse_trace=mse_trace)


def error_decomposition(full_gradient, sparsified_weighted, scheduled_weighted, recovered):
    """Split each task's update error into sparsification, selection and recovery parts.

    All inputs are per-task vectors: the exact dataset-weighted gradient,
    the weighted sparsified gradient over all devices, the same over the
    scheduled devices only, and the receiver's estimate.
    """
    n_tasks = len(full_gradient)
    if not (len(sparsified_weighted) == len(scheduled_weighted) == len(recovered) == n_tasks):
        raise ValueError("all inputs need one vector per task")
    out = []
    for g, sp, sc, rec in zip(full_gradient, sparsified_weighted, scheduled_weighted, recovered):
        g, sp, sc, rec = (np.asarray(a, dtype=float) for a in (g, sp, sc, rec))
        if not (g.shape == sp.shape == sc.shape == rec.shape):
            raise ValueError("vector lengths differ within a task")
        e1, e2, e3 = g - sp, sp - sc, sc - rec
        total = g - rec
        parts = [float(e @ e) for e in (e1, e2, e3)]
        total_sq = float(total @ total)
        out.append({
            "e1": e1, "e2": e2, "e3": e3, "total": total,
            "e1_sq": parts[0], "e2_sq": parts[1], "e3_sq": parts[2], "total_sq": total_sq,
            "sum_residual": float(np.max(np.abs(e1 + e2 + e3 - total))) if total.size else 0.0,
            "three_term_ok": total_sq <= 3.0 * sum(parts) * (1 + 1e-12) + 1e-300,
        })
    return out


def _check_ratio(r_n):
    if not (0.0 <= r_n < 1.0):
        raise ValueError(f"sparsification ratio must lie in [0, 1), got {r_n!r}")


def sparsification_ratio(dim, k):
    return float(np.sqrt((dim - k) / dim))


def _geometric_factor(r_n, t):
    return (2.0 * r_n - r_n**t - r_n ** (t + 1)) / (1.0 - r_n)


def psi(r_n, t, participation):
    """Combined sparsification/selection penalty for round ``t`` (1-based)."""
    _check_ratio(r_n)
    if t < 1:
        raise ValueError("t must be >= 1")
    if not (0.0 <= participation <= 1.0):
        raise ValueError("participation must lie in [0, 1]")
    return 1.5 * (_geometric_factor(r_n, t) ** 2 + (2.0 - 2.0 * participation) ** 2)


def appendix_error_bounds(r_n, t, participation, grad_norm_sq, beta1, beta2):
    """Upper bounds on ``||e1||^2`` and ``||e2||^2`` for round ``t``."""
    _check_ratio(r_n)
    scale = beta1 + beta2 * grad_norm_sq
    return _geometric_factor(r_n, t) ** 2 * scale, 4.0 * (1.0 - participation) ** 2 * scale


@dataclass
class BoundParams:
    """Constants and per-round sequences feeding the optimality-gap bound.

    ``participation`` and ``v_star`` are indexed ``[round][task]`` with
    round 0 corresponding to t = 1.
    """

    omega: list
    lipschitz: list
    beta1: list
    beta2: list
    dims: list
    top_k: list
    participation: np.ndarray
    v_star: np.ndarray
    initial_gap: float

    def __post_init__(self):
        self.participation = np.atleast_2d(np.asarray(self.participation, dtype=float))
        self.v_star = np.atleast_2d(np.asarray(self.v_star, dtype=float))
        n = len(self.omega)
        for name in ("lipschitz", "beta1", "beta2", "dims", "top_k"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} needs one entry per task")
        for o, L in zip(self.omega, self.lipschitz):
            if not (0 < o <= L):
                raise ValueError(f"need 0 < omega <= L, got omega={o}, L={L}")
        if any(b < 0 for b in self.beta1) or any(b <= 0 for b in self.beta2):
            raise ValueError("need beta1 >= 0 and beta2 > 0")
        for d, k in zip(self.dims, self.top_k):
            if not 1 <= k <= d:
                raise ValueError("need 1 <= k <= d")

    @property
    def ratios(self):
        return [sparsification_ratio(d, k) for d, k in zip(self.dims, self.top_k)]


@dataclass
class BoundResult:
    bounds: np.ndarray
    upsilon: np.ndarray
    upsilon_per_task: np.ndarray
    constants: np.ndarray
    psi: np.ndarray
    slow_rounds: list


def _round_row(arr, t):
    return arr[min(t - 1, arr.shape[0] - 1)]


def theorem1_bound(params, horizon):
    """Bounds on ``L(theta^(t+1)) - L(theta*)`` for ``t = 1..horizon``.

    Uses the per-task recursion ``gap^(t+1) <= Upsilon^(t) gap^(t) + C^(t)``
    unrolled exactly; the initial-gap term contracts with the worst task's
    rate each round.
    """
    n_tasks = len(params.omega)
    ratios = params.ratios
    ups = np.zeros((horizon, n_tasks))
    consts = np.zeros((horizon, n_tasks))
    psis = np.zeros((horizon, n_tasks))
    for t in range(1, horizon + 1):
        part = _round_row(params.participation, t)
        vstar = _round_row(params.v_star, t)
        for n in range(n_tasks):
            p = psi(ratios[n], t, part[n])
            om, L = params.omega[n], params.lipschitz[n]
            psis[t - 1, n] = p
            ups[t - 1, n] = 1.0 - om / L + 2.0 * om * params.beta2[n] * p / L
            consts[t - 1, n] = params.beta1[n] * p / L + 1.5 * params.dims[n] * vstar[n] / L

    bounds = np.zeros(horizon)
    contraction = 1.0
    carried = np.zeros(n_tasks)
    for t in range(horizon):
        contraction *= ups[t].max()
        carried = ups[t] * carried + consts[t]
        bounds[t] = params.initial_gap * contraction + carried.sum()
    worst = ups.max(axis=1)
    return BoundResult(bounds=bounds, upsilon=worst, upsilon_per_task=ups, constants=consts, psi=psis,
                       slow_rounds=[t + 1 for t in np.flatnonzero(worst >= 1.0)])


def lemma1_check(loss_t, loss_t1, grad_norm_sq, err_norm_sq, lipschitz, rtol=1e-12):
    """One-step descent inequality with step size ``1 / lipschitz``."""
    if lipschitz <= 0:
        raise ValueError("lipschitz must be positive")
    rhs = loss_t - grad_norm_sq / (2.0 * lipschitz) + err_norm_sq / (2.0 * lipschitz)
    return bool(loss_t1 <= rhs + rtol * max(1.0, abs(loss_t), abs(rhs)))
