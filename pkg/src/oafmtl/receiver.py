"""M-Turbo-CS: joint recovery of N superimposed partial-DCT compressed tasks.

Module A enforces the shared linear observation ``y = sum_n A_n g_n + n``,
module B applies a per-task Bernoulli-Gaussian MMSE denoiser, and the two
exchange extrinsic means/variances.  ``scheme2_recover`` runs the same
loop one task at a time while ignoring the other tasks' contributions.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .channel import EffectiveObservation
from .prior import BgPrior, bg_denoise, em_update
from .transform import adjoint, forward

logger = logging.getLogger(__name__)


@dataclass
class TurboOptions:
    max_iters: int = 30
    rel_tol: float = 1e-6
    var_floor: float = 1e-12
    var_ceil: float = 1e12
    em_enabled: bool = False
    # rows/d_n in the module-A variance update; True uses (rows/2)/d_n
    paper_ratio: bool = False
    # "prior": start from each prior's second moment; "observation": ||y||^2/(N s)
    init: str = "observation"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (0 < self.var_floor < self.var_ceil):
            raise ValueError("need 0 < var_floor < var_ceil")
        if self.init not in ("prior", "observation"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class TurboTaskState:
    g_a_pri: np.ndarray
    v_a_pri: float
    g_a_post: np.ndarray = None
    v_a_post: float = None
    g_b_pri: np.ndarray = None
    v_b_pri: float = None
    g_b_post: np.ndarray = None
    v_b_post: float = None

    @classmethod
    def initial(cls, dim, variance):
        return cls(g_a_pri=np.zeros(dim), v_a_pri=float(variance))


@dataclass
class TurboResult:
    estimates: list
    trace: list = field(default_factory=list)
    priors: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def measurement_ratio(op, paper_ratio=False):
    rows = op.rows / 2.0 if paper_ratio else op.rows
    return rows / op.dim


def _clamp(v, opts):
    return float(min(max(v, opts.var_floor), opts.var_ceil))


def extrinsic(post_mean, post_var, pri_mean, pri_var, var_floor=1e-12, var_ceil=1e12):
    """Remove the incoming prior from a Gaussian posterior (precision subtraction).

    When ``post_var >= pri_var`` the posterior carries no new information;
    the variance is then pinned at ``var_ceil`` and the mean falls back to
    the posterior mean.
    """
    values = (post_var, pri_var)
    if not all(np.isfinite(values)) or not np.all(np.isfinite(post_mean)) or not np.all(np.isfinite(pri_mean)):
        raise ValueError("extrinsic requires finite inputs")
    if post_var <= 0 or pri_var <= 0:
        raise ValueError("variances must be positive")
    precision = 1.0 / post_var - 1.0 / pri_var
    if precision <= 0 or 1.0 / precision > var_ceil:
        return np.array(post_mean, dtype=float, copy=True), float(var_ceil)
    ext_var = 1.0 / precision
    ext_mean = ext_var * (np.asarray(post_mean) / post_var - np.asarray(pri_mean) / pri_var)
    return ext_mean, float(max(ext_var, var_floor))


def module_a_update(states, y, ops, noise_var, opts=None):
    """LMMSE step against the shared observation, updating states in place."""
    opts = opts or TurboOptions()
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    residual = np.array(y, dtype=float, copy=True)
    for st, op in zip(states, ops):
        residual -= forward(op, st.g_a_pri)
    total = sum(st.v_a_pri for st in states) + noise_var
    for st, op in zip(states, ops):
        gain = st.v_a_pri / total
        st.g_a_post = st.g_a_pri + gain * adjoint(op, residual)
        ratio = measurement_ratio(op, opts.paper_ratio)
        st.v_a_post = _clamp(st.v_a_pri - ratio * st.v_a_pri**2 / total, opts)
    return states


def _initial_variances(y, ops, priors, opts):
    if opts.init == "prior" and all(isinstance(p, BgPrior) for p in priors):
        return [p.second_moment for p in priors]
    s = len(y) / 2.0
    v = float(np.dot(y, y)) / (len(ops) * s)
    return [max(v, opts.var_floor)] * len(ops)


def _turbo_loop(y, noise_var, ops, priors, opts, truth=None, design_sparsity=None):
    ops = list(ops)
    n_tasks = len(ops)
    if any(op.rows != len(y) for op in ops):
        raise ValueError("every operator must have as many rows as y has entries")
    v_ini = _initial_variances(y, ops, priors, opts)
    learned = []
    for n, p in enumerate(priors):
        if isinstance(p, BgPrior):
            learned.append(p)
        else:
            lam = design_sparsity[n] if design_sparsity is not None else 0.5
            learned.append(BgPrior(float(np.clip(lam, 1.0 / ops[n].dim, 1.0)), v_ini[n]))
    estimate_mask = [not isinstance(p, BgPrior) for p in priors]
    states = [TurboTaskState.initial(op.dim, v) for op, v in zip(ops, v_ini)]

    trace = []
    best = None
    best_score = np.inf
    previous = None
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        v_a_used = [st.v_a_pri for st in states]
        module_a_update(states, y, ops, noise_var, opts)
        for n, st in enumerate(states):
            st.g_b_pri, st.v_b_pri = extrinsic(
                st.g_a_post, st.v_a_post, st.g_a_pri, st.v_a_pri, opts.var_floor, opts.var_ceil
            )
            st.g_b_post, v_post = bg_denoise(st.g_b_pri, st.v_b_pri, learned[n])
            st.v_b_post = _clamp(v_post, opts)
            if opts.em_enabled and estimate_mask[n]:
                learned[n] = em_update(st.g_b_pri, st.v_b_pri, learned[n])
            st.g_a_pri, st.v_a_pri = extrinsic(
                st.g_b_post, st.v_b_post, st.g_b_pri, st.v_b_pri, opts.var_floor, opts.var_ceil
            )
        for n, st in enumerate(states):
            row = {
                "iter": it,
                "task": n,
                "v_a_pri": v_a_used[n],
                "v_b_pri": st.v_b_pri,
                "v_b_post": st.v_b_post,
                "empirical_mse": np.nan,
            }
            if truth is not None:
                row["empirical_mse"] = float(np.mean((st.g_b_post - truth[n]) ** 2))
            trace.append(row)

        score = sum(st.v_b_post for st in states)
        if score < best_score:
            best_score = score
            best = [st.g_b_post.copy() for st in states]
        if score <= n_tasks * opts.var_floor:
            converged = True
            break
        if previous is not None and abs(score - previous) <= opts.rel_tol * abs(previous):
            converged = True
            break
        previous = score

    if converged:
        best = [st.g_b_post.copy() for st in states]
    else:
        logger.debug("turbo loop stopped at max_iters=%d without meeting rel_tol", opts.max_iters)
    return TurboResult(estimates=best, trace=trace, priors=learned, converged=converged, iterations=it)


def _unpack_observation(obs, noise_var):
    if isinstance(obs, EffectiveObservation):
        return obs.y, obs.noise_var
    if noise_var is None:
        raise ValueError("noise_var is required when passing a raw vector")
    return np.asarray(obs, dtype=float), float(noise_var)


def m_turbo_cs(obs, ops, priors, opts=None, noise_var=None, truth=None, design_sparsity=None):
    """Recover every task's vector from one superimposed observation.

    ``priors`` holds a :class:`BgPrior` per task, or ``"estimate"`` to learn
    it by EM inside the loop.  ``truth`` (optional) only feeds the
    ``empirical_mse`` column of the trace.
    """
    opts = opts or TurboOptions()
    y, nv = _unpack_observation(obs, noise_var)
    ops = list(ops)
    if isinstance(priors, (BgPrior, str)):
        priors = [priors] * len(ops)
    if len(priors) != len(ops):
        raise ValueError("need one prior per task")
    return _turbo_loop(y, nv, ops, priors, opts, truth=truth, design_sparsity=design_sparsity)


def scheme2_recover(obs, op, prior, opts=None, noise_var=None, truth=None, design_sparsity=None):
    """Single-task Turbo-CS on the shared observation, blind to other tasks."""
    opts = opts or TurboOptions()
    y, nv = _unpack_observation(obs, noise_var)
    truth = None if truth is None else [truth]
    sparsity = None if design_sparsity is None else [design_sparsity]
    return _turbo_loop(y, nv, [op], [prior], opts, truth=truth, design_sparsity=sparsity)


def scheme2_recover_all(obs, ops, priors, opts=None, noise_var=None, truth=None, design_sparsity=None):
    """Run :func:`scheme2_recover` for each task; returns per-task results."""
    ops = list(ops)
    if isinstance(priors, (BgPrior, str)):
        priors = [priors] * len(ops)
    results = []
    for n, op in enumerate(ops):
        results.append(
            scheme2_recover(
                obs,
                op,
                priors[n],
                opts,
                noise_var=noise_var,
                truth=None if truth is None else truth[n],
                design_sparsity=None if design_sparsity is None else design_sparsity[n],
            )
        )
    return results


def trace_rows(result, scheme="m_turbo_cs"):
    return [dict(row, scheme=scheme) for row in result.trace]


class MTurboCS(BaseEstimator):
    """Estimator front end for :func:`m_turbo_cs`.

    ``fit(y, operators)`` recovers the task vectors; results land in
    ``coef_`` (list of arrays), ``trace_`` and ``priors_``.
    """

    def __init__(self, priors="estimate", noise_var=1e-6, max_iters=30, rel_tol=1e-6,
                 em_enabled=True, init="observation", paper_ratio=False):
        self.priors = priors
        self.noise_var = noise_var
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.em_enabled = em_enabled
        self.init = init
        self.paper_ratio = paper_ratio

    def _options(self):
        return TurboOptions(max_iters=self.max_iters, rel_tol=self.rel_tol, em_enabled=self.em_enabled,
                            init=self.init, paper_ratio=self.paper_ratio)

    def fit(self, y, operators):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        result = m_turbo_cs(y, operators, self.priors, self._options(), noise_var=self.noise_var)
        self.coef_ = result.estimates
        self.trace_ = result.trace
        self.priors_ = result.priors
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        return self

    def predict(self, operators):
        """Re-synthesize the noiseless observation from the recovered vectors."""
        return sum(forward(op, g) for op, g in zip(operators, self.coef_))

