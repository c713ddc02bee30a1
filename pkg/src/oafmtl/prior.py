"""Bernoulli-Gaussian prior: MMSE denoiser, scalar MMSE, EM refit, sampling."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_real_vector, check_finite, check_positive

GL_ORDER = 16
PANELS = 48
SPARSITY_FLOOR = 1e-300
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class BgPrior:
    """Each entry is 0 w.p. ``1 - sparsity``, else N(0, active_variance)."""

    sparsity: float
    active_variance: float

    def __post_init__(self):
        if not (0.0 < self.sparsity <= 1.0):
            raise ValueError(f"sparsity must lie in (0, 1], got {self.sparsity!r}")
        if not (np.isfinite(self.active_variance) and self.active_variance > 0):
            raise ValueError(f"active_variance must be positive, got {self.active_variance!r}")

    @property
    def second_moment(self):
        return self.sparsity * self.active_variance


def _responsibility(obs, noise_var, prior):
    """Posterior probability that each entry came from the active component.

    Evaluated as the logistic of the log-odds, which is the max-subtracted
    log-sum-exp of the two mixture terms.
    """
    lam, v = prior.sparsity, prior.active_variance
    if lam >= 1.0:
        return np.ones_like(obs)
    total = v + noise_var
    log_odds = (
        np.log(lam) - np.log1p(-lam)
        + 0.5 * np.log(noise_var / total)
        + 0.5 * obs**2 * (1.0 / noise_var - 1.0 / total)
    )
    return expit(log_odds)


def _posterior(obs, noise_var, prior):
    pi = _responsibility(obs, noise_var, prior)
    rho = prior.active_variance / (prior.active_variance + noise_var)
    active_mean = rho * obs
    active_var = rho * noise_var
    mean = pi * active_mean
    # pi * E[g^2 | active] - mean^2, rearranged to stay nonnegative
    var = pi * active_var + pi * (1.0 - pi) * active_mean**2
    return pi, active_mean, active_var, mean, var


def bg_denoise(obs, noise_var, prior):
    """Componentwise posterior mean under ``obs = g + N(0, noise_var)``.

    Returns ``(mean, avg_var)`` where ``avg_var`` is the posterior variance
    averaged over entries.
    """
    obs = check_finite(as_real_vector(obs, "obs"), "obs")
    noise_var = check_positive(noise_var, "noise_var")
    _, _, _, mean, var = _posterior(obs, noise_var, prior)
    return mean, float(np.mean(var))


def bg_posterior_variance(obs, noise_var, prior):
    """Per-entry posterior variance (same model as :func:`bg_denoise`)."""
    obs = as_real_vector(obs, "obs")
    return _posterior(obs, check_positive(noise_var, "noise_var"), prior)[4]


def bg_mmse(noise_var, prior, order=GL_ORDER):
    """Scalar MMSE ``E|g - E[g | g + n]|^2`` with ``n ~ N(0, noise_var)``.

    The observation is a two-component Gaussian mixture, so the expectation
    splits into one integral per component.  Each is evaluated with
    composite Gauss-Legendre on ``[0, 12 std]`` (the integrand is even),
    with extra panel edges packed around the point where the responsibility
    switches from the inactive to the active component.
    """
    if not np.isfinite(noise_var) or not np.isfinite(prior.active_variance):
        raise ValueError("bg_mmse requires finite inputs")
    noise_var = check_positive(noise_var, "noise_var")
    lam, v = prior.sparsity, prior.active_variance
    edges_extra = _transition_edges(noise_var, prior)
    total = 0.0
    for weight, scale in ((lam, v + noise_var), (1.0 - lam, noise_var)):
        if weight <= 0.0:
            continue
        std = np.sqrt(scale)
        r, w = _panel_rule(std, edges_extra, order)
        density = np.exp(-0.5 * r**2 / scale) / np.sqrt(2.0 * np.pi * scale)
        total += weight * 2.0 * np.dot(w, density * bg_posterior_variance(r, noise_var, prior))
    return float(total)


def _transition_edges(noise_var, prior):
    lam, v = prior.sparsity, prior.active_variance
    if lam >= 1.0:
        return np.empty(0)
    total = v + noise_var
    slope = 1.0 / noise_var - 1.0 / total
    # log-odds = c0 + 0.5 * slope * r^2 crosses zero at r_c
    c0 = np.log(lam) - np.log1p(-lam) + 0.5 * np.log(noise_var / total)
    r_c = np.sqrt(max(-2.0 * c0 / slope, 0.0))
    width = 1.0 / max(r_c * slope, np.sqrt(slope))
    return r_c + width * np.arange(-12.0, 12.5, 0.5)


def _panel_rule(std, extra, order):
    upper = 12.0 * std
    edges = np.concatenate([np.linspace(0.0, upper, PANELS + 1), extra])
    edges = np.unique(np.clip(edges, 0.0, upper))
    x, w = _legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    r = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return r, weights


_LEGENDRE_CACHE = {}


def _legendre(order):
    if order not in _LEGENDRE_CACHE:
        _LEGENDRE_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _LEGENDRE_CACHE[order]


def em_update(obs, noise_var, prior):
    """One EM step for ``(sparsity, active_variance)`` given noisy entries."""
    obs = check_finite(as_real_vector(obs, "obs"), "obs")
    noise_var = check_positive(noise_var, "noise_var")
    d = obs.size
    if not np.any(obs):
        return BgPrior(max(prior.sparsity, 1.0 / d), prior.active_variance)
    pi, m, s2, _, _ = _posterior(obs, noise_var, prior)
    weight = pi.sum()
    lam = float(np.clip(weight / d, 1.0 / d, 1.0))
    if weight <= SPARSITY_FLOOR:
        return BgPrior(lam, prior.active_variance)
    v = float(np.dot(pi, m**2 + s2) / weight)
    return BgPrior(lam, max(v, VARIANCE_FLOOR))


def sample_bg(d, prior, seed):
    d = int(d)
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    active = rng.random(d) < prior.sparsity
    return np.where(active, rng.normal(0.0, np.sqrt(prior.active_variance), d), 0.0)


class BernoulliGaussianDenoiser(TransformerMixin, BaseEstimator):
    """EM-fitted Bernoulli-Gaussian prior with an MMSE ``transform``.

    ``fit`` runs ``n_iter`` EM steps on noisy observations; ``transform``
    returns posterior means under the fitted prior.
    """

    def __init__(self, noise_var=1.0, sparsity=0.5, active_variance=None, n_iter=50):
        self.noise_var = noise_var
        self.sparsity = sparsity
        self.active_variance = active_variance
        self.n_iter = n_iter

    def fit(self, X, y=None):
        obs = as_real_vector(np.ravel(X), "X")
        v0 = self.active_variance
        if v0 is None:
            v0 = max(float(np.mean(obs**2)) - self.noise_var, VARIANCE_FLOOR) / self.sparsity
        prior = BgPrior(self.sparsity, v0)
        for _ in range(self.n_iter):
            prior = em_update(obs, self.noise_var, prior)
        self.prior_ = prior
        self.sparsity_ = prior.sparsity
        self.active_variance_ = prior.active_variance
        return self

    def transform(self, X):
        check_is_fitted(self, "prior_")
        X = np.asarray(X, dtype=float)
        mean, _ = bg_denoise(X.ravel(), self.noise_var, self.prior_)
        return mean.reshape(X.shape)

    def score_mse(self):
        check_is_fitted(self, "prior_")
        return bg_mmse(self.noise_var, self.prior_)
