"""Fading multiple-access channel and the scaled real-valued observation."""

from dataclasses import dataclass, field

import numpy as np


class EmptyScheduleError(ValueError):
    """No device cleared the truncation threshold, so nothing can be normalized."""


@dataclass(frozen=True)
class ChannelRound:
    gains: np.ndarray
    noise_std: float
    threshold: float = 0.0
    seed: int = 0
    scheduled: frozenset = field(init=False)

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=complex)
        if gains.ndim != 1 or not np.all(np.isfinite(gains)):
            raise ValueError("gains must be a finite 1-D complex array")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(
            self, "scheduled", frozenset(int(m) for m in np.flatnonzero(np.abs(gains) >= self.threshold))
        )

    @property
    def num_devices(self):
        return len(self.gains)


@dataclass(frozen=True)
class EffectiveObservation:
    y: np.ndarray
    noise_var: float
    normalizers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def rows(self):
        return len(self.y)


def draw_fading(num_devices, model="unit", seed=0):
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    if model == "unit":
        return np.ones(num_devices, dtype=complex)
    if model == "rayleigh":
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((num_devices, 2)) / np.sqrt(2.0)
        return z[:, 0] + 1j * z[:, 1]
    raise ValueError(f"unknown fading model {model!r}")


def transmit(signals, channel):
    """``r = sum_m h_m s_m + w`` with ``w ~ CN(0, noise_std^2 I)``."""
    signals = [np.asarray(s, dtype=complex) for s in signals]
    if len(signals) != channel.num_devices:
        raise ValueError(f"got {len(signals)} signals for {channel.num_devices} devices")
    length = len(signals[0])
    if any(len(s) != length for s in signals):
        raise ValueError("all device signals must have the same length")
    r = np.zeros(length, dtype=complex)
    for h, s in zip(channel.gains, signals):
        r += h * s
    if channel.noise_std > 0:
        rng = np.random.default_rng(channel.seed)
        w = rng.standard_normal((2, length)) * (channel.noise_std / np.sqrt(2.0))
        r += w[0] + 1j * w[1]
    return r


def scheduled_normalizer(dataset_sizes, scheduled):
    """Per-task ``sum_{m in M} K_nm``; must agree across tasks.

    ``dataset_sizes`` is indexed ``[task][device]``.
    """
    K = np.asarray(dataset_sizes, dtype=float)
    if K.ndim == 1:
        K = K[None, :]
    if not scheduled:
        raise EmptyScheduleError("no device is scheduled in this round")
    idx = sorted(scheduled)
    sums = K[:, idx].sum(axis=1)
    if np.any(sums <= 0):
        raise EmptyScheduleError("a task has no scheduled data")
    if not np.allclose(sums, sums[0], rtol=0, atol=0):
        raise ValueError(
            "scheduled dataset sizes differ across tasks "
            f"({sums.tolist()}); a single scaling of the shared observation is impossible"
        )
    return sums


def scaled_noise_var(noise_var_w, gamma, normalizer, paper_sigma=False):
    """Per-component noise variance of ``y`` after dividing by ``gamma * normalizer``."""
    scale = gamma * normalizer
    if paper_sigma:
        return float(noise_var_w / (4.0 * scale**2))
    return float(noise_var_w / (2.0 * scale**2))


def effective_observation(r, channel, gamma, dataset_sizes, paper_sigma=False):
    """Stack real and imaginary parts and undo the ``gamma * sum K`` scaling.

    Each real component of the received noise has variance
    ``noise_std^2 / 2``, so the scaled noise variance is
    ``noise_std^2 / (2 gamma^2 (sum K)^2)``.  ``paper_sigma=True`` instead
    uses the standard deviation ``noise_std / (2 gamma sum K)``.
    """
    sums = scheduled_normalizer(dataset_sizes, channel.scheduled)
    scale = gamma * sums[0]
    r = np.asarray(r, dtype=complex)
    y = np.concatenate([r.real, r.imag]) / scale
    noise_var = scaled_noise_var(channel.noise_std**2, gamma, sums[0], paper_sigma)
    return EffectiveObservation(y=y, noise_var=noise_var, normalizers=tuple(float(s) for s in sums))
