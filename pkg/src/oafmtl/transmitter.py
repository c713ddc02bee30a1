"""Device-side encoder: error feedback, top-k, compression, superposition, power control."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_real_vector, check_length
from .transform import forward


@dataclass(frozen=True)
class DeviceState:
    device_id: int
    buffers: tuple
    dataset_sizes: tuple

    @classmethod
    def fresh(cls, device_id, dims, dataset_sizes):
        if len(dims) != len(dataset_sizes):
            raise ValueError("need one dataset size per task")
        return cls(device_id, tuple(np.zeros(int(d)) for d in dims), tuple(int(k) for k in dataset_sizes))

    @property
    def num_tasks(self):
        return len(self.buffers)


@dataclass(frozen=True)
class PowerPolicy:
    budget: float = 0.1
    gamma: float = 1000.0
    threshold: float = 0.0
    mode: str = "fixed_gamma"

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.mode not in ("fixed_gamma", "auto_gamma"):
            raise ValueError(f"unknown power mode {self.mode!r}")
        if self.mode == "fixed_gamma" and self.gamma <= 0:
            raise ValueError("gamma must be positive in fixed_gamma mode")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")


@dataclass
class Transmission:
    tx: np.ndarray
    state: DeviceState
    accumulated: list = field(default_factory=list)
    sparsified: list = field(default_factory=list)
    power: float = 0.0
    power_ok: bool = True
    scheduled: bool = True


def accumulate(grad, state, task):
    if not 0 <= task < state.num_tasks:
        raise IndexError(f"task {task} out of range for {state.num_tasks} tasks")
    grad = as_real_vector(grad, "grad")
    check_length(grad, len(state.buffers[task]), "grad")
    return grad + state.buffers[task]


def top_k_sparsify(x, k):
    """Keep the ``k`` largest-magnitude entries; ties go to the lower index."""
    x = as_real_vector(x, allow_empty=True)
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k > x.size:
        raise ValueError(f"k ({k}) exceeds vector length ({x.size})")
    out = np.zeros_like(x)
    if k == 0:
        return out
    # stable sort on -|x| keeps index order among equal magnitudes
    keep = np.argsort(-np.abs(x), kind="stable")[:k]
    out[keep] = x[keep]
    return out


def residual_update(x_ac, x_sp):
    x_ac = as_real_vector(x_ac, "x_ac", allow_empty=True)
    x_sp = as_real_vector(x_sp, "x_sp", allow_empty=True)
    if x_ac.shape != x_sp.shape:
        raise ValueError("x_ac and x_sp must have equal length")
    return x_ac - x_sp


def superpose(compressed, weights):
    compressed = [as_real_vector(c, "compressed") for c in compressed]
    if len(compressed) != len(weights):
        raise ValueError("need one weight per task")
    length = len(compressed[0])
    out = np.zeros(length)
    for c, k in zip(compressed, weights):
        check_length(c, length, "compressed")
        out += k * c
    return out


def pack_complex(x):
    x = as_real_vector(x, allow_empty=True)
    if x.size % 2:
        raise ValueError("pack_complex needs an even-length vector")
    s = x.size // 2
    return x[:s] + 1j * x[s:]


def unpack_complex(z):
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z.real, z.imag])


def auto_gamma(norms, gains, budget, threshold=0.0):
    """Largest common ``gamma`` keeping every scheduled device within ``budget``.

    Device ``m`` sends ``(gamma / h_m) x_m`` with power
    ``gamma^2 ||x_m||^2 / |h_m|^2``, so ``gamma = min sqrt(P) |h_m| / ||x_m||``.
    """
    gains = np.abs(np.asarray(gains, dtype=complex))
    norms = np.asarray(norms, dtype=float)
    candidates = [
        np.sqrt(budget) * g / n for g, n in zip(gains, norms) if g >= threshold and n > 0 and g > 0
    ]
    if not candidates:
        return 1.0
    return float(min(candidates))


def channel_invert(x_tilde, h, policy, gamma=None):
    """Pre-equalize by ``gamma / h``; silence the device when ``|h| < threshold``.

    Returns ``(signal, power_ok)``.  In ``auto_gamma`` mode ``gamma`` must be
    supplied (see :func:`auto_gamma`) and the budget is asserted.
    """
    x_tilde = np.asarray(x_tilde, dtype=complex)
    g = policy.gamma if gamma is None else gamma
    if abs(h) < policy.threshold:
        return np.zeros_like(x_tilde), True
    if h == 0:
        raise ValueError("cannot invert a zero channel gain (threshold is 0)")
    s = (g / h) * x_tilde
    power = float(np.vdot(s, s).real)
    ok = power <= policy.budget + 1e-12
    if policy.mode == "auto_gamma" and not ok:
        raise AssertionError(f"transmit power {power} exceeds budget {policy.budget}")
    return s, ok


@dataclass
class DeviceUpdate:
    superposed: np.ndarray
    state: DeviceState
    accumulated: list
    sparsified: list
    compressed: list


def compress_device(gradients, state, ops, k):
    """Error feedback, top-k and compression for every task on one device.

    ``superposed`` is the dataset-size weighted sum of the per-task
    compressed vectors (length ``rows``).
    """
    if not (len(gradients) == len(ops) == len(k) == state.num_tasks):
        raise ValueError("gradients, operators, k and device buffers must agree in task count")
    accumulated, sparsified, buffers, compressed = [], [], [], []
    for n, (grad, op) in enumerate(zip(gradients, ops)):
        acc = accumulate(grad, state, n)
        sp = top_k_sparsify(acc, k[n])
        accumulated.append(acc)
        sparsified.append(sp)
        buffers.append(residual_update(acc, sp))
        compressed.append(forward(op, sp))
    x = superpose(compressed, state.dataset_sizes)
    new_state = DeviceState(state.device_id, tuple(buffers), state.dataset_sizes)
    return DeviceUpdate(x, new_state, accumulated, sparsified, compressed)


def device_encode(gradients, state, ops, k, h, policy, gamma=None):
    """Full device pipeline for one round.

    Buffers advance even when the device is silenced by the threshold.
    """
    upd = compress_device(gradients, state, ops, k)
    x_tilde = pack_complex(upd.superposed)
    tx, ok = channel_invert(x_tilde, h, policy, gamma)
    power = float(np.vdot(tx, tx).real)
    return Transmission(tx=tx, state=upd.state, accumulated=upd.accumulated, sparsified=upd.sparsified, power=power,
                        power_ok=ok, scheduled=abs(h) >= policy.threshold)
