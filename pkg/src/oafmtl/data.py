"""Federated datasets: synthetic generators and an IDX (MNIST-family) reader."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxMismatchError(IdxError):
    pass


@dataclass
class FederatedDataset:
    """One task's samples split across devices, plus a held-out test set."""

    task_id: int
    device_X: list
    device_y: list
    X_test: np.ndarray
    y_test: np.ndarray
    optimum: np.ndarray = None

    def __post_init__(self):
        if len(self.device_X) != len(self.device_y):
            raise ValueError("device_X and device_y must have one entry per device")
        for X, y in zip(self.device_X, self.device_y):
            if len(X) != len(y):
                raise ValueError("sample/label count mismatch on a device")

    @property
    def num_devices(self):
        return len(self.device_X)

    @property
    def counts(self):
        return [len(y) for y in self.device_y]

    @property
    def X_train(self):
        return np.concatenate(self.device_X, axis=0)

    @property
    def y_train(self):
        return np.concatenate(self.device_y, axis=0)


def _split(X, y, num_devices, samples_per_device, test_samples):
    n_train = num_devices * samples_per_device
    device_X = [X[m * samples_per_device:(m + 1) * samples_per_device] for m in range(num_devices)]
    device_y = [y[m * samples_per_device:(m + 1) * samples_per_device] for m in range(num_devices)]
    return device_X, device_y, X[n_train:n_train + test_samples], y[n_train:n_train + test_samples]


def make_synthetic(kind, dim, n_classes=1, samples_per_device=50, seed=0, num_devices=20,
                   test_samples=1000, reg=0.0, separation=2.0, condition=10.0, task_id=0,
                   informative=None, noise_scale=1.0):
    """Seeded strongly convex classification or regression data.

    ``logistic``: Gaussian class clusters in ``dim / n_classes`` features
    (the last feature is a constant bias).  Only ``informative`` randomly
    chosen features carry class signal; their scales span ``condition`` so
    plain gradient descent needs many rounds, and the remaining features
    are nuisance noise scaled by ``noise_scale``.  ``quadratic``: linear
    regression with an anisotropic design whose covariance spectrum spans
    ``condition``; the exact ridge minimizer is stored in ``optimum``.
    """
    rng = np.random.default_rng(seed)
    total = num_devices * samples_per_device + test_samples
    if kind == "logistic":
        if dim % n_classes:
            raise ValueError("dim must be divisible by n_classes")
        F = dim // n_classes
        n_inf = F - 1 if informative is None else int(informative)
        if not 1 <= n_inf <= F - 1:
            raise ValueError(f"informative must lie in [1, {F - 1}]")
        idx = rng.choice(F - 1, n_inf, replace=False)
        means = np.zeros((n_classes, F - 1))
        means[:, idx] = rng.standard_normal((n_classes, n_inf))
        means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
        y = rng.integers(0, n_classes, total)
        scales = np.full(F - 1, float(noise_scale))
        scales[idx] = np.geomspace(1.0, 1.0 / condition, n_inf)
        X = (means[y] + rng.standard_normal((total, F - 1))) * scales
        X = np.hstack([X, np.ones((total, 1))])
        device_X, device_y, X_test, y_test = _split(X, y, num_devices, samples_per_device, test_samples)
        return FederatedDataset(task_id, device_X, device_y, X_test, y_test)
    if kind == "quadratic":
        scales = np.sqrt(np.geomspace(1.0, 1.0 / condition, dim))
        X = rng.standard_normal((total, dim)) * scales
        theta_true = rng.standard_normal(dim)
        y = X @ theta_true + 0.5 * rng.standard_normal(total)
        device_X, device_y, X_test, y_test = _split(X, y, num_devices, samples_per_device, test_samples)
        Xtr = np.concatenate(device_X)
        ytr = np.concatenate(device_y)
        H = Xtr.T @ Xtr / len(ytr) + reg * np.eye(dim)
        optimum = np.linalg.solve(H, Xtr.T @ ytr / len(ytr))
        return FederatedDataset(task_id, device_X, device_y, X_test, y_test, optimum=optimum)
    raise ValueError(f"unknown task kind {kind!r}")


def rescale_smoothness(dataset, target_lipschitz, reg, kind="quadratic"):
    """Scale features so the task's smoothness constant equals ``target_lipschitz``."""
    Xtr = dataset.X_train
    top = np.linalg.eigvalsh(Xtr.T @ Xtr / len(Xtr))[-1]
    if kind == "logistic":
        top *= 0.5
    if target_lipschitz <= reg:
        raise ValueError("target smoothness must exceed the ridge term")
    factor = np.sqrt((target_lipschitz - reg) / top)
    out = FederatedDataset(
        dataset.task_id,
        [X * factor for X in dataset.device_X],
        list(dataset.device_y),
        dataset.X_test * factor,
        dataset.y_test,
    )
    if kind == "quadratic":
        Xs, ys = out.X_train, out.y_train
        H = Xs.T @ Xs / len(ys) + reg * np.eye(Xs.shape[1])
        out.optimum = np.linalg.solve(H, Xs.T @ ys / len(ys))
    return out


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path, expected_magic=None):
    """Parse an unsigned-byte IDX file into an array of its stated shape."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise IdxMagicError(f"{path}: unsupported magic {magic:#010x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def ingest_idx(images_path, labels_path, n_classes=10):
    """Load an image/label IDX pair as ``(features in [0, 1], labels)``.

    Features are flattened per image; use :func:`read_idx` for the raw
    ``(n, rows, cols)`` array.
    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= n_classes:
        raise IdxMismatchError(f"label {int(labels.max())} outside [0, {n_classes})")
    X = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return X, labels.astype(np.int64)


def write_idx(path, array):
    """Write a uint8 array as IDX (used for fixtures and round-trip tests)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def federate_arrays(X, y, num_devices, samples_per_device, test_X, test_y, task_id=0, seed=0):
    """IID split of an in-memory dataset (e.g. from :func:`ingest_idx`) across devices."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))[: num_devices * samples_per_device]
    if len(order) < num_devices * samples_per_device:
        raise ValueError("not enough samples for the requested split")
    X, y = X[order], y[order]
    device_X = [X[m * samples_per_device:(m + 1) * samples_per_device] for m in range(num_devices)]
    device_y = [y[m * samples_per_device:(m + 1) * samples_per_device] for m in range(num_devices)]
    return FederatedDataset(task_id, device_X, device_y, np.asarray(test_X), np.asarray(test_y))
