"""Strongly convex per-task models: least squares and multinomial logistic regression.

Both use an L2 penalty ``reg/2 ||theta||^2`` folded into every sample's
loss, so local and global losses are plain sample averages.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from ._validation import check_length


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    dim: int
    top_k: int
    kind: str = "logistic"
    reg: float = 0.0
    learning_rate: float = 0.1
    n_classes: int = 1

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if not 1 <= self.top_k <= self.dim:
            raise ValueError(f"top_k must lie in [1, {self.dim}], got {self.top_k}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.reg < 0:
            raise ValueError("reg must be nonnegative")
        if self.kind == "logistic" and self.dim % self.n_classes:
            raise ValueError("dim must be a multiple of n_classes for logistic tasks")

    @property
    def n_features(self):
        return self.dim // self.n_classes if self.kind == "logistic" else self.dim


def _weights(task, params):
    return params.reshape(task.n_classes, task.n_features)


def loss(task, params, X, y):
    """Average sample loss; 0 for an empty sample set."""
    params = np.asarray(params, dtype=float)
    check_length(params, task.dim, "params")
    if len(y) == 0:
        return 0.0
    penalty = 0.5 * task.reg * float(params @ params)
    if task.kind == "quadratic":
        resid = X @ params - y
        return 0.5 * float(np.mean(resid**2)) + penalty
    logits = X @ _weights(task, params).T
    nll = logsumexp(logits, axis=1) - logits[np.arange(len(y)), y]
    return float(np.mean(nll)) + penalty


def local_gradient(task, params, X, y):
    """Full-batch gradient of the average loss over ``(X, y)``; zero if empty."""
    params = np.asarray(params, dtype=float)
    check_length(params, task.dim, "params")
    if len(y) == 0:
        return np.zeros(task.dim)
    if task.kind == "quadratic":
        resid = X @ params - y
        return X.T @ resid / len(y) + task.reg * params
    W = _weights(task, params)
    P = softmax(X @ W.T, axis=1)
    P[np.arange(len(y)), y] -= 1.0
    return (P.T @ X / len(y)).ravel() + task.reg * params


def per_sample_gradient_norms_sq(task, params, X, y):
    """Squared norm of every sample's gradient (rows of the Jacobian)."""
    if len(y) == 0:
        return np.zeros(0)
    if task.kind == "quadratic":
        G = X * (X @ params - y)[:, None] + task.reg * params[None, :]
        return np.einsum("ij,ij->i", G, G)
    W = _weights(task, params)
    P = softmax(X @ W.T, axis=1)
    P[np.arange(len(y)), y] -= 1.0
    # grad_i = outer(P_i, x_i) + reg W; expand the squared Frobenius norm
    xx = np.einsum("ij,ij->i", X, X)
    pp = np.einsum("ij,ij->i", P, P)
    cross = np.einsum("ic,ic->i", P, X @ W.T)
    return pp * xx + 2.0 * task.reg * cross + task.reg**2 * float(params @ params)


def hessian(task, params, X, y):
    if task.kind == "quadratic":
        return X.T @ X / len(y) + task.reg * np.eye(task.dim)
    W = _weights(task, params)
    P = softmax(X @ W.T, axis=1)
    C, F = task.n_classes, task.n_features
    H = np.zeros((C * F, C * F))
    for i in range(len(y)):
        S = np.diag(P[i]) - np.outer(P[i], P[i])
        H += np.kron(S, np.outer(X[i], X[i]))
    return H / len(y) + task.reg * np.eye(task.dim)


def curvature_bounds(task, X, y):
    """``(omega, L)`` valid over all of parameter space.

    Exact for least squares.  For logistic regression the softmax Hessian
    block is dominated by ``I/2``, giving ``L <= lambda_max(X^T X / K)/2 + reg``,
    while ``omega`` falls back to ``reg``.
    """
    eig = np.linalg.eigvalsh(X.T @ X / len(y))
    if task.kind == "quadratic":
        return float(eig[0] + task.reg), float(eig[-1] + task.reg)
    return float(task.reg), float(0.5 * eig[-1] + task.reg)


def predict(task, params, X):
    if task.kind == "quadratic":
        return X @ params
    return np.argmax(X @ _weights(task, params).T, axis=1)


def accuracy(task, params, X, y):
    if task.kind == "quadratic":
        # no labels to classify; report 1 - normalized residual for a comparable curve
        resid = X @ params - y
        return float(1.0 - np.mean(resid**2) / max(np.mean(y**2), 1e-300))
    return float(np.mean(predict(task, params, X) == y))


def global_step(params, g_hat, learning_rate):
    params = np.asarray(params, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if params.shape != g_hat.shape:
        raise ValueError("params and g_hat must have the same shape")
    return params - learning_rate * g_hat
