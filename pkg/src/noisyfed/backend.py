"""Numeric kernels with a numba fast path and a pure-numpy fallback.

The hot loops are the per-client local SGD steps and batch-gradient
evaluations; everything else in the package is orchestration. The backend
is chosen once per process from the environment variable
``NOISYFED_BACKEND`` ("numba" or "numpy", default "numba" when numba is
importable). Within a backend all gradient arithmetic goes through a
single code path, so repeated runs are bit-identical. The two backends
agree only up to floating-point summation order.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return deco


_VALID = ("numba", "numpy")
_backend: str | None = None


def active_backend() -> str:
    """Resolve the backend once; honors NOISYFED_BACKEND."""
    global _backend
    if _backend is None:
        choice = os.environ.get("NOISYFED_BACKEND", "").strip().lower()
        if choice and choice not in _VALID:
            raise ValueError(f"NOISYFED_BACKEND must be one of {_VALID}, got {choice!r}")
        if not choice:
            choice = "numba" if _HAVE_NUMBA else "numpy"
        if choice == "numba" and not _HAVE_NUMBA:
            raise ValueError("NOISYFED_BACKEND=numba but numba is not importable")
        _backend = choice
    return _backend


def set_backend(name: str) -> None:
    """Override the backend (used by tests and the benchmark script)."""
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if name == "numba" and not _HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _backend = name


# ---------------------------------------------------------------------------
# mean-squared-error linear model, loss 0.5 * (<w, x> - y)^2
# ---------------------------------------------------------------------------


def _mse_grad_np(X, y, w, idx):
    Xb = X[idx]
    r = Xb @ w - y[idx]
    return (Xb.T @ r) / idx.shape[0]


@njit(cache=True, nogil=True)
def _mse_grad_nb(X, y, w, idx):  # pragma: no cover - exercised via dispatch
    b = idx.shape[0]
    d = w.shape[0]
    g = np.zeros(d)
    for t in range(b):
        i = idx[t]
        r = -y[i]
        for j in range(d):
            r += X[i, j] * w[j]
        for j in range(d):
            g[j] += r * X[i, j]
    for j in range(d):
        g[j] /= b
    return g


def _mse_local_steps_np(X, y, w0, eta, batches):
    w = w0.copy()
    acc = np.zeros_like(w0)
    for t in range(batches.shape[0]):
        g = _mse_grad_np(X, y, w, batches[t])
        acc += g
        w = w - eta * g
    return w, acc


@njit(cache=True, nogil=True)
def _mse_local_steps_nb(X, y, w0, eta, batches):  # pragma: no cover
    w = w0.copy()
    acc = np.zeros_like(w0)
    for t in range(batches.shape[0]):
        g = _mse_grad_nb(X, y, w, batches[t])
        for j in range(w.shape[0]):
            acc[j] += g[j]
            w[j] -= eta * g[j]
    return w, acc


# ---------------------------------------------------------------------------
# softmax linear classifier, params flattened (C, d) row-major
# ---------------------------------------------------------------------------


def _softmax_probs_np(X, W):
    z = X @ W.T
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def _softmax_grad_np(X, labels, w, idx, n_classes):
    d = X.shape[1]
    W = w.reshape(n_classes, d)
    Xb = X[idx]
    p = _softmax_probs_np(Xb, W)
    for row, lab in enumerate(labels[idx]):
        p[row, lab] -= 1.0
    return (p.T @ Xb / idx.shape[0]).ravel()


@njit(cache=True, nogil=True)
def _softmax_grad_nb(X, labels, w, idx, n_classes):  # pragma: no cover
    b = idx.shape[0]
    d = X.shape[1]
    g = np.zeros(n_classes * d)
    z = np.empty(n_classes)
    for t in range(b):
        i = idx[t]
        for c in range(n_classes):
            s = 0.0
            for j in range(d):
                s += w[c * d + j] * X[i, j]
            z[c] = s
        zmax = z[0]
        for c in range(1, n_classes):
            if z[c] > zmax:
                zmax = z[c]
        tot = 0.0
        for c in range(n_classes):
            z[c] = np.exp(z[c] - zmax)
            tot += z[c]
        for c in range(n_classes):
            p = z[c] / tot
            if c == labels[i]:
                p -= 1.0
            for j in range(d):
                g[c * d + j] += p * X[i, j]
    for j in range(n_classes * d):
        g[j] /= b
    return g


def _softmax_local_steps_np(X, labels, w0, eta, batches, n_classes):
    w = w0.copy()
    acc = np.zeros_like(w0)
    for t in range(batches.shape[0]):
        g = _softmax_grad_np(X, labels, w, batches[t], n_classes)
        acc += g
        w = w - eta * g
    return w, acc


@njit(cache=True, nogil=True)
def _softmax_local_steps_nb(X, labels, w0, eta, batches, n_classes):  # pragma: no cover
    w = w0.copy()
    acc = np.zeros_like(w0)
    for t in range(batches.shape[0]):
        g = _softmax_grad_nb(X, labels, w, batches[t], n_classes)
        for j in range(w.shape[0]):
            acc[j] += g[j]
            w[j] -= eta * g[j]
    return w, acc


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def batch_gradient(kind, X, y, w, idx, n_classes=0):
    """Mean gradient over the rows ``idx``; one arithmetic path per backend."""
    idx = np.asarray(idx, dtype=np.int64)
    if active_backend() == "numba":
        if kind == "mse_linear":
            return _mse_grad_nb(X, y, w, idx)
        return _softmax_grad_nb(X, y, w, idx, n_classes)
    if kind == "mse_linear":
        return _mse_grad_np(X, y, w, idx)
    return _softmax_grad_np(X, y, w, idx, n_classes)


def local_steps(kind, X, y, w0, eta, batches, n_classes=0):
    """Run one SGD step per row of ``batches`` starting at ``w0``.

    Returns (final params, sum of the step gradients). The gradient sum is
    what a client reports uplink; the server applies the learning rate.
    """
    batches = np.ascontiguousarray(batches, dtype=np.int64)
    if active_backend() == "numba":
        if kind == "mse_linear":
            return _mse_local_steps_nb(X, y, w0, eta, batches)
        return _softmax_local_steps_nb(X, y, w0, eta, batches, n_classes)
    if kind == "mse_linear":
        return _mse_local_steps_np(X, y, w0, eta, batches)
    return _softmax_local_steps_np(X, y, w0, eta, batches, n_classes)
