"""Fixed-step propagators for ``x' = A x + b``.

Two implementations of each integrator are provided: explicit-loop kernels
compiled with numba, and a pure numpy fallback. The numba path is used when
numba imports and ``PASSNET_DISABLE_NUMBA`` is unset (or ``0``). Both paths
perform the same floating-point operations in the same order up to BLAS
summation order, so results agree to rounding.

Every kernel fills ``out[0] = x0`` and ``out[k] = x_k`` for ``k = 1..n_steps``
and returns the first step index at which ``max|x| > guard`` (or ``-1``).
"""
from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "trapezoid_operator",
    "propagate_affine",
    "propagate_rk4",
    "affine_numpy",
    "rk4_numpy",
]


def _numba_requested() -> bool:
    flag = os.environ.get("PASSNET_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no", "off")


def trapezoid_operator(A, b, h):
    """Return ``(M, c)`` with ``x_{k+1} = M x_k + c`` for the trapezoidal rule.

    ``(I - hA/2) x_{k+1} = (I + hA/2) x_k + h b`` solved once by LU.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    I = np.eye(n)
    lhs = I - 0.5 * h * A
    M = np.linalg.solve(lhs, I + 0.5 * h * A)
    c = np.linalg.solve(lhs, h * np.asarray(b, dtype=float))
    return np.ascontiguousarray(M), np.ascontiguousarray(c)


# -- numpy fallback ---------------------------------------------------------
def affine_numpy(M, c, x0, n_steps, out, guard):
    x = np.array(x0, dtype=float)
    out[0] = x
    for k in range(1, n_steps + 1):
        x = M @ x + c
        out[k] = x
        if np.abs(x).max() > guard or not np.isfinite(x).all():
            return k
    return -1


def rk4_numpy(A, b, h, x0, n_steps, out, guard):
    x = np.array(x0, dtype=float)
    out[0] = x
    h2 = 0.5 * h
    for k in range(1, n_steps + 1):
        k1 = A @ x + b
        k2 = A @ (x + h2 * k1) + b
        k3 = A @ (x + h2 * k2) + b
        k4 = A @ (x + h * k3) + b
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k] = x
        if np.abs(x).max() > guard or not np.isfinite(x).all():
            return k
    return -1


# -- explicit loops (compiled when numba is available) ------------------------
def _matvec_add(M, x, c, y):
    n = M.shape[0]
    for i in range(n):
        acc = c[i]
        for j in range(n):
            acc += M[i, j] * x[j]
        y[i] = acc


def _affine_loops(M, c, x0, n_steps, out, guard):
    n = x0.shape[0]
    x = x0.copy()
    y = np.empty(n)
    for i in range(n):
        out[0, i] = x[i]
    for k in range(1, n_steps + 1):
        _matvec_add(M, x, c, y)
        bad = False
        for i in range(n):
            x[i] = y[i]
            out[k, i] = y[i]
            if not abs(y[i]) <= guard:
                bad = True
        if bad:
            return k
    return -1


def _rk4_loops(A, b, h, x0, n_steps, out, guard):
    n = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    h2 = 0.5 * h
    h6 = h / 6.0
    for i in range(n):
        out[0, i] = x[i]
    for k in range(1, n_steps + 1):
        _matvec_add(A, x, b, k1)
        for i in range(n):
            tmp[i] = x[i] + h2 * k1[i]
        _matvec_add(A, tmp, b, k2)
        for i in range(n):
            tmp[i] = x[i] + h2 * k2[i]
        _matvec_add(A, tmp, b, k3)
        for i in range(n):
            tmp[i] = x[i] + h * k3[i]
        _matvec_add(A, tmp, b, k4)
        bad = False
        for i in range(n):
            x[i] = x[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            out[k, i] = x[i]
            if not abs(x[i]) <= guard:
                bad = True
        if bad:
            return k
    return -1


NUMBA_ENABLED = False
if _numba_requested():
    try:
        import numba

        _matvec_add = numba.njit(cache=True)(_matvec_add)
        affine_numba = numba.njit(cache=True)(_affine_loops)
        rk4_numba = numba.njit(cache=True)(_rk4_loops)
        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass


def _use_numba(flag) -> bool:
    return NUMBA_ENABLED if flag is None else bool(flag) and NUMBA_ENABLED


def propagate_affine(M, c, x0, n_steps, out, guard=np.inf, use_numba=None):
    """Iterate ``x <- M x + c``; see module docstring for the contract."""
    if _use_numba(use_numba):
        return int(affine_numba(M, c, np.ascontiguousarray(x0, dtype=float), int(n_steps), out, float(guard)))
    return affine_numpy(M, c, x0, n_steps, out, guard)


def propagate_rk4(A, b, h, x0, n_steps, out, guard=np.inf, use_numba=None):
    """Classical four-stage Runge-Kutta with fixed step ``h``."""
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if _use_numba(use_numba):
        return int(rk4_numba(A, b, float(h), np.ascontiguousarray(x0, dtype=float), int(n_steps), out, float(guard)))
    return rk4_numpy(A, b, h, x0, n_steps, out, guard)
