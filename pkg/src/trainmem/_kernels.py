"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``TRAINMEM_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are
always importable under explicit names so tests and the benchmark can
compare them inside one process.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_FLAG = os.environ.get("TRAINMEM_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAS_NUMBA and _FLAG in ("", "0", "false", "no")


# --------------------------------------------------------------------------- #
# running peak of a signed allocation stream


def peak_running_sum_numpy(deltas: np.ndarray) -> int:
    if deltas.size == 0:
        return 0
    return int(max(0, np.cumsum(deltas, dtype=np.int64).max()))


def _peak_running_sum_loop(deltas):
    live = 0
    peak = 0
    for i in range(deltas.shape[0]):
        live += deltas[i]
        if live > peak:
            peak = live
    return peak


# --------------------------------------------------------------------------- #
# cyclic Jacobi eigendecomposition of a symmetric matrix


def _off_norm(a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return np.sqrt(s)


def _jacobi_loop(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    while sweeps < max_sweeps and _off_norm(a) >= tol:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps


def jacobi_eigh_numpy(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    mask = ~np.eye(n, dtype=bool)
    while sweeps < max_sweeps and np.sqrt(np.sum(a[mask] ** 2)) >= tol:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
    return np.diag(a).copy(), v, sweeps


if HAS_NUMBA:
    _peak_running_sum_jit = njit(cache=True)(_peak_running_sum_loop)
    _off_norm = njit(cache=True)(_off_norm)
    _jacobi_jit = njit(cache=True)(_jacobi_loop)

    def peak_running_sum_numba(deltas: np.ndarray) -> int:
        return int(_peak_running_sum_jit(np.ascontiguousarray(deltas, dtype=np.int64)))

    def jacobi_eigh_numba(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
        work = np.array(a, dtype=np.float64, copy=True)
        return _jacobi_jit(work, float(tol), int(max_sweeps))

else:  # pragma: no cover
    peak_running_sum_numba = peak_running_sum_numpy
    jacobi_eigh_numba = jacobi_eigh_numpy


if USE_NUMBA:
    peak_running_sum = peak_running_sum_numba
    jacobi_eigh = jacobi_eigh_numba
else:
    peak_running_sum = peak_running_sum_numpy
    jacobi_eigh = jacobi_eigh_numpy


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"
