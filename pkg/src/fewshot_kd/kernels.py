"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``FEWSHOT_KD_DISABLE_NUMBA`` is unset or ``0``. Both paths are
always importable as ``*_numpy`` / ``*_numba`` so they can be compared
directly (see ``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import os

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60


def _numba_requested() -> bool:
    return os.environ.get("FEWSHOT_KD_DISABLE_NUMBA", "0").strip().lower() in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by FEWSHOT_KD_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # identity decorator so the numba-flavoured sources stay importable
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"


# --- splitmix64 counter block -------------------------------------------------


def splitmix_block_numpy(key: np.uint64, start: int, n: int) -> np.ndarray:
    ctr = np.arange(start + 1, start + 1 + n, dtype=np.uint64)
    z = np.uint64(key) + ctr * GOLDEN_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _splitmix_block_jit(key, start, n):
    out = np.empty(n, dtype=np.uint64)
    gamma = np.uint64(0x9E3779B97F4A7C15)
    m1 = np.uint64(0xBF58476D1CE4E5B9)
    m2 = np.uint64(0x94D049BB133111EB)
    for i in range(n):
        z = key + np.uint64(start + 1 + i) * gamma
        z = (z ^ (z >> np.uint64(30))) * m1
        z = (z ^ (z >> np.uint64(27))) * m2
        out[i] = z ^ (z >> np.uint64(31))
    return out


def splitmix_block_numba(key: np.uint64, start: int, n: int) -> np.ndarray:
    return _splitmix_block_jit(np.uint64(key), np.int64(start), np.int64(n))


# --- squared pairwise distances ------------------------------------------------


def sq_dists_numpy(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("ikd,ikd->ik", diff, diff)


@njit(cache=True)
def _sq_dists_jit(x, c):
    n, d = x.shape
    k = c.shape[0]
    out = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - c[j, t]
                acc += diff * diff
            out[i, j] = acc
    return out


def sq_dists_numba(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return _sq_dists_jit(np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(c, dtype=np.float64))


# --- one-sided Jacobi singular values -----------------------------------------


def jacobi_sv_numpy(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Column norms of ``a`` after Hestenes rotations; ``a`` must be tall."""
    u = np.array(a, dtype=np.float64, order="F", copy=True)
    n = u.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            up = u[:, p]
            for q in range(p + 1, n):
                uq = u[:, q]
                alpha = up @ up
                beta = uq @ uq
                gamma = up @ uq
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                new_p = cs * up - sn * uq
                uq[:] = sn * up + cs * uq
                up[:] = new_p
        if not rotated:
            break
    return np.sqrt(np.einsum("ij,ij->j", u, u))


@njit(cache=True)
def _jacobi_sv_jit(a, tol, max_sweeps):
    m, n = a.shape
    u = a.copy()
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += u[i, p] * u[i, p]
                    beta += u[i, q] * u[i, q]
                    gamma += u[i, p] * u[i, q]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                for i in range(m):
                    x = u[i, p]
                    y = u[i, q]
                    u[i, p] = cs * x - sn * y
                    u[i, q] = sn * x + cs * y
        if not rotated:
            break
    out = np.empty(n)
    for j in range(n):
        acc = 0.0
        for i in range(m):
            acc += u[i, j] * u[i, j]
        out[j] = np.sqrt(acc)
    return out


def jacobi_sv_numba(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    return _jacobi_sv_jit(np.ascontiguousarray(a, dtype=np.float64), float(tol), int(max_sweeps))


if HAS_NUMBA:
    splitmix_block = splitmix_block_numba
    sq_dists = sq_dists_numba
    jacobi_sv = jacobi_sv_numba
else:
    splitmix_block = splitmix_block_numpy
    sq_dists = sq_dists_numpy
    jacobi_sv = jacobi_sv_numpy
