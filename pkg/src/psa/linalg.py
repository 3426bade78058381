"""Dense float64 linear algebra with a cyclic-Jacobi symmetric eigensolver.

Vectors are 1-D float64 ndarrays, matrices are 2-D float64 ndarrays.  The
eigensolver targets the d x d sensitivity kernels produced elsewhere in this
package (d up to ~1000); it computes the full spectrum and is deterministic
for identical input bytes.
"""

from __future__ import annotations

from typing import NamedTuple

import numba
import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError

MAX_SWEEPS = 50
SYMMETRY_TOL = 1e-9


class EighResult(NamedTuple):
    """Full spectrum of a symmetric matrix.

    eigenvalues are sorted descending; column k of `eigenvectors` pairs with
    eigenvalue k.  Each column is sign-fixed so that its entry of largest
    absolute value is non-negative.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def dot(u, v) -> float:
    u, v = as_vector(u), as_vector(v)
    if u.shape != v.shape:
        raise DimensionError(f"dot of lengths {u.shape[0]} and {v.shape[0]}")
    return float(np.dot(u, v))


def norm2(v) -> float:
    return float(np.linalg.norm(as_vector(v)))


def outer(u, v) -> np.ndarray:
    return np.outer(as_vector(u), as_vector(v))


def matvec(a, x) -> np.ndarray:
    a, x = as_matrix(a), as_vector(x)
    if a.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec {a.shape} by {x.shape}")
    return a @ x


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul {a.shape} by {b.shape}")
    return a @ b


def frobenius(a) -> float:
    return float(np.linalg.norm(as_matrix(a)))


@numba.njit(cache=True, nogil=True)
def _jacobi_sweeps(a, vt, max_sweeps):  # pragma: no cover - compiled
    """Cyclic Jacobi on the upper triangle of `a`, rotations mirrored into
    the rows of `vt`.  Returns (sweeps used, converged flag, eigenvalues).

    Classic threshold schedule: the first three sweeps skip elements below
    0.2*sm/n^2, later sweeps rotate everything and force provably negligible
    elements to exact zero so that `sm` reaches 0.0 in floating point.
    """
    n = a.shape[0]
    d = np.empty(n)
    b = np.empty(n)
    z = np.zeros(n)
    for i in range(n):
        d[i] = a[i, i]
        b[i] = a[i, i]
    for sweep in range(max_sweeps):
        sm = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                sm += np.abs(a[p, q])
        if sm == 0.0:
            return sweep, True, d
        if sweep < 3:
            tresh = 0.2 * sm / (n * n)
        else:
            tresh = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                g = 100.0 * np.abs(a[p, q])
                if (
                    sweep > 3
                    and np.abs(d[p]) + g == np.abs(d[p])
                    and np.abs(d[q]) + g == np.abs(d[q])
                ):
                    a[p, q] = 0.0
                elif np.abs(a[p, q]) > tresh:
                    h = d[q] - d[p]
                    if np.abs(h) + g == np.abs(h):
                        t = a[p, q] / h
                    else:
                        theta = 0.5 * h / a[p, q]
                        t = 1.0 / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
                        if theta < 0.0:
                            t = -t
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    s = t * c
                    tau = s / (1.0 + c)
                    h = t * a[p, q]
                    z[p] -= h
                    z[q] += h
                    d[p] -= h
                    d[q] += h
                    a[p, q] = 0.0
                    for j in range(p):
                        g1 = a[j, p]
                        g2 = a[j, q]
                        a[j, p] = g1 - s * (g2 + g1 * tau)
                        a[j, q] = g2 + s * (g1 - g2 * tau)
                    for j in range(p + 1, q):
                        g1 = a[p, j]
                        g2 = a[j, q]
                        a[p, j] = g1 - s * (g2 + g1 * tau)
                        a[j, q] = g2 + s * (g1 - g2 * tau)
                    for j in range(q + 1, n):
                        g1 = a[p, j]
                        g2 = a[q, j]
                        a[p, j] = g1 - s * (g2 + g1 * tau)
                        a[q, j] = g2 + s * (g1 - g2 * tau)
                    for j in range(n):
                        g1 = vt[p, j]
                        g2 = vt[q, j]
                        vt[p, j] = g1 - s * (g2 + g1 * tau)
                        vt[q, j] = g2 + s * (g1 - g2 * tau)
        for i in range(n):
            b[i] += z[i]
            d[i] = b[i]
            z[i] = 0.0
    sm = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            sm += np.abs(a[p, q])
    return max_sweeps, sm == 0.0, d


def eigh_symmetric(a, max_sweeps: int = MAX_SWEEPS) -> EighResult:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    The input must be square with finite entries and symmetric to within
    1e-9 max-abs; it is symmetrized as (A + A^T)/2 before iterating.
    Raises DimensionError for non-square input, DomainError for non-finite
    or too-asymmetric input, and ConvergenceError if the off-diagonal mass
    has not been annihilated after `max_sweeps` sweeps.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"eigh needs a square matrix, got {a.shape}")
    if n == 0:
        raise DimensionError("eigh needs a non-empty matrix")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    asym = float(np.max(np.abs(a - a.T))) if n > 1 else 0.0
    if asym > SYMMETRY_TOL:
        raise DomainError(f"matrix asymmetry {asym:.3e} exceeds {SYMMETRY_TOL}")

    work = np.ascontiguousarray((a + a.T) / 2.0)
    vt = np.eye(n)
    sweeps, converged, vals = _jacobi_sweeps(work, vt, max_sweeps)
    if not converged:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")

    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vt[order].T.copy()

    # sign convention: largest-|entry| component of each eigenvector >= 0
    lead = np.argmax(np.abs(vecs), axis=0)
    flip = vecs[lead, np.arange(n)] < 0.0
    vecs[:, flip] = -vecs[:, flip]
    return EighResult(vals, vecs)
