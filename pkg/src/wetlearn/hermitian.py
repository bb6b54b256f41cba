"""Hermitian matrix algebra.

Matrices are plain complex ``numpy`` arrays of shape ``(z, z)``.  The pair
``cvec``/``cmat`` maps Hermitian matrices to real vectors of length ``z**2``
and back such that ``tr(X @ Y) == cvec(X) @ cvec(Y)``.  Layout of ``cvec``:

* the ``z`` diagonal entries,
* ``(X[a, b] + X[b, a]) / sqrt(2)`` for ``a < b`` in row-major order,
* ``1j * (X[a, b] - X[b, a]) / sqrt(2)`` for ``a < b`` in row-major order.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceFailure, NonSquareLength, NotPositiveDefinite

SQRT2 = math.sqrt(2.0)

HERMITIAN_RTOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
CHOLESKY_MIN_PIVOT = 1e-14


class EigenPair(NamedTuple):
    eigenvalues: np.ndarray  # real, descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]


def as_hermitian(x, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Validate ``x`` as Hermitian and return an exactly Hermitian copy.

    Raises ``ValueError`` when ``x`` is not square or deviates from its
    conjugate transpose by more than ``rtol`` relative to its norm.
    """
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != x.shape[1] or x.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {x.shape}")
    scale = max(1.0, float(np.linalg.norm(x)))
    if np.linalg.norm(x - x.conj().T) > rtol * scale:
        raise ValueError("matrix is not Hermitian")
    return hermitize(x)


def hermitize(x: np.ndarray) -> np.ndarray:
    """Return ``(x + x^H) / 2``; diagonal imaginary parts become exactly 0."""
    h = 0.5 * (x + np.swapaxes(x.conj(), -1, -2))
    idx = np.arange(h.shape[-1])
    h[..., idx, idx] = h[..., idx, idx].real
    return h


@lru_cache(maxsize=None)
def _upper(z: int):
    return np.triu_indices(z, 1)


def cvec(x) -> np.ndarray:
    """Real isometric vectorization of a Hermitian matrix (or a stack of them)."""
    x = np.asarray(x)
    z = x.shape[-1]
    iu, ju = _upper(z)
    diag = np.diagonal(x, axis1=-2, axis2=-1).real
    upper = x[..., iu, ju]
    lower = x[..., ju, iu]
    re = ((upper + lower) / SQRT2).real
    im = (1j * (upper - lower) / SQRT2).real
    return np.concatenate([diag, re, im], axis=-1)


def cmat(v) -> np.ndarray:
    """Inverse of :func:`cvec`; accepts a vector or a stack of vectors."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    z = math.isqrt(n)
    if z * z != n or n == 0:
        raise NonSquareLength(f"length {n} is not a positive perfect square")
    iu, ju = _upper(z)
    k = len(iu)
    out = np.zeros(v.shape[:-1] + (z, z), dtype=complex)
    idx = np.arange(z)
    out[..., idx, idx] = v[..., :z]
    off = (v[..., z:z + k] - 1j * v[..., z + k:]) / SQRT2
    out[..., iu, ju] = off
    out[..., ju, iu] = off.conj()
    return out


@lru_cache(maxsize=None)
def cvec_basis(z: int) -> np.ndarray:
    """Hermitian matrices ``E_k = cmat(e_k)``, shape ``(z*z, z, z)``.

    The ``E_k`` are orthonormal for the trace inner product, so
    ``cvec(X)[k] == tr(E_k @ X)``.
    """
    basis = cmat(np.eye(z * z))
    basis.setflags(write=False)
    return basis


def trace_inner(x, y) -> float:
    """``Re tr(x @ y)`` without forming the product."""
    return float(np.einsum("ab,ba->", np.asarray(x), np.asarray(y)).real)


def eig(x, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenPair:
    """Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi sweeps.

    Iterates until the off-diagonal Frobenius mass drops to
    ``tol * ||x||_F``; raises :class:`ConvergenceFailure` after
    ``max_sweeps`` sweeps.  Eigenvalues are returned in descending order.
    """
    a = as_hermitian(x, rtol=1e-9)
    z = a.shape[0]
    v = np.eye(z, dtype=complex)
    target = tol * np.linalg.norm(a)

    off = ~np.eye(z, dtype=bool)

    def off_mass(m):
        return float(np.linalg.norm(m[off]))

    for _ in range(max_sweeps):
        if off_mass(a) <= target:
            break
        for p in range(z - 1):
            for q in range(p + 1, z):
                apq = a[p, q]
                mag = abs(apq)
                if mag == 0.0:
                    continue
                phase = apq / mag
                app, aqq = a[p, p].real, a[q, q].real
                theta = (aqq - app) / (2.0 * mag)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # u = diag(1, conj(phase)) @ [[c, s], [-s, c]] acting on (p, q)
                u00, u01 = c, s
                u10, u11 = -s * phase.conjugate(), c * phase.conjugate()
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = col_p * u00 + col_q * u10
                a[:, q] = col_p * u01 + col_q * u11
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = np.conj(u00) * row_p + np.conj(u10) * row_q
                a[q, :] = np.conj(u01) * row_p + np.conj(u11) * row_q
                a[p, q] = a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = vp * u00 + vq * u10
                v[:, q] = vp * u01 + vq * u11
    else:
        if off_mass(a) > target:
            raise ConvergenceFailure(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = np.diag(a).real.copy()
    order = np.argsort(-w, kind="stable")
    return EigenPair(w[order], v[:, order])


def cholesky(x, min_pivot: float = CHOLESKY_MIN_PIVOT) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefinite` on a pivot <= ``min_pivot``."""
    try:
        low = np.linalg.cholesky(x)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    pivots = np.diagonal(low).real ** 2
    if not np.all(pivots > min_pivot):
        raise NotPositiveDefinite(f"Cholesky pivot {pivots.min():.3g} below {min_pivot:g}")
    return low


def logdet(x) -> float:
    """``log det(x)`` of a positive definite Hermitian matrix via Cholesky."""
    low = cholesky(as_hermitian(x, rtol=1e-9))
    return 2.0 * float(np.sum(np.log(np.diagonal(low).real)))


def dominant_eigvec(x, rel_tol: float = 1e-9):
    """Unit eigenvector for the largest eigenvalue of ``x`` and a tie flag.

    When the top eigenvalue is (numerically) repeated the choice is made
    deterministic: each candidate is rotated so its first nonzero entry is
    real positive, and the lexicographically largest one wins.
    """
    pair = eig(x)
    lam = pair.eigenvalues
    scale = max(abs(lam[0]), 1e-300)
    tied = np.flatnonzero(lam >= lam[0] - rel_tol * scale)
    candidates = []
    for i in tied:
        vec = pair.eigenvectors[:, i]
        vec = vec / np.linalg.norm(vec)
        nz = np.flatnonzero(np.abs(vec) > 1e-12)
        if len(nz):
            first = vec[nz[0]]
            vec = vec * (abs(first) / first)
        key = tuple(np.round(np.concatenate([vec.real, vec.imag]), 12))
        candidates.append((key, vec))
    candidates.sort(key=lambda kv: kv[0], reverse=True)
    return candidates[0][1], len(tied) > 1
