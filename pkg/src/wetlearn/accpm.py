"""Analytic center cutting plane machinery over unit-trace PSD matrices.

The working set is ``{G : G >= 0, tr G = 1, tr(Sigma_i G) - gamma_i <= t_i}``.
All solves run in ``cvec`` coordinates with the trace constraint eliminated
by an orthonormal basis ``B`` of the trace-zero subspace:
``cvec(G) = cvec(I)/z + B y``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, EmptyInterior, MaxIterations, SingularMetric
from .hermitian import cmat, cvec, cvec_basis

NEWTON_MAX_ITER = 200
NEWTON_DECREMENT_TOL = 1e-10
KKT_TOL = 1e-8
ARMIJO = 0.01
SHRINK = 0.5
BOUNDARY_FRACTION = 0.99
HESSIAN_REG = 1e-12
MIN_INTERIOR_MARGIN = 1e-12
# extra slack on every plane after a nonzero relaxation, so the relaxed set keeps an interior
RELAX_PAD = 1e-6
RELAX_GAP_TOL = 1e-9
START_MARGIN = 1e-8


@dataclass(frozen=True)
class CuttingPlane:
    """Half-space ``tr(sigma G) - gamma <= slack``."""

    sigma: np.ndarray
    gamma: float
    interval: int
    index: int
    slack: float = 0.0

    def value(self, g) -> float:
        """``tr(sigma g) - gamma``; nonpositive when ``g`` satisfies the unrelaxed plane."""
        return float(np.einsum("ab,ba->", self.sigma, g).real) - self.gamma


@dataclass(frozen=True)
class WorkingSet:
    dim: int
    planes: tuple = ()
    center: np.ndarray | None = None
    robust: bool = False
    pad: float = 0.0

    def margins(self, g=None) -> np.ndarray:
        """Effective margins ``gamma + slack + pad - tr(sigma g)`` (positive inside)."""
        g = self.center if g is None else g
        if not self.planes:
            return np.zeros(0)
        a, c = plane_arrays(self)
        return c - a @ cvec(g)

    def with_center(self, center) -> "WorkingSet":
        return dataclasses.replace(self, center=center)


@dataclass(frozen=True)
class CenterReport:
    center: np.ndarray
    newtonIterations: int
    kktResidual: float
    feasible: bool
    minMargin: float = math.inf


def initial_working_set(dim: int, robust: bool = False) -> WorkingSet:
    if int(dim) <= 1:
        raise ValueError("working set dimension must exceed 1")
    return WorkingSet(dim=int(dim), planes=(), center=np.eye(dim, dtype=complex) / dim, robust=robust)


def add_planes(ws: WorkingSet, planes: Sequence[CuttingPlane]) -> WorkingSet:
    """Append planes; the center is left untouched until the next recenter."""
    for p in planes:
        if p.sigma.shape != (ws.dim, ws.dim):
            raise DimensionMismatch(f"plane of shape {p.sigma.shape} in a {ws.dim}-dim working set")
    if not planes:
        return ws
    return dataclasses.replace(ws, planes=ws.planes + tuple(planes))


def plane_arrays(ws: WorkingSet):
    """Stacked ``cvec(sigma)`` rows and effective offsets ``gamma + slack + pad``."""
    a = cvec(np.stack([p.sigma for p in ws.planes]))
    c = np.array([p.gamma + p.slack for p in ws.planes]) + ws.pad
    return a, c


@lru_cache(maxsize=None)
def trace_zero_frame(z: int):
    """``(g0, B)`` with ``g0 = cvec(I)/z`` and ``B`` an orthonormal trace-zero basis."""
    u = cvec(np.eye(z)) / math.sqrt(z)
    q, _ = np.linalg.qr(u[:, None], mode="complete")
    basis = q[:, 1:].copy()
    g0 = cvec(np.eye(z)) / z
    basis.setflags(write=False)
    g0.setflags(write=False)
    return g0, basis


def logdet_hessian(ginv: np.ndarray) -> np.ndarray:
    """Hessian of ``-log det`` in ``cvec`` coordinates: ``L[k,l] = tr(E_k Ginv E_l Ginv)``."""
    basis = cvec_basis(ginv.shape[0])
    w = np.einsum("ab,kbc->kac", ginv, basis)
    return np.einsum("kab,lba->kl", w, w).real


class LogBarrier:
    """``f(x) = lin.x - sum log(r + M x) - log det cmat(gbase + Gmap x)``."""

    def __init__(self, gbase, gmap, m=None, r=None, lin=None):
        self.gbase = np.asarray(gbase, dtype=float)
        self.gmap = np.asarray(gmap, dtype=float)
        n = self.gmap.shape[1]
        self.m = np.zeros((0, n)) if m is None else np.asarray(m, dtype=float)
        self.r = np.zeros(0) if r is None else np.asarray(r, dtype=float)
        self.lin = np.zeros(n) if lin is None else np.asarray(lin, dtype=float)

    def matrix(self, x):
        return cmat(self.gbase + self.gmap @ x)

    def affine(self, x):
        return self.r + self.m @ x

    def value(self, x) -> float:
        aff = self.affine(x)
        if aff.size and aff.min() <= 0:
            return math.inf
        try:
            low = np.linalg.cholesky(self.matrix(x))
        except np.linalg.LinAlgError:
            return math.inf
        d = np.diagonal(low).real
        if d.min() <= 0:
            return math.inf
        return float(self.lin @ x - np.sum(np.log(aff)) - 2.0 * np.sum(np.log(d)))

    def derivs(self, x):
        g = self.matrix(x)
        ginv = np.linalg.inv(g)
        ginv = 0.5 * (ginv + ginv.conj().T)
        aff = self.affine(x)
        inv = 1.0 / aff
        grad = self.lin - self.m.T @ inv - self.gmap.T @ cvec(ginv)
        hess = self.gmap.T @ logdet_hessian(ginv) @ self.gmap + (self.m.T * inv**2) @ self.m
        return grad, hess

    def step_cap(self, x, dx) -> float:
        if not self.r.size:
            return math.inf
        aff = self.affine(x)
        daff = self.m @ dx
        neg = daff < 0
        if not np.any(neg):
            return math.inf
        return float(np.min(-aff[neg] / daff[neg]))


def _solve_spd(h, rhs):
    try:
        return sla.cho_solve(sla.cho_factor(h), rhs)
    except (np.linalg.LinAlgError, ValueError):
        pass
    scale = max(float(np.abs(np.diag(h)).max()), 1.0)
    try:
        return sla.cho_solve(sla.cho_factor(h + HESSIAN_REG * scale * np.eye(h.shape[0])), rhs)
    except (np.linalg.LinAlgError, ValueError):
        # round-off made the Hessian indefinite: solve on its positive part
        w, v = np.linalg.eigh(0.5 * (h + h.T))
        w = np.maximum(w, HESSIAN_REG * max(w.max(), 1.0))
        return v @ ((v.T @ rhs) / w)


def newton_minimize(prob, x0, *, max_iter=NEWTON_MAX_ITER, dec_tol=NEWTON_DECREMENT_TOL,
                    kkt_tol=KKT_TOL, residual=None):
    """Damped Newton with Armijo backtracking and a fraction-to-boundary cap.

    ``prob`` exposes ``value``, ``derivs`` and ``step_cap``.  Stops once the
    Newton decrement ``lambda^2/2 <= dec_tol`` and the residual is at most
    ``kkt_tol``, or when further progress is below round-off.
    Returns ``(x, iterations, residual)``.
    """
    x = np.array(x0, dtype=float)
    fx = prob.value(x)
    if not math.isfinite(fx):
        raise ValueError("Newton start point is outside the barrier domain")
    best_res = math.inf
    stalls = 0
    for it in range(max_iter + 1):
        grad, hess = prob.derivs(x)
        res = float(np.linalg.norm(grad if residual is None else residual(grad)))
        dx = _solve_spd(hess, -grad)
        lam2 = float(-grad @ dx)
        if lam2 / 2 <= dec_tol:
            if res <= kkt_tol or lam2 / 2 <= 1e-26:
                return x, it, res
            # decrement already tiny: count iterations that fail to shrink the residual
            stalls = stalls + 1 if res >= 0.5 * best_res else 0
            if stalls >= 3:
                return x, it, res
        best_res = min(best_res, res)
        if it == max_iter:
            break
        cap = prob.step_cap(x, dx)
        t = min(1.0, BOUNDARY_FRACTION * cap)
        slope = float(grad @ dx)
        while True:
            xn = x + t * dx
            fn = prob.value(xn)
            if math.isfinite(fn) and (fn <= fx + ARMIJO * t * slope or lam2 < 1e-6):
                break
            t *= SHRINK
            if t < 1e-20:
                return x, it, res
        if np.array_equal(xn, x):
            return x, it, res
        x, fx = xn, fn
    raise MaxIterations(f"Newton did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# inequality working sets


def _reduced(ws: WorkingSet):
    g0, basis = trace_zero_frame(ws.dim)
    if ws.planes:
        a, c = plane_arrays(ws)
    else:
        a, c = np.zeros((0, ws.dim**2)), np.zeros(0)
    ab = a @ basis
    c0 = c - a @ g0
    return g0, basis, ab, c0


def _phase_one(ws: WorkingSet, y0) -> np.ndarray:
    """Find ``y`` with all plane margins positive, or raise :class:`EmptyInterior`.

    Barrier path on ``min s`` s.t. ``margin_i(y) + s > 0`` with ``G(y)`` kept
    positive definite.  The optimum ``s*`` is minus the best attainable
    minimum margin.
    """
    g0, basis, ab, c0 = _reduced(ws)
    m0 = c0 - ab @ y0
    k = len(m0)
    s0 = -m0.min() + max(float(np.abs(m0).max()), 1e-6)
    gmap = np.hstack([basis, np.zeros((basis.shape[0], 1))])
    m = np.hstack([-ab, np.ones((k, 1))])
    x = np.append(y0, s0)
    n_barrier = k + ws.dim
    tau = n_barrier / s0
    for _ in range(60):
        lin = np.zeros(len(x))
        lin[-1] = tau
        prob = LogBarrier(g0, gmap, m, c0, lin)
        # loose centering is enough to make progress along the path
        x, _, _ = newton_minimize(prob, x, dec_tol=1e-3, kkt_tol=math.inf)
        s = x[-1]
        gap = n_barrier / tau
        # stop once the iterate is clearly inside, not just barely across the boundary
        if s < 0 and (s < -gap or gap < MIN_INTERIOR_MARGIN):
            return x[:-1]
        if s - 2 * gap > -MIN_INTERIOR_MARGIN:
            # the duality bound needs an accurately centered point
            x, _, _ = newton_minimize(prob, x, dec_tol=1e-10, kkt_tol=math.inf)
            s = x[-1]
            if s < 0 and s < -gap:
                return x[:-1]
            if s - gap > -MIN_INTERIOR_MARGIN:
                raise EmptyInterior(f"best attainable minimum margin {-(s - gap):.3g} (bound)")
        tau *= 10.0
    raise EmptyInterior("phase I did not certify feasibility")


def analytic_center(ws: WorkingSet) -> CenterReport:
    """Minimize ``-log det G - sum log(margin_i)`` over the working set."""
    g0, basis, ab, c0 = _reduced(ws)
    start = ws.center if ws.center is not None else np.eye(ws.dim) / ws.dim
    y = basis.T @ (cvec(start) - g0)
    prob = LogBarrier(g0, basis, -ab, c0)
    # neutral cuts pass through the previous center, so a warm start can sit on a plane
    m_start = c0 - ab @ y
    thin = m_start.size and m_start.min() <= START_MARGIN * max(1.0, float(np.abs(c0).max()))
    if thin or not math.isfinite(prob.value(y)):
        if not math.isfinite(LogBarrier(g0, basis).value(y)):
            y = np.zeros_like(y)
        y = _phase_one(ws, y)
    y, iters, res = newton_minimize(prob, y)
    g = g0 + basis @ y
    margins = c0 - ab @ y
    return CenterReport(
        center=cmat(g),
        newtonIterations=iters,
        kktResidual=res,
        feasible=True,
        minMargin=float(margins.min()) if margins.size else math.inf,
    )


def recenter(ws: WorkingSet):
    report = analytic_center(ws)
    return ws.with_center(report.center), report


def has_interior(ws: WorkingSet) -> bool:
    g0, basis, ab, c0 = _reduced(ws)
    y = basis.T @ (cvec(ws.center) - g0)
    try:
        _phase_one(ws, y)
    except EmptyInterior:
        return False
    return True


# ---------------------------------------------------------------------------
# pruning


def irrelevance(ws: WorkingSet, augmented: bool = False) -> np.ndarray:
    """Normalized margin of each plane at the center under the plane-barrier metric.

    With ``augmented`` the log-det Hessian is added to the metric.
    """
    a, c = plane_arrays(ws)
    margins = c - a @ cvec(ws.center)
    # a plane through the center has a zero numerator and an unbounded metric term:
    # define its measure as 0 and leave it out of the metric
    live = margins > MIN_INTERIOR_MARGIN
    psi = (a[live].T / margins[live] ** 2) @ a[live]
    if augmented:
        psi = psi + logdet_hessian(np.linalg.inv(ws.center))
    try:
        factor = sla.cho_factor(psi)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("plane metric is not positive definite") from exc
    diag = np.abs(np.diag(factor[0]))
    if diag.min() <= 1e-6 * diag.max():
        raise SingularMetric("plane metric is numerically singular")
    quad = np.einsum("ik,ki->i", a, sla.cho_solve(factor, a.T))
    return np.where(live, np.maximum(margins, 0.0) / np.sqrt(quad), 0.0)


def prune_irrelevant(ws: WorkingSet, keep: int, augmented: bool = False) -> WorkingSet:
    """Keep the ``keep`` planes with the smallest irrelevance (ties: older first)."""
    if keep < 1:
        raise ValueError("keep must be at least 1")
    if len(ws.planes) <= keep:
        return ws
    eta = irrelevance(ws, augmented)
    order = sorted(
        range(len(ws.planes)),
        key=lambda i: (eta[i], ws.planes[i].interval, ws.planes[i].index),
    )
    kept = sorted(order[:keep])
    return dataclasses.replace(ws, planes=tuple(ws.planes[i] for i in kept))


# ---------------------------------------------------------------------------
# robust relaxation


def _slack_program(ws: WorkingSet, gap_tol: float = RELAX_GAP_TOL) -> np.ndarray:
    """Barrier path for ``min sum t`` s.t. ``plane_i(G) <= t_i``, ``t >= 0``, ``G`` feasible.

    The Newton system is reduced to the trace-zero block by a Schur
    complement over the diagonal slack block.
    """
    base = dataclasses.replace(ws, pad=0.0, planes=tuple(dataclasses.replace(p, slack=0.0) for p in ws.planes))
    g0, basis, ab, c0 = _reduced(base)
    z = ws.dim
    k = len(c0)
    y = basis.T @ (cvec(ws.center) - g0)
    if not math.isfinite(LogBarrier(g0, basis).value(y)):
        y = np.zeros_like(y)
    m0 = c0 - ab @ y
    t = np.maximum(0.0, -m0) + 0.1
    n_barrier = 2 * k + z

    def pieces(y, t):
        return t, t + c0 - ab @ y

    def value(y, t, tau):
        u, w = pieces(y, t)
        if u.min() <= 0 or w.min() <= 0:
            return math.inf
        try:
            low = np.linalg.cholesky(cmat(g0 + basis @ y))
        except np.linalg.LinAlgError:
            return math.inf
        return float(tau * t.sum() - np.log(u).sum() - np.log(w).sum()
                     - 2 * np.log(np.diagonal(low).real).sum())

    tau = n_barrier / t.sum()
    for _ in range(80):
        fx = value(y, t, tau)
        for _ in range(NEWTON_MAX_ITER):
            u, w = pieces(y, t)
            ginv = np.linalg.inv(cmat(g0 + basis @ y))
            ginv = 0.5 * (ginv + ginv.conj().T)
            gt = tau - 1 / u - 1 / w
            gy = -basis.T @ cvec(ginv) + ab.T @ (1 / w)
            d = 1 / u**2 + 1 / w**2
            cmix = -(ab.T / w**2).T  # d grad_t / dy
            hyy = basis.T @ logdet_hessian(ginv) @ basis + (ab.T / w**2) @ ab
            schur = hyy - (cmix.T / d) @ cmix
            dy = _solve_spd(schur, -gy + cmix.T @ (gt / d))
            dt = (-gt - cmix @ dy) / d
            lam2 = float(-(gt @ dt + gy @ dy))
            if lam2 / 2 <= 1e-10:
                break
            dw = dt - ab @ dy
            caps = [1.0]
            for cur, step in ((u, dt), (w, dw)):
                neg = step < 0
                if np.any(neg):
                    caps.append(BOUNDARY_FRACTION * float(np.min(-cur[neg] / step[neg])))
            s = min(caps)
            slope = float(gt @ dt + gy @ dy)
            while True:
                fn = value(y + s * dy, t + s * dt, tau)
                if math.isfinite(fn) and (fn <= fx + ARMIJO * s * slope or lam2 < 1e-6):
                    break
                s *= SHRINK
                if s < 1e-20:
                    break
            y, t, fx = y + s * dy, t + s * dt, fn
        if n_barrier / tau <= gap_tol:
            break
        tau *= 10.0
    return t


def robust_relax(ws: WorkingSet, pad: float = RELAX_PAD, keep_existing: bool = False) -> WorkingSet:
    """Set plane slacks to a minimizer of their sum that restores feasibility.

    When the unrelaxed planes already admit an interior point every slack is
    zero.  Otherwise the slack program is solved and a uniform ``pad`` is
    added on top, so the relaxed set keeps a strictly feasible point.  With
    ``keep_existing`` the current slacks are kept unless they leave the set
    empty.
    """
    if keep_existing and ws.planes and has_interior(ws):
        return ws
    clean = dataclasses.replace(
        ws, pad=0.0, planes=tuple(dataclasses.replace(p, slack=0.0) for p in ws.planes)
    )
    if not ws.planes or has_interior(clean):
        return clean
    t = _slack_program(ws)
    planes = tuple(dataclasses.replace(p, slack=float(s)) for p, s in zip(ws.planes, t))
    return dataclasses.replace(ws, planes=planes, pad=pad)


# ---------------------------------------------------------------------------
# equality-constrained center (unquantized feedback)


@dataclass(frozen=True)
class EqualityCenter:
    center: np.ndarray
    rank: int
    newtonIterations: int
    kktResidual: float
    interior: bool


def equality_center(dim: int, rows, rhs, start=None, rank_tol: float = 1e-10) -> EqualityCenter:
    """Analytic center of ``{G >= 0, tr G = 1, rows @ cvec(G) = rhs}``.

    With ``rank = dim**2`` the linear system pins ``G`` down uniquely and is
    solved directly.  Otherwise ``-log det`` is minimized over the affine
    slice; if the slice misses the open PSD cone the point maximizing the
    smallest eigenvalue is returned with ``interior=False``.
    """
    z = dim
    rows = np.asarray(rows, dtype=float).reshape(-1, z * z)
    k_mat = np.vstack([cvec(np.eye(z))[None, :], rows])
    rhs_all = np.concatenate([[1.0], np.asarray(rhs, dtype=float).reshape(-1)])
    u, sv, vt = np.linalg.svd(k_mat)
    rank = int(np.sum(sv > rank_tol * sv[0]))
    g_p = vt[:rank].T @ ((u[:, :rank].T @ rhs_all) / sv[:rank])
    if rank == z * z:
        res = float(np.linalg.norm(k_mat @ g_p - rhs_all))
        return EqualityCenter(cmat(g_p), rank, 0, res, True)
    null = vt[rank:].T
    start = np.eye(z) / z if start is None else start
    w = null.T @ (cvec(start) - g_p)
    prob = LogBarrier(g_p, null)
    if not math.isfinite(prob.value(w)):
        lam_min = float(np.linalg.eigvalsh(cmat(g_p + null @ w))[0])
        s = lam_min - 0.1
        x = np.append(w, s)
        gmap = np.hstack([null, -cvec(np.eye(z))[:, None]])
        tau = z / 0.1
        interior = False
        for _ in range(60):
            lin = np.zeros(len(x))
            lin[-1] = -tau
            x, _, _ = newton_minimize(LogBarrier(g_p, gmap, lin=lin), x, dec_tol=1e-8, kkt_tol=math.inf)
            if x[-1] > 0:
                interior = True
                break
            if x[-1] + z / tau < MIN_INTERIOR_MARGIN:
                break
            tau *= 10.0
        w = x[:-1]
        if not interior:
            return EqualityCenter(cmat(g_p + null @ w), rank, 0, math.nan, False)
    w, iters, res = newton_minimize(prob, w)
    return EqualityCenter(cmat(g_p + null @ w), rank, iters, res, True)
