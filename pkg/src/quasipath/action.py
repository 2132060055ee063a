"""Discrete rate functional, its derivatives, and a Newton minimum-action solver.

The path ``Y_0, ..., Y_N`` lives on a uniform grid of ``[T, 0]``. The action
is the midpoint rule

    A = 1/2 sum_i |(Y_{i+1} - Y_i)/dt - F(m_i)|^2 dt,   m_i = (Y_i + Y_{i+1})/2,

with ``F = -gradV + delta*G``. The solver minimizes ``A`` plus a head cost:
the path starts on M^delta at a free phase ``s`` and the cost of reaching
``s`` from the stable phase along M^delta is added analytically, which
replaces the infinitely long quiescent tail near A^delta.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .errors import NoConvergence, PathEscapedTube
from .geometry import normal_basis
from .reduced import gauss_legendre, reduced_qp_offset

log = logging.getLogger(__name__)

DEFAULT_N = 2000
MAX_ITERS = 50000


def horizon(delta, lam, c=None):
    """Default time horizon ``|T| = c |log delta| / delta`` with ``c = 4/lambda``."""
    c = 4.0 / lam if c is None else c
    return c * abs(np.log(delta)) / delta


@dataclass
class SpacePath:
    """Trajectory on ``times[0] = T < ... < times[-1] = 0``."""

    times: np.ndarray
    points: np.ndarray
    delta: float
    action: float | None = None
    diagnostics: dict = field(default_factory=dict)
    start_phase: float | None = None
    head_cost: float = 0.0

    @property
    def N(self):
        return len(self.times) - 1


# -- functional and derivatives ------------------------------------------------
def _segments(points, times, sys, delta):
    dt = np.diff(times)
    mid = 0.5 * (points[1:] + points[:-1])
    r = np.diff(points, axis=0) / dt[:, None] - sys.drift(mid, delta)
    return r, mid, dt


def action(path, sys):
    """Midpoint-rule rate functional ``1/2 sum |dY/dt - F(mid)|^2 dt``."""
    r, _, dt = _segments(np.asarray(path.points, float), np.asarray(path.times, float), sys, path.delta)
    return float(0.5 * np.sum(np.sum(r * r, axis=1) * dt))


def _node_gradient(points, times, sys, delta):
    """Gradient of the action with respect to every node, endpoints included."""
    r, mid, dt = _segments(points, times, sys, delta)
    JTr = np.einsum("kji,kj->ki", sys.drift_jacobian(mid, delta), r)
    g = np.zeros_like(points)
    g[:-1] += -r - 0.5 * dt[:, None] * JTr
    g[1:] += r - 0.5 * dt[:, None] * JTr
    return g


def action_gradient(path, sys):
    """Exact gradient of :func:`action` with respect to the interior nodes, shape ``(N-1, n)``."""
    return _node_gradient(np.asarray(path.points, float), np.asarray(path.times, float), sys, path.delta)[1:-1]


@dataclass(frozen=True)
class ELResidual:
    per_node: np.ndarray
    rms: float
    max: float


def el_residual(path, sys):
    """Interior residual of ``Y'' = (H - delta DG^T)(gradV - delta G) + delta (DG - DG^T) Y'``."""
    Y = np.asarray(path.points, float)
    t = np.asarray(path.times, float)
    if len(Y) < 3:
        raise ValueError("need at least 3 nodes")
    d = path.delta
    h0, h1 = t[1:-1] - t[:-2], t[2:] - t[1:-1]
    Yc = Y[1:-1]
    acc = 2.0 * ((Y[2:] - Yc) / h1[:, None] - (Yc - Y[:-2]) / h0[:, None]) / (h0 + h1)[:, None]
    vel = (Y[2:] - Y[:-2]) / (h0 + h1)[:, None]
    H = sys.hessV(Yc)
    DG = sys.dG(Yc)
    DGT = np.swapaxes(DG, -1, -2)
    force = sys.gradV(Yc) - d * sys.G(Yc)
    rhs = np.einsum("kij,kj->ki", H - d * DGT, force) + d * np.einsum("kij,kj->ki", DG - DGT, vel)
    res = acc - rhs
    norms = np.linalg.norm(res, axis=1)
    return ELResidual(res, float(np.sqrt(np.mean(norms**2))), float(np.max(norms)))


# -- initial guess -----------------------------------------------------------------
def _crawl(pm, phi0, phi1, n=4000):
    """Phases and cumulative times of the reversed flow from ``phi0`` to ``phi1``."""
    phis = np.linspace(phi0, phi1, n + 1)
    if phi1 == phi0:
        return phis, np.zeros_like(phis)
    d = np.sign(phi1 - phi0)
    speed = -d * pm.b_delta(phis)
    top = np.max(np.abs(speed))
    if top == 0.0:
        return phis, np.linspace(0.0, 1.0, n + 1)
    speed = np.maximum(speed, 1e-2 * top)
    inv = 1.0 / speed
    dt = 0.5 * (inv[1:] + inv[:-1]) * np.abs(np.diff(phis))
    return phis, np.concatenate([[0.0], np.cumsum(dt)])


def initial_path(sys, pm, tube, target_phase, T=None, N=DEFAULT_N, start_phase=None, target_point=None):
    """Reversed-flow crawl along M^delta from near ``phi_A`` to ``target_phase``.

    ``target_phase`` is lifted relative to ``tube.phi_A`` (use the signed
    offset). The start is ``phi_A + sign * delta |log delta|`` unless
    ``start_phase`` is given. If the crawl is shorter than ``|T|`` the path
    waits at the start; if longer it is sped up uniformly. An off-manifold
    ``target_point`` is reached by a linear blend over the last ``1/lambda``.
    """
    delta = pm.delta
    lam = sys.lam
    T = horizon(delta, lam) if T is None else abs(T)
    phi_A = tube.phi_A
    u = float(tube.phase_offset(target_phase))
    phi_end = phi_A + u
    if start_phase is None:
        off = delta * abs(np.log(delta)) if delta > 0 else 0.0
        phi_start = phi_A + np.sign(u) * min(off, abs(u))
    else:
        phi_start = phi_A + float(tube.phase_offset(start_phase))
    phis, tc = _crawl(pm, phi_start, phi_end)
    times = np.linspace(-T, 0.0, N + 1)
    dur = tc[-1]
    if dur == 0.0:
        phase_t = np.full(N + 1, phi_end)
    elif dur <= T:
        phase_t = np.interp(times, tc - dur, phis)
    else:
        phase_t = np.interp(times, (tc - dur) * (T / dur), phis)
    points = pm.curve_delta(phase_t)
    if target_point is not None:
        gap = np.asarray(target_point, float) - points[-1]
        w = np.clip(1.0 + times * lam, 0.0, 1.0)
        points = points + w[:, None] * gap
    head = reduced_qp_offset(pm, phi_A, phi_start - phi_A) if delta > 0 else 0.0
    p = SpacePath(times, points, delta, start_phase=phi_start, head_cost=head)
    p.action = action(p, sys)
    return p


# -- solver -------------------------------------------------------------------------
@dataclass
class MAMResult:
    path: SpacePath
    W_mam: float
    action: float
    head_cost: float
    start_phase: float
    T: float
    iterations: int
    grad_norm: float
    retries: int = 0


class _Problem:
    """Objective, gradient and banded Hessian in the reduced variables.

    Variables: ``[s]`` (free start phase on M^delta), interior nodes, and
    ``[z]`` (coordinates of the endpoint in the normal slice of M^delta).
    """

    def __init__(self, sys, pm, times, Y0, YN, phi_A, free_start, face_phase):
        self.sys, self.pm = sys, pm
        self.delta = pm.delta
        self.times = times
        self.N = len(times) - 1
        self.n = sys.n
        self.phi_A = phi_A
        self.free_start = free_start
        self.face = face_phase is not None
        self.Y0, self.YN = np.array(Y0, float), np.array(YN, float)
        if self.face:
            q, dq, _ = pm.curve_delta.jet(face_phase)
            self.face_origin = q
            self.face_basis = normal_basis(dq)[0]
        self.off = 1 if free_start else 0
        self.nz = self.n - 1 if self.face else 0
        self.size = self.off + (self.N - 1) * self.n + self.nz

    # mapping ----------------------------------------------------------------------
    def pack(self, points, s=None):
        parts = []
        if self.free_start:
            parts.append([s])
        parts.append(points[1:-1].ravel())
        if self.face:
            parts.append(self.face_basis.T @ (points[-1] - self.face_origin))
        return np.concatenate(parts)

    def unpack(self, x):
        n, N = self.n, self.N
        pts = np.empty((N + 1, n))
        pts[1:-1] = x[self.off:self.off + (N - 1) * n].reshape(N - 1, n)
        s = x[0] if self.free_start else None
        pts[0] = self.pm.curve_delta(s) if self.free_start else self.Y0
        pts[-1] = self.face_origin + self.face_basis @ x[self.size - self.nz:] if self.face else self.YN
        return pts, s

    def head(self, s, order=0):
        pm = self.pm
        if order == 0:
            return -2.0 * gauss_legendre(pm.b_delta, self.phi_A, s)
        if order == 1:
            return -2.0 * float(pm.b_delta(s))
        return -2.0 * float(pm.b_delta_prime(s))

    def objective(self, x):
        pts, s = self.unpack(x)
        r, _, dt = _segments(pts, self.times, self.sys, self.delta)
        f = 0.5 * np.sum(np.sum(r * r, axis=1) * dt)
        if self.free_start:
            f += self.head(s)
        return f

    def full(self, x):
        """Objective, gradient and lower banded Hessian (``solveh_banded`` layout)."""
        sys, d, n, N = self.sys, self.delta, self.n, self.N
        pts, s = self.unpack(x)
        r, mid, dt = _segments(pts, self.times, sys, d)
        f = 0.5 * np.sum(np.sum(r * r, axis=1) * dt)
        J = sys.drift_jacobian(mid, d)
        D2F = -sys.d3V(mid) + d * sys.d2G(mid)
        S = -0.25 * np.einsum("kc,kcij->kij", r, D2F)
        I = np.eye(n)
        A = -I / dt[:, None, None] - 0.5 * J  # d r_i / d Y_i
        B = I / dt[:, None, None] - 0.5 * J  # d r_i / d Y_{i+1}
        w = dt[:, None, None]
        HAA = w * (np.einsum("kci,kcj->kij", A, A) + S)
        HAB = w * (np.einsum("kci,kcj->kij", A, B) + S)
        HBB = w * (np.einsum("kci,kcj->kij", B, B) + S)
        gA = dt[:, None] * np.einsum("kci,kc->ki", A, r)
        gB = dt[:, None] * np.einsum("kci,kc->ki", B, r)
        # node blocks: diag D_j, upper O_j = H(j, j+1)
        Dn = np.zeros((N + 1, n, n))
        Dn[:-1] += HAA
        Dn[1:] += HBB
        gn = np.zeros((N + 1, n))
        gn[:-1] += gA
        gn[1:] += gB
        On = HAB

        u = 2 * n - 1
        ab = np.zeros((u + 1, self.size))
        g = np.zeros(self.size)
        off = self.off
        # interior nodes
        idx = off + n * np.arange(N - 1)
        g[off:off + (N - 1) * n] = gn[1:-1].ravel()
        a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rows = idx[:, None, None] + a
        cols = idx[:, None, None] + b
        _scatter(ab, rows, cols, Dn[1:-1])
        if N > 2:
            # block (j+1, j) = O_j^T for interior j = 1..N-2
            _scatter(ab, idx[1:, None, None] + a, idx[:-1, None, None] + b, np.swapaxes(On[1:-1], 1, 2))
        if self.free_start:
            q, dq, ddq = self.pm.curve_delta.jet(s)
            f += self.head(s)
            g[0] = gn[0] @ dq + self.head(s, 1)
            _scatter(ab, np.array([0]), np.array([0]), np.array([dq @ Dn[0] @ dq + gn[0] @ ddq + self.head(s, 2)]))
            if N > 1:
                # block (Y_1, s) = O_0^T dq
                _scatter(ab, off + np.arange(n), np.zeros(n, int), On[0].T @ dq)
        if self.face:
            E = self.face_basis
            z0 = self.size - self.nz
            g[z0:] = E.T @ gn[-1]
            zz = E.T @ Dn[-1] @ E
            a2, b2 = np.meshgrid(np.arange(self.nz), np.arange(self.nz), indexing="ij")
            _scatter(ab, z0 + a2, z0 + b2, zz)
            if N > 1:
                # block (z, Y_{N-1}) = E^T O_{N-1}^T
                blk = E.T @ On[-1].T
                a3, b3 = np.meshgrid(np.arange(self.nz), np.arange(n), indexing="ij")
                _scatter(ab, z0 + a3, idx[-1] + b3, blk)
        return f, g, ab


def _scatter(ab, rows, cols, vals):
    rows, cols = np.broadcast_arrays(rows, cols)
    vals = np.broadcast_to(vals, rows.shape)
    keep = rows >= cols
    np.add.at(ab, (rows[keep] - cols[keep], cols[keep]), vals[keep])


def _band_matvec(ab, p):
    """``H p`` for a symmetric matrix in lower banded storage."""
    out = ab[0] * p
    for k in range(1, ab.shape[0]):
        out[k:] += ab[k, :-k] * p[:-k]
        out[:-k] += ab[k, :-k] * p[k:]
    return out


def _newton(prob, x, gtol_rel, max_iters, escape_check=None):
    f, g, ab = prob.full(x)
    mu = 1e-6
    it = 0
    gtol = gtol_rel * max(1.0, abs(f))
    while np.max(np.abs(g)) > gtol:
        if it >= max_iters:
            raise NoConvergence(f"gradient {np.max(np.abs(g)):.3g} > {gtol:.3g} after {it} iterations")
        scale = np.maximum(np.abs(ab[0]), 1e-12 * np.max(np.abs(ab[0])))
        while True:
            lhs = ab.copy()
            lhs[0] += mu * scale
            try:
                p = solveh_banded(lhs, -g, lower=True, check_finite=False)
            except LinAlgError:
                mu *= 10.0
                if mu > 1e16:
                    raise NoConvergence("damped Newton system stays indefinite")
                continue
            x_new = x + p
            f_new = prob.objective(x_new)
            pred = -(g @ p + 0.5 * p @ _band_matvec(ab, p))
            if f_new < f or (f_new <= f + 1e-14 * max(1.0, abs(f)) and pred <= 1e-14 * max(1.0, abs(f))):
                rho = (f - f_new) / pred if pred > 0 else 1.0
                mu = mu / 3.0 if rho > 0.25 else mu * 2.0
                mu = max(mu, 1e-15)
                break
            mu *= 4.0
            if mu > 1e16:
                raise NoConvergence(f"line search failed at gradient {np.max(np.abs(g)):.3g}")
        x = x_new
        if escape_check is not None:
            escape_check(x)
        f, g, ab = prob.full(x)
        gtol = gtol_rel * max(1.0, abs(f))
        it += 1
    return x, f, g, it


def minimize_action(
    sys,
    pm,
    tube,
    target,
    N=DEFAULT_N,
    T=None,
    T_factor=None,
    gtol=1e-8,
    max_iters=MAX_ITERS,
    end="point",
    free_start=True,
    start_phase=None,
    max_retries=3,
):
    """Minimize the discrete action from near A^delta to ``target``.

    Parameters
    ----------
    target : array_like
        End point. With ``end="face"`` only its phase matters: the endpoint
        is free in the normal slice of M^delta through ``q_delta(p_delta(target))``.
    free_start : bool
        Start on M^delta at an optimized phase and add the reduced head cost
        (default). Otherwise the start is pinned at ``start_phase`` (or at the
        offset point ``phi_A + sign * delta |log delta|``) with no head cost.
    T_factor : float, optional
        ``c`` in ``|T| = c |log delta| / delta``; default ``4 / lambda``.

    Returns
    -------
    MAMResult
        ``W_mam = action + W_red(phi_A, start phase)``.
    """
    target = np.asarray(target, float)
    lam = sys.lam
    T0 = horizon(pm.delta, lam, T_factor) if T is None else abs(T)
    tphase = pm.curve_delta.project(target).phase
    u = float(tube.phase_offset(tphase))
    phi_A = tube.phi_A
    off = pm.delta * abs(np.log(pm.delta))
    ref_head = reduced_qp_offset(pm, phi_A, np.sign(u) * min(off, abs(u)))
    retries = 0
    Tcur = T0
    while True:
        res = _solve_once(sys, pm, tube, target, tphase, N, Tcur, gtol, max_iters, end, free_start, start_phase)
        quiet = not free_start or res.head_cost <= 2.0 * ref_head + 1e-12
        if quiet or retries >= max_retries or T is not None:
            res.retries = retries
            return res
        log.info("head cost %.3g exceeds twice the offset head %.3g; doubling T", res.head_cost, ref_head)
        retries += 1
        Tcur *= 2.0


def _solve_once(sys, pm, tube, target, tphase, N, T, gtol, max_iters, end, free_start, start_phase):
    on_manifold = pm.curve_delta.project(target).distance <= 1e-12
    init = initial_path(
        sys, pm, tube, tphase, T, N, start_phase=start_phase,
        target_point=None if (end == "face" or on_manifold) else target,
    )
    face_phase = tphase if end == "face" else None
    prob = _Problem(sys, pm, init.times, init.points[0], init.points[-1], tube.phi_A, free_start, face_phase)
    x0 = prob.pack(init.points, init.start_phase if free_start else None)
    limit = 2.0 * tube.radius
    curve = pm.curve_delta
    state = {"phase": curve.project_many(init.points)[0]}

    def escape_check(x):
        pts, _ = prob.unpack(x)
        ph, dist = curve.project_many(pts, guess=state["phase"])
        state["phase"] = ph
        if np.max(dist) > limit:
            raise PathEscapedTube(f"node at distance {np.max(dist):.3g} > {limit:.3g} from M^delta")

    x, f, g, it = _newton(prob, x0, gtol, max_iters, escape_check)
    pts, s = prob.unpack(x)
    if free_start:
        s_off = float(s - tube.phi_A)
        head = reduced_qp_offset(pm, tube.phi_A, s_off)
        start = float(np.mod(s, pm.length))
    else:
        head, start = 0.0, float(np.mod(init.start_phase, pm.length))
    path = SpacePath(init.times, pts, pm.delta, start_phase=start, head_cost=head)
    path.action = action(path, sys)
    path.diagnostics = path_diagnostics(path, pm, tube)
    return MAMResult(path, path.action + head, path.action, head, start, T, it, float(np.max(np.abs(g))))


# -- diagnostics ---------------------------------------------------------------------
def path_diagnostics(path, pm, tube, c_tau=1.0):
    """Proof-layer quantities of a path.

    ``tau1`` is the time of the last node within ``c_tau * delta^2`` of
    M^delta (0 when the path ends there); ``tau0`` is the last time before
    ``tau1`` at which the phase offset from ``phi_A`` is at most
    ``delta |log delta|`` (``T`` when the path starts beyond it).
    """
    Y = np.asarray(path.points, float)
    t = np.asarray(path.times, float)
    d = pm.delta
    phase, dist = pm.curve_delta.project_many(Y)
    speed = np.linalg.norm(np.diff(Y, axis=0), axis=1) / np.diff(t)
    close = np.flatnonzero(dist <= c_tau * d * d)
    i1 = close[-1] if len(close) else 0
    tau1 = float(t[i1])
    u = tube.phase_offset(phase)
    thr = d * abs(np.log(d)) if d > 0 else 0.0
    near = np.flatnonzero(np.abs(u[: i1 + 1]) <= thr)
    tau0 = float(t[near[-1]]) if len(near) else float(t[0])
    end_res = tube.classify(Y[-1])
    return {
        "sup_speed": float(np.max(speed)),
        "sup_dist_manifold": float(np.max(dist)),
        "tau1_estimate": tau1,
        "tau0_phase": tau0,
        "escape_layer": float(-tau1),
        "end_class": end_res.value,
        "max_tube_excess": float(np.max(dist) / tube.radius),
    }
