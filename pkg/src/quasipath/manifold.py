"""Persistent invariant curve M^delta, its offset from M, reduced drifts and the stable phase."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidParameter, ManifoldEscaped, NoConvergence, NonHyperbolic, NoStableFixedPoint
from .geometry import DiscretizedCurve, arc_length_parametrize, normal_basis

log = logging.getLogger(__name__)

TOL_MANIFOLD = 1e-6
DELTA_MAX = 0.5
MIN_NODES = 128


def first_order_correction(sys, theta):
    """Solve ``H h = G - <G, q'> q'`` with ``<h, q'> = 0`` on the normal space of M.

    ``theta`` may be a scalar or an array of phases on M.
    """
    curve = sys.stationary_curve
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    q, dq, _ = curve.jet(th)
    N = normal_basis(dq)
    Hn = np.einsum("kia,kij,kjb->kab", N, sys.hessV(q), N)
    if np.min(np.abs(np.linalg.eigvalsh(Hn))) <= 1e-10:
        raise NonHyperbolic("normal-restricted Hessian is singular")
    g = sys.G(q)
    rhs = np.einsum("kia,ki->ka", N, g - np.einsum("ki,ki->k", g, dq)[:, None] * dq)
    h = np.einsum("kia,ka->ki", N, np.linalg.solve(Hn, rhs[..., None])[..., 0])
    return h[0] if np.ndim(theta) == 0 else h


@dataclass(frozen=True)
class PerturbedManifold:
    """Invariant curve of the perturbed flow and its relation to the stationary curve.

    Attributes
    ----------
    thetas : ndarray (M,)
        Phases on the base curve where the tables live.
    offset : ndarray (M, n)
        ``phi_delta(theta)``, orthogonal to ``q'(theta)``.
    phi_of_theta : ndarray (M,)
        Arc-length phase on M^delta of ``q(theta) + phi_delta(theta)``.
    curve_delta : DiscretizedCurve
        M^delta by arc length; phase 0 lies on the normal line of M at ``q(0)``.
    tilde_curve : DiscretizedCurve
        ``q + phi_delta`` interpolated in the base phase ``theta`` (not unit speed).
    """

    sys: object
    delta: float
    thetas: np.ndarray
    offset: np.ndarray
    phi_of_theta: np.ndarray
    curve_delta: DiscretizedCurve
    tilde_curve: DiscretizedCurve
    h1: np.ndarray
    invariance_residual: float
    steps: int

    @property
    def base(self):
        return self.sys.stationary_curve

    @property
    def length(self):
        return self.curve_delta.length

    # drifts are evaluated directly from the curves; the tables below sample them
    def b(self, theta):
        q, dq, _ = self.base.jet(theta)
        return self.delta * np.sum(self.sys.G(q) * dq, axis=-1)

    def b_prime(self, theta):
        q, dq, ddq = self.base.jet(theta)
        G = self.sys.G(q)
        dGq = np.einsum("...ij,...j->...i", self.sys.dG(q), dq)
        return self.delta * (np.sum(dGq * dq, axis=-1) + np.sum(G * ddq, axis=-1))

    def b_delta(self, phi):
        q, dq, _ = self.curve_delta.jet(phi)
        return np.sum(self.sys.drift(q, self.delta) * dq, axis=-1)

    def b_delta_prime(self, phi):
        q, dq, ddq = self.curve_delta.jet(phi)
        J = self.sys.drift_jacobian(q, self.delta)
        return np.einsum("...i,...ij,...j->...", dq, J, dq) + np.sum(self.sys.drift(q, self.delta) * ddq, axis=-1)

    def b_tilde(self, theta):
        q, dq, _ = self.tilde_curve.jet(theta)
        t = dq / np.linalg.norm(dq, axis=-1, keepdims=True)
        return np.sum(self.sys.drift(q, self.delta) * t, axis=-1)

    def b_table(self):
        return self.thetas, self.b(self.thetas)

    def b_tilde_table(self):
        return self.thetas, self.b_tilde(self.thetas)

    def b_delta_table(self):
        phis = self.curve_delta.thetas
        return phis, self.b_delta(phis)

    def theta_to_phi(self, theta):
        """M^delta phase of ``q(theta) + phi_delta(theta)``."""
        return _phase_on_normal_line(self.curve_delta, self.base, theta, self._phi_guess(theta))

    def _phi_guess(self, theta):
        theta = np.asarray(theta, dtype=float)
        L = self.base.length
        tt = np.concatenate([self.thetas, [L]])
        pp = np.concatenate([self.phi_of_theta, [self.length]])
        pp = np.unwrap(pp, period=self.length)
        return np.interp(np.mod(theta, L), tt, pp)

    @property
    def stable(self):
        return stable_phase(self)


def _phase_on_normal_line(curve_delta, base, theta, phi0, iters=30):
    """Solve ``<q_delta(phi) - q(theta), q'(theta)> = 0`` for ``phi`` near ``phi0``."""
    theta = np.asarray(theta, dtype=float)
    q, dq, _ = base.jet(theta)
    phi = np.array(phi0, dtype=float)
    for _ in range(iters):
        qd, dqd, _ = curve_delta.jet(phi)
        f = np.sum((qd - q) * dq, axis=-1)
        step = f / np.sum(dqd * dq, axis=-1)
        phi = phi - step
        if np.max(np.abs(step)) <= 1e-14 * max(1.0, curve_delta.length):
            break
    return np.mod(phi, curve_delta.length)


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def relax_to_invariant_curve(
    sys,
    delta,
    nodes=512,
    tol=TOL_MANIFOLD,
    max_steps=20000,
    dt=None,
    redistribute_every=10,
    delta_max=DELTA_MAX,
):
    """Relax ``q + delta*h1`` under the perturbed flow until the curve is invariant.

    Nodes are advanced with RK4 and redistributed to equal arc length every
    ``redistribute_every`` steps. Convergence is declared when the normal
    component of the drift at every node is at most ``tol * delta``.
    """
    delta = float(delta)
    if not (0.0 <= delta <= delta_max):
        raise InvalidParameter(f"delta={delta} outside [0, {delta_max}]")
    if nodes < MIN_NODES:
        raise InvalidParameter(f"need at least {MIN_NODES} nodes")
    base = sys.stationary_curve
    lam = sys.lam
    dt = 0.1 / lam if dt is None else dt
    thetas = base.length / nodes * np.arange(nodes)
    h1 = first_order_correction(sys, thetas)
    if delta == 0.0:
        zero = np.zeros_like(h1)
        curve_delta = base if base.M == nodes else DiscretizedCurve(base(thetas), base.length)
        return PerturbedManifold(sys, 0.0, thetas, zero, thetas.copy(), curve_delta, curve_delta, h1, 0.0, 0)

    X = base(thetas) + delta * h1
    radius = base.injectivity_radius
    flow = lambda x: sys.drift(x, delta)
    steps = 0
    resid = np.inf
    polish = False
    best = np.inf
    while True:
        curve = arc_length_parametrize(X, passes=1)
        X = np.array(curve.nodes)
        F = flow(X)
        t = curve(curve.thetas, 1)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        normal = F - np.sum(F * t, axis=1)[:, None] * t
        resid = float(np.max(np.linalg.norm(normal, axis=1)))
        if resid <= tol * delta:
            break
        if steps >= max_steps:
            raise NoConvergence(f"invariant curve residual {resid:.3g} after {steps} steps")
        if not polish and resid > 0.98 * best:
            # the RK4 map has an O(dt^4) invariant-curve bias; remove it by
            # relaxing along the normal drift only, whose fixed points are exact
            polish = True
            log.debug("switching to normal relaxation at residual %.3g", resid)
        best = min(best, resid)
        if polish:
            X = X + dt * normal
            steps += 1
        else:
            for _ in range(redistribute_every):
                X = _rk4(flow, X, dt)
            steps += redistribute_every
        _, dist = base.project_many(X)
        if np.max(dist) > radius:
            raise ManifoldEscaped(f"node at distance {np.max(dist):.3g} from M after {steps} steps")
    log.debug("M^delta for delta=%g converged in %d steps, residual %.3g", delta, steps, resid)

    # put phase 0 on the normal line of M through q(0)
    phi0 = _phase_on_normal_line(curve, base, 0.0, curve.project(base(0.0), check_radius=False).phase)
    curve_delta = curve.reoriented(float(phi0))
    phi_guess = curve_delta.length / base.length * thetas
    phi_of_theta = _phase_on_normal_line(curve_delta, base, thetas, phi_guess)
    tilde_nodes = curve_delta(phi_of_theta)
    offset = tilde_nodes - base(thetas)
    tilde_curve = DiscretizedCurve(tilde_nodes, base.length)
    return PerturbedManifold(
        sys, delta, thetas, offset, phi_of_theta, curve_delta, tilde_curve, h1, resid, steps
    )


# -- stable phase ------------------------------------------------------------------
@dataclass(frozen=True)
class StablePhase:
    theta0: float
    phi_A: float
    attraction: tuple  # (negative offset, positive offset) to the neighbouring zeros of b_delta


def _stable_zeros(f, L, n_grid=4096):
    """Zeros of a periodic function where it crosses from + to -."""
    x = L / n_grid * np.arange(n_grid + 1)
    y = f(x)
    out = []
    for i in range(n_grid):
        if y[i] > 0.0 and y[i + 1] <= 0.0:
            out.append(x[i + 1] if y[i + 1] == 0.0 else brentq(f, x[i], x[i + 1], xtol=1e-14, rtol=1e-15))
    return np.mod(np.array(out), L), x, y


def stable_phase(pm):
    """Stable zero of ``b`` on M and the matching stable zero of ``b_delta`` on M^delta."""
    if pm.delta == 0.0:
        raise NoStableFixedPoint("delta = 0: every point of M is stationary")
    zeros, _, _ = _stable_zeros(pm.b, pm.base.length)
    if len(zeros) == 0:
        raise NoStableFixedPoint("b has no zero with negative slope")
    theta0 = float(zeros[np.argmin(pm.b_prime(zeros))])
    zd, grid, vals = _stable_zeros(pm.b_delta, pm.length)
    if len(zd) == 0:
        raise NoStableFixedPoint("b_delta has no zero with negative slope")
    image = float(pm.theta_to_phi(theta0))
    L = pm.length
    gap = np.abs(np.mod(zd - image + 0.5 * L, L) - 0.5 * L)
    phi_A = float(zd[np.argmin(gap)])
    return StablePhase(theta0, phi_A, _attraction_interval(pm.b_delta, phi_A, L))


def _attraction_interval(f, phi_A, L, n_grid=4096):
    u = L / n_grid * np.arange(1, n_grid)
    plus = f(phi_A + u)
    minus = f(phi_A - u)
    ip = np.flatnonzero(plus >= 0.0)
    im = np.flatnonzero(minus <= 0.0)
    hi = u[ip[0]] if len(ip) else L
    lo = u[im[0]] if len(im) else L
    if len(ip):
        a = u[ip[0] - 1] if ip[0] > 0 else 0.0
        hi = brentq(lambda s: f(phi_A + s), a, hi, xtol=1e-13) if plus[ip[0]] != 0.0 else hi
    if len(im):
        a = u[im[0] - 1] if im[0] > 0 else 0.0
        lo = brentq(lambda s: f(phi_A - s), a, lo, xtol=1e-13) if minus[im[0]] != 0.0 else lo
    return (-float(lo), float(hi))


def phase_map_gap(pm, Y):
    """``|p~_delta(Y) - p_delta(Y)|``: M^delta phase of the lifted base projection vs direct projection."""
    theta = pm.base.project(Y).phase
    p_tilde = float(pm.theta_to_phi(theta))
    p_direct = pm.curve_delta.project(Y).phase
    L = pm.length
    return abs(float(np.mod(p_tilde - p_direct + 0.5 * L, L) - 0.5 * L))


# -- hyperbolicity diagnostics -----------------------------------------------------
@dataclass(frozen=True)
class LyapunovNumbers:
    nu_rate: float
    tangential_rate: float
    sigma_estimate: float
    horizon: float


def lyapunov_type_numbers(sys, pm, horizon=None, n_seeds=16, dt=None):
    """Normal and tangential growth rates of the linearized flow along M^delta.

    For each seed phase the state ``Q`` and the fundamental matrix ``Phi``
    are integrated together. ``nu_rate`` is the largest
    ``log|P^N(Q_T) Phi P^N(Q_0)| / T`` and ``tangential_rate`` the largest
    ``|log|Phi q'_0|| / T`` over the seeds; ``sigma_estimate`` is their ratio.
    """
    lam = sys.lam
    T = 10.0 / lam if horizon is None else float(horizon)
    if T < 5.0 / lam:
        raise InvalidParameter("horizon must be at least 5/lambda")
    dt = 0.01 / lam if dt is None else dt
    nsteps = int(np.ceil(T / dt))
    dt = T / nsteps
    curve = pm.curve_delta
    phases = curve.length / n_seeds * np.arange(n_seeds)
    Q0 = curve(phases)
    t0 = curve(phases, 1)
    n = sys.n
    delta = pm.delta

    def rhs(state):
        Q, Phi = state
        return sys.drift(Q, delta), np.einsum("kij,kjl->kil", sys.drift_jacobian(Q, delta), Phi)

    Q, Phi = Q0.copy(), np.broadcast_to(np.eye(n), (n_seeds, n, n)).copy()
    for _ in range(nsteps):
        k1 = rhs((Q, Phi))
        k2 = rhs((Q + 0.5 * dt * k1[0], Phi + 0.5 * dt * k1[1]))
        k3 = rhs((Q + 0.5 * dt * k2[0], Phi + 0.5 * dt * k2[1]))
        k4 = rhs((Q + dt * k3[0], Phi + dt * k3[1]))
        Q = Q + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Phi = Phi + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    tT = curve(curve.project_many(Q)[0], 1)
    PN0 = np.eye(n) - t0[:, :, None] * t0[:, None, :]
    PNT = np.eye(n) - tT[:, :, None] * tT[:, None, :]
    normal = np.linalg.norm(PNT @ Phi @ PN0, ord=2, axis=(1, 2))
    tang = np.linalg.norm(np.einsum("kij,kj->ki", Phi, t0), axis=1)
    nu = float(np.max(np.log(normal) / T))
    tr = float(np.max(np.abs(np.log(tang)) / T))
    return LyapunovNumbers(nu, tr, tr / abs(nu), T)
