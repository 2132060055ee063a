"""Dynamical system data: potential V, perturbation G, derivatives and the stationary curve.

Evaluators are vectorized over leading axes: a point array of shape
``(..., n)`` gives ``V -> (...)``, ``gradV, G -> (..., n)``,
``hessV, dG -> (..., n, n)`` (``dG[..., i, j] = dG_i/dx_j``) and
``d3V, d2G -> (..., n, n, n)`` (``d2G[..., k, i, j] = d^2 G_k / dx_i dx_j``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameter, NonHyperbolic
from .geometry import DiscretizedCurve, arc_length_parametrize, normal_basis

TOL_STATIONARY = 1e-8
DEFAULT_NODES = 512


class AnalyticCurve(DiscretizedCurve):
    """Curve with closed-form unit-speed parametrization (nodes kept for projection seeds)."""

    def __init__(self, q, dq, ddq, length, M=DEFAULT_NODES, dddq=None, recipe=None):
        self._q, self._dq, self._ddq, self._dddq = q, dq, ddq, dddq
        self._recipe = recipe
        super().__init__(q(length / M * np.arange(M)), length)

    def __reduce__(self):
        # closures do not pickle; rebuild from the recipe instead
        if self._recipe is None:
            raise TypeError("this AnalyticCurve cannot be pickled")
        return _rebuild_curve, (self._recipe,)

    def __call__(self, theta, nu=0):
        theta = np.asarray(theta, dtype=float)
        f = (self._q, self._dq, self._ddq, self._dddq)[nu]
        if f is None:
            return super().__call__(theta, nu)
        return f(theta)

    def jet(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self._q(theta), self._dq(theta), self._ddq(theta)

    def reoriented(self, phase0):
        return AnalyticCurve(
            lambda t: self._q(t + phase0),
            lambda t: self._dq(t + phase0),
            lambda t: self._ddq(t + phase0),
            self.length,
            self.M,
            recipe=None if self._recipe is None else ("shift", self._recipe, float(phase0)),
        )


def _rebuild_curve(recipe):
    if recipe[0] == "circle":
        return unit_circle(*recipe[1:])
    return _rebuild_curve(recipe[1]).reoriented(recipe[2])


def unit_circle(M=DEFAULT_NODES, n=2):
    """Unit circle in the first two coordinates of R^n, phase = polar angle."""

    def emb(a, b):
        out = np.zeros(np.shape(a) + (n,))
        out[..., 0], out[..., 1] = a, b
        return out

    return AnalyticCurve(
        lambda t: emb(np.cos(t), np.sin(t)),
        lambda t: emb(-np.sin(t), np.cos(t)),
        lambda t: emb(-np.cos(t), -np.sin(t)),
        2 * np.pi,
        M,
        dddq=lambda t: emb(np.sin(t), -np.cos(t)),
        recipe=("circle", M, n),
    )


def _fd_step(x):
    return 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))


@dataclass(frozen=True)
class SystemModel:
    """Gradient system ``-gradV`` with perturbation ``G`` and stationary curve ``M``."""

    n: int
    V: Callable
    gradV: Callable
    hessV: Callable
    G: Callable
    dG: Callable
    stationary_curve: DiscretizedCurve
    d3V_exact: Optional[Callable] = None
    d2G_exact: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    tol_stationary: float = TOL_STATIONARY

    def d3V(self, x):
        if self.d3V_exact is not None:
            return self.d3V_exact(x)
        return self._fd(self.hessV, x)

    def d2G(self, x):
        """Second derivatives of G, ``[..., k, i, j]``."""
        if self.d2G_exact is not None:
            return self.d2G_exact(x)
        return self._fd(self.dG, x)

    @staticmethod
    def _fd(mat, x):
        x = np.asarray(x, dtype=float)
        h = _fd_step(x)[..., None, None]
        out = np.empty(x.shape + (x.shape[-1], x.shape[-1]))
        for i in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[i] = 1.0
            hi = h[..., 0, 0][..., None]
            out[..., i] = (mat(x + hi * e) - mat(x - hi * e)) / (2 * h)
        # out[..., a, b, i] = d mat_ab / dx_i
        return out

    def drift(self, x, delta):
        """Perturbed drift ``F = -gradV + delta*G``."""
        return -self.gradV(x) + delta * self.G(x)

    def drift_jacobian(self, x, delta):
        return -self.hessV(x) + delta * self.dG(x)

    @cached_property
    def lam(self):
        return spectral_gap_estimate(self)

    def __reduce__(self):
        if self.name not in BUILTINS:
            raise TypeError("only builtin systems can be pickled")
        return _rebuild_system, (self.name, dict(self.params), self.stationary_curve.M, self.tol_stationary)

    def with_curve(self, curve):
        return replace(self, stationary_curve=curve)

    def with_changes(self, **kw):
        return replace(self, **kw)


# -- builtin systems ----------------------------------------------------------
def _ring_parts(kappa):
    def V(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return 0.25 * (r2 - 1.0) ** 2

    def gradV(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return (r2 - 1.0)[..., None] * x[..., :2]

    def hessV(x):
        xy = x[..., :2]
        r2 = np.sum(xy**2, axis=-1)
        return (r2 - 1.0)[..., None, None] * np.eye(2) + 2.0 * xy[..., :, None] * xy[..., None, :]

    def d3V(x):
        xy = x[..., :2]
        I = np.eye(2)
        return 2.0 * (
            I[:, :, None] * xy[..., None, None, :]
            + I[:, None, :] * xy[..., None, :, None]
            + I[None, :, :] * xy[..., :, None, None]
        )

    def G(x):
        a, b = x[..., 0], x[..., 1]
        return np.stack([-a * b + kappa * a, a * a + kappa * b], axis=-1)

    def dG(x):
        a, b = x[..., 0], x[..., 1]
        one = np.ones_like(a)
        return np.stack(
            [np.stack([-b + kappa, -a], -1), np.stack([2 * a, kappa * one], -1)], axis=-2
        )

    d2G_const = np.array([[[0.0, -1.0], [-1.0, 0.0]], [[2.0, 0.0], [0.0, 0.0]]])

    def d2G(x):
        return np.broadcast_to(d2G_const, np.shape(x)[:-1] + (2, 2, 2)).copy()

    return V, gradV, hessV, d3V, G, dG, d2G


def ring(kappa=0.0, M=DEFAULT_NODES):
    """``V = (x^2+y^2-1)^2/4``, ``G = (-xy + kappa x, x^2 + kappa y)``; M is the unit circle."""
    kappa = _finite(kappa, "kappa")
    V, gradV, hessV, d3V, G, dG, d2G = _ring_parts(kappa)
    return SystemModel(2, V, gradV, hessV, G, dG, unit_circle(M), d3V, d2G, "ring", {"kappa": kappa})


def ring3d(kappa=0.0, beta=0.0, M=DEFAULT_NODES):
    """Ring system with a linear stable z-direction: ``V += z^2/2``, ``G_z = -z + beta x``."""
    kappa = _finite(kappa, "kappa")
    beta = _finite(beta, "beta")
    V2, g2, H2, T2, G2, dG2, d2G2 = _ring_parts(kappa)

    def V(x):
        return V2(x) + 0.5 * x[..., 2] ** 2

    def gradV(x):
        return np.concatenate([g2(x), x[..., 2:3]], axis=-1)

    def hessV(x):
        out = np.zeros(np.shape(x)[:-1] + (3, 3))
        out[..., :2, :2] = H2(x)
        out[..., 2, 2] = 1.0
        return out

    def d3V(x):
        out = np.zeros(np.shape(x)[:-1] + (3, 3, 3))
        out[..., :2, :2, :2] = T2(x)
        return out

    def G(x):
        return np.concatenate([G2(x), (-x[..., 2] + beta * x[..., 0])[..., None]], axis=-1)

    def dG(x):
        out = np.zeros(np.shape(x)[:-1] + (3, 3))
        out[..., :2, :2] = dG2(x)
        out[..., 2, 0] = beta
        out[..., 2, 2] = -1.0
        return out

    def d2G(x):
        out = np.zeros(np.shape(x)[:-1] + (3, 3, 3))
        out[..., :2, :2, :2] = d2G2(x)
        return out

    return SystemModel(
        3, V, gradV, hessV, G, dG, unit_circle(M, 3), d3V, d2G, "ring3d", {"kappa": kappa, "beta": beta}
    )


def ellipse(a=1.0, alpha=0.0, M=DEFAULT_NODES):
    """``V = (x^2/a^2 + y^2 - 1)^2/4``, ``G = (-y + alpha x^2, x)``; M is the ellipse."""
    a = _finite(a, "a")
    alpha = _finite(alpha, "alpha")
    if a <= 0:
        raise InvalidParameter("ellipse needs a > 0")
    D2s = np.diag([2.0 / a**2, 2.0])

    def s_and_grad(x):
        s = x[..., 0] ** 2 / a**2 + x[..., 1] ** 2 - 1.0
        gs = np.stack([2 * x[..., 0] / a**2, 2 * x[..., 1]], axis=-1)
        return s, gs

    def V(x):
        return 0.25 * s_and_grad(x)[0] ** 2

    def gradV(x):
        s, gs = s_and_grad(x)
        return 0.5 * s[..., None] * gs

    def hessV(x):
        s, gs = s_and_grad(x)
        return 0.5 * (gs[..., :, None] * gs[..., None, :] + s[..., None, None] * D2s)

    def d3V(x):
        _, gs = s_and_grad(x)
        return 0.5 * (
            D2s[:, None, :] * gs[..., None, :, None]
            + gs[..., :, None, None] * D2s[None, :, :]
            + gs[..., None, None, :] * D2s[:, :, None]
        )

    def G(x):
        return np.stack([-x[..., 1] + alpha * x[..., 0] ** 2, x[..., 0]], axis=-1)

    def dG(x):
        z = np.zeros_like(x[..., 0])
        return np.stack(
            [np.stack([2 * alpha * x[..., 0], z - 1.0], -1), np.stack([z + 1.0, z], -1)], axis=-2
        )

    d2G_const = np.zeros((2, 2, 2))
    d2G_const[0, 0, 0] = 2 * alpha

    def d2G(x):
        return np.broadcast_to(d2G_const, np.shape(x)[:-1] + (2, 2, 2)).copy()

    if a == 1.0:
        curve = unit_circle(M)
    else:
        t = np.linspace(0.0, 2 * np.pi, 4 * M, endpoint=False)
        dense = arc_length_parametrize(np.stack([a * np.cos(t), np.sin(t)], axis=1))
        curve = DiscretizedCurve(dense(dense.length / M * np.arange(M)), dense.length)
    return SystemModel(2, V, gradV, hessV, G, dG, curve, d3V, d2G, "ellipse", {"a": a, "alpha": alpha})


BUILTINS = {"ring": ring, "ring3d": ring3d, "ellipse": ellipse}


def _rebuild_system(name, params, M, tol):
    return replace(BUILTINS[name](M=M, **params), tol_stationary=tol)


def make_builtin(name, **params):
    """Construct a builtin system by name (``ring``, ``ring3d`` or ``ellipse``)."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise InvalidParameter(f"unknown system {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


def _finite(v, label):
    v = float(v)
    if not np.isfinite(v):
        raise InvalidParameter(f"{label} must be finite")
    return v


# -- curve checks ---------------------------------------------------------------
@dataclass(frozen=True)
class StationarityReport:
    max_grad: float
    max_tangent_hess: float
    max_V: float
    tol: float

    @property
    def passed(self):
        return max(self.max_grad, self.max_tangent_hess, self.max_V) <= self.tol


def verify_stationary_curve(sys, tol=None):
    """Suprema of ``|gradV|``, ``|H q'|`` and ``|V|`` over the curve nodes."""
    tol = sys.tol_stationary if tol is None else tol
    curve = sys.stationary_curve
    q, dq, _ = curve.jet(curve.thetas)
    Hq = np.einsum("kij,kj->ki", sys.hessV(q), dq)
    return StationarityReport(
        max_grad=float(np.max(np.linalg.norm(sys.gradV(q), axis=1))),
        max_tangent_hess=float(np.max(np.linalg.norm(Hq, axis=1))),
        max_V=float(np.max(np.abs(sys.V(q)))),
        tol=tol,
    )


def normal_hessians(sys, thetas=None):
    """Hessians restricted to the normal spaces of M: ``(N^T H N, N)`` at each phase."""
    curve = sys.stationary_curve
    thetas = curve.thetas if thetas is None else np.atleast_1d(thetas)
    q, dq, _ = curve.jet(thetas)
    N = normal_basis(dq)
    return np.einsum("kia,kij,kjb->kab", N, sys.hessV(q), N), N


def spectral_gap_estimate(sys):
    """Minimum over nodes of the smallest normal eigenvalue of the Hessian."""
    Hn, _ = normal_hessians(sys)
    lam = float(np.min(np.linalg.eigvalsh(Hn)))
    if lam <= sys.tol_stationary:
        raise NonHyperbolic(f"normal Hessian eigenvalue {lam:.3g} is not positive")
    return lam
