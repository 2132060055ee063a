"""One-dimensional quasipotential of the phase-reduced diffusion on M^delta.

The reduced diffusion is ``dphi = b_delta(phi) dt + sqrt(eps) dB``. With the
rate function ``1/2 int |phi' - b_delta|^2`` the cheapest way up an uphill
stretch is the reversed flow ``phi' = -b_delta``, which costs
``2 int max(-b_delta * dir, 0) ds`` along direction ``dir``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

SIMPSON_TOL = 1e-10
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def adaptive_simpson(f, a, b, tol=SIMPSON_TOL, max_depth=50):
    """Adaptive Simpson quadrature of a scalar function on ``[a, b]`` to absolute ``tol``."""
    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = left + right - whole
    if depth <= 0 or abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    return _simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + _simpson_rec(
        f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1
    )


def gauss_legendre(f, a, b):
    """Fixed 20-point Gauss-Legendre rule; ``f`` must accept arrays."""
    half = 0.5 * (b - a)
    return half * np.dot(_GL_W, f(0.5 * (a + b) + half * _GL_X))


def _uphill_cost(pm, phi_A, direction, length, tol, n_grid=2048):
    """``2 int_0^length max(-dir * b_delta(phi_A + dir*s), 0) ds``, split at sign changes."""
    if length <= 0.0:
        return 0.0
    g = lambda s: -direction * float(pm.b_delta(phi_A + direction * s))
    s = np.linspace(0.0, length, n_grid + 1)
    vals = -direction * pm.b_delta(phi_A + direction * s)
    cuts = [0.0]
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        cuts.append(brentq(g, s[i], s[i + 1], xtol=1e-15))
    cuts.append(length)
    total = 0.0
    piece_tol = tol / len(cuts)
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = g(0.5 * (a + b))
        if mid > 0.0:
            total += adaptive_simpson(g, a, b, piece_tol)
    return 2.0 * total


@dataclass(frozen=True)
class ReducedQP:
    W_red: float
    direction: int  # +1 increasing phase, -1 decreasing
    W_plus: float
    W_minus: float


def reduced_quasipotential(pm, phi_target, phi_A=None, tol=SIMPSON_TOL):
    """Reduced quasipotential from ``phi_A`` to ``phi_target`` on M^delta, best of both directions."""
    phi_A = pm.stable.phi_A if phi_A is None else phi_A
    L = pm.length
    up = float(np.mod(phi_target - phi_A, L))
    down = float(np.mod(phi_A - phi_target, L))
    if up == 0.0 or down == 0.0:
        return ReducedQP(0.0, 1, 0.0, 0.0)
    wp = _uphill_cost(pm, phi_A, +1, up, tol)
    wm = _uphill_cost(pm, phi_A, -1, down, tol)
    return ReducedQP(min(wp, wm), 1 if wp <= wm else -1, wp, wm)


def reduced_qp_offset(pm, phi_A, offset, tol=SIMPSON_TOL):
    """Reduced cost to the signed phase offset ``offset`` along its own direction."""
    d = 1 if offset >= 0 else -1
    return _uphill_cost(pm, phi_A, d, abs(offset), tol)


@dataclass(frozen=True)
class ReducedPotentialProfile:
    phases: np.ndarray
    U: np.ndarray
    W_cw: np.ndarray
    W_ccw: np.ndarray

    @property
    def W_min(self):
        return np.minimum(self.W_cw, self.W_ccw)


def reduced_profile(pm, n=512, phi_A=None):
    """Effective potential ``U`` and one-sided costs on ``n`` equispaced phases from ``phi_A``.

    ``U(phi_A + s) = -int_0^s b_delta`` is accumulated counter-clockwise
    (increasing phase); ``W_ccw`` and ``W_cw`` accumulate the uphill costs
    going each way around.
    """
    phi_A = pm.stable.phi_A if phi_A is None else phi_A
    L = pm.length
    h = L / n
    s = h * np.arange(n + 1)
    seg_U = np.array([-gauss_legendre(lambda x: pm.b_delta(phi_A + x), a, a + h) for a in s[:-1]])
    seg_ccw = np.array(
        [_piece(lambda x: -pm.b_delta(phi_A + x), a, a + h) for a in s[:-1]]
    )
    seg_cw = np.array(
        [_piece(lambda x: pm.b_delta(phi_A - x), a, a + h) for a in s[:-1]]
    )
    U = np.concatenate([[0.0], np.cumsum(seg_U)])[:-1]
    W_ccw = 2.0 * np.concatenate([[0.0], np.cumsum(seg_ccw)])[:-1]
    W_cw_rev = 2.0 * np.concatenate([[0.0], np.cumsum(seg_cw)])
    # W_cw at phi_A + s equals the clockwise cost over a distance L - s
    W_cw = W_cw_rev[::-1][:-1].copy()
    W_cw[0] = 0.0
    return ReducedPotentialProfile(np.mod(phi_A + s[:-1], L), U, W_cw, W_ccw)


def _piece(f, a, b):
    fa, fb = float(f(a)), float(f(b))
    g = lambda x: max(float(f(x)), 0.0)
    if fa * fb < 0.0:
        c = brentq(lambda x: float(f(x)), a, b, xtol=1e-15)
        return adaptive_simpson(g, a, c, SIMPSON_TOL / 1024) + adaptive_simpson(g, c, b, SIMPSON_TOL / 1024)
    if max(fa, fb) <= 0.0 and float(f(0.5 * (a + b))) <= 0.0:
        return 0.0
    return adaptive_simpson(g, a, b, SIMPSON_TOL / 1024)


@dataclass(frozen=True)
class PhasePath:
    """Phase trajectory on M^delta; ``phases`` are lifted (not wrapped) real numbers."""

    times: np.ndarray
    phases: np.ndarray


def reduced_rate(path, pm):
    """Midpoint rule for ``1/2 int |phi' - b_delta(phi)|^2 dt``."""
    t = np.asarray(path.times, dtype=float)
    p = np.asarray(path.phases, dtype=float)
    dt = np.diff(t)
    vel = np.diff(p) / dt
    mid = 0.5 * (p[1:] + p[:-1])
    return float(0.5 * np.sum((vel - pm.b_delta(mid)) ** 2 * dt))


def reversed_flow_path(pm, phi_start, phi_end, n=2000, rtol=1e-10):
    """Phase path solving ``phi' = -b_delta(phi)`` from ``phi_start`` towards ``phi_end``.

    Time is parametrized by phase (``dt = dphi / -b_delta``), so the path ends
    exactly at ``phi_end``; ``phi_start`` must not be a zero of ``b_delta``.
    """
    phis = np.linspace(phi_start, phi_end, n + 1)
    inv = 1.0 / -pm.b_delta(phis)
    # trapezoid on 1/(-b) is accurate away from zeros of b_delta
    times = cumulative_trapezoid(inv, phis, initial=0.0)
    return PhasePath(times - times[-1], phis)
