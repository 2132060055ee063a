"""Closed curves in R^n: arc-length parametrization, nearest-point projection and tubes.

A :class:`DiscretizedCurve` stores nodes sampled at equal arc length and a
periodic quintic spline through them, so that ``q(theta)``, ``q'(theta)`` and
``q''(theta)`` are available for any real ``theta`` (taken modulo the length).
"""
from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from math import factorial

from scipy.interpolate import make_interp_spline

from .errors import (
    DegenerateCurve,
    InvalidParameter,
    LowResolutionWarning,
    NonUniqueProjection,
    OutsideNeighborhood,
    SingularDenominator,
)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
SPLINE_DEGREE = 5


def _periodic_spline(knots, pts):
    return make_interp_spline(knots, np.vstack([pts, pts[:1]]), k=SPLINE_DEGREE, bc_type="periodic")

MIN_NODES = 16
PROJECTION_TOL = 1e-12
UNIQUE_TOL = 1e-9
UNIQUE_SEPARATION = 10
DENOM_MIN = 1e-6
BOUNDARY_BAND = 1e-9


class DiscretizedCurve:
    """Closed curve with (approximately) unit-speed periodic quintic interpolation.

    Parameters
    ----------
    nodes : array_like, shape (M, n)
        Points at equal arc-length spacing ``length / M``; the curve is closed,
        so the first node must not be repeated at the end.
    length : float
        Total arc length ``L``.
    """

    def __init__(self, nodes, length):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 2:
            raise InvalidParameter("nodes must have shape (M, n)")
        self.nodes = nodes
        self.nodes.setflags(write=False)
        self.length = float(length)
        self.M, self.n = nodes.shape
        self.h = self.length / self.M
        knots = self.h * np.arange(self.M + 1)
        spl = _periodic_spline(knots, nodes)
        k = SPLINE_DEGREE
        left = knots[:-1]
        # local Taylor coefficients, highest power first, for derivative orders 0..3
        taylor = [spl(left, m) / factorial(m) for m in range(k + 1)]
        self._coef = []
        for nu in range(4):
            self._coef.append(
                np.stack(
                    [taylor[m] * (factorial(m) / factorial(m - nu)) for m in range(k, nu - 1, -1)]
                )
            )
        self._max_curv = None

    def __repr__(self):
        return f"DiscretizedCurve(M={self.M}, n={self.n}, length={self.length:.10g})"

    # -- evaluation -----------------------------------------------------
    def _locate(self, theta):
        t = np.mod(theta, self.length)
        idx = np.minimum((t / self.h).astype(np.intp), self.M - 1)
        return idx, (t - idx * self.h)[..., None]

    def _horner(self, idx, x, nu):
        c = self._coef[nu]
        out = c[0][idx]
        for cm in c[1:]:
            out = out * x + cm[idx]
        return out

    def __call__(self, theta, nu=0):
        """Evaluate the ``nu``-th derivative (0 to 3) at ``theta``."""
        if nu not in (0, 1, 2, 3):
            raise InvalidParameter("nu must be 0, 1, 2 or 3")
        idx, x = self._locate(np.asarray(theta, dtype=float))
        return self._horner(idx, x, nu)

    def jet(self, theta):
        """Return ``(q, q', q'')`` at ``theta`` in a single pass."""
        idx, x = self._locate(np.asarray(theta, dtype=float))
        return self._horner(idx, x, 0), self._horner(idx, x, 1), self._horner(idx, x, 2)

    @property
    def thetas(self):
        return self.h * np.arange(self.M)

    @property
    def max_curvature(self):
        if self._max_curv is None:
            fine = np.linspace(0.0, self.length, 8 * self.M, endpoint=False)
            self._max_curv = float(np.max(np.linalg.norm(self(fine, 2), axis=-1)))
        return self._max_curv

    @property
    def injectivity_radius(self):
        """Curvature-based estimate ``0.5 / max |q''|`` of the projection neighbourhood."""
        kmax = self.max_curvature
        return np.inf if kmax == 0.0 else 0.5 / kmax

    def wrap(self, phase):
        return np.mod(phase, self.length)

    def reoriented(self, phase0):
        """Same curve with the phase origin moved to ``phase0``."""
        return DiscretizedCurve(self(phase0 + self.thetas), self.length)

    # -- projection -----------------------------------------------------
    def project(self, Y, check_radius=True):
        """Nearest point of the curve to ``Y``; see :class:`ProjectionResult`."""
        Y = np.asarray(Y, dtype=float)
        d = np.linalg.norm(self.nodes - Y, axis=1)
        j = int(np.argmin(d))
        local_min = (d <= np.roll(d, 1)) & (d <= np.roll(d, -1))
        rivals = np.flatnonzero(local_min & (d - d[j] <= UNIQUE_TOL))
        sep = np.abs(rivals - j)
        sep = np.minimum(sep, self.M - sep)
        if np.any(sep > UNIQUE_SEPARATION):
            raise NonUniqueProjection(f"point {Y} is (nearly) equidistant from distant parts of the curve")
        s = self._newton_projection(Y, self.thetas[j])
        q, dq, ddq = self.jet(s)
        r = Y - q
        dist = float(np.linalg.norm(r))
        denom = float(1.0 - r @ ddq)
        # the radius bound only bites on the concave side, where focal points live
        if check_radius and dist > self.injectivity_radius * (1 + 1e-9) and denom < 0.5:
            raise OutsideNeighborhood(
                f"distance {dist:.6g} exceeds injectivity radius {self.injectivity_radius:.6g}"
            )
        return ProjectionResult(phase=float(self.wrap(s)), foot=q, distance=dist, denom=denom)

    def _newton_projection(self, Y, s0):
        scale = PROJECTION_TOL * (1.0 + np.linalg.norm(Y))
        lo, hi = s0 - self.h, s0 + self.h
        f_lo = self._orth(Y, lo)[0]
        f_hi = self._orth(Y, hi)[0]
        bracketed = f_lo > 0.0 > f_hi
        s = s0
        for _ in range(100):
            f, fp = self._orth(Y, s)
            if abs(f) <= scale:
                return s
            if bracketed:
                if f > 0.0:
                    lo = s
                else:
                    hi = s
            step = -f / fp if fp != 0.0 else np.inf
            s_new = s + step
            if bracketed and not (lo < s_new < hi):
                s_new = 0.5 * (lo + hi)
            if s_new == s:
                return s
            s = s_new
        return s

    def _orth(self, Y, s):
        q, dq, ddq = self.jet(s)
        r = Y - q
        return float(r @ dq), float(r @ ddq - dq @ dq)

    def project_many(self, Y, guess=None, max_iter=30):
        """Vectorized projection of the rows of ``Y``.

        Returns ``(phase, distance)`` arrays. No uniqueness or radius checks
        are made; with ``guess`` the Newton iteration is warm-started from
        the given phases (used for slowly moving trajectories).
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if guess is None:
            s = self._nearest_node_phase(Y)
        else:
            s = np.array(guess, dtype=float)
        maxstep = 4.0 * self.h
        tol = PROJECTION_TOL * (1.0 + np.linalg.norm(Y, axis=1))
        for _ in range(max_iter):
            q, dq, ddq = self.jet(s)
            r = Y - q
            f = np.einsum("ij,ij->i", r, dq)
            if np.all(np.abs(f) <= tol):
                break
            fp = np.einsum("ij,ij->i", r, ddq) - np.einsum("ij,ij->i", dq, dq)
            step = np.where(fp < 0.0, -f / np.where(fp < 0.0, fp, -1.0), f)
            s = s + np.clip(step, -maxstep, maxstep)
        else:
            if guess is not None:
                return self.project_many(Y, None, max_iter)
        q = self(s)
        return self.wrap(s), np.linalg.norm(Y - q, axis=1)

    def _nearest_node_phase(self, Y, chunk=4096):
        out = np.empty(len(Y))
        for a in range(0, len(Y), chunk):
            blk = Y[a:a + chunk]
            d2 = (
                np.einsum("ij,ij->i", blk, blk)[:, None]
                - 2.0 * blk @ self.nodes.T
                + np.einsum("ij,ij->i", self.nodes, self.nodes)[None, :]
            )
            out[a:a + chunk] = self.thetas[np.argmin(d2, axis=1)]
        return out


@dataclass(frozen=True)
class ProjectionResult:
    phase: float
    foot: np.ndarray
    distance: float
    denom: float


def _segment_arc_lengths(spline, knots):
    a, b = knots[:-1], knots[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    s = mid[:, None] + half[:, None] * _GL_X[None, :]
    speed = np.linalg.norm(spline(s, 1), axis=-1)
    return half * (speed @ _GL_W)


def _partial_arc(spline, a, s):
    half = 0.5 * (s - a)
    x = 0.5 * (s + a)[:, None] + half[:, None] * _GL_X[None, :]
    return half * (np.linalg.norm(spline(x, 1), axis=-1) @ _GL_W)


def arc_length_parametrize(points, passes=2, max_passes=10, rtol=1e-12):
    """Build a unit-speed :class:`DiscretizedCurve` through an ordered closed point list.

    A periodic quintic spline is fitted through the points (chord-length
    parameter), its length is computed by Gauss-Legendre quadrature and the
    nodes are redistributed to equal arc length. The fixed-point pass is
    repeated at least ``passes`` times and until the segment lengths agree
    to ``rtol``. The first point keeps phase 0.
    """
    pts = np.array(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise DegenerateCurve("need at least 3 points of shape (M, n)")
    M = len(pts)
    chords = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    scale = max(np.max(np.abs(pts)), 1.0)
    if np.any(chords <= 1e-13 * scale):
        raise DegenerateCurve("two consecutive nodes coincide")
    if M < MIN_NODES:
        warnings.warn(
            f"only {M} nodes; interpolated length and derivatives are low resolution",
            LowResolutionWarning,
            stacklevel=2,
        )
    knots = np.concatenate([[0.0], np.cumsum(chords)])
    spline = _periodic_spline(knots, pts)
    for k in range(max_passes):
        arcs = _segment_arc_lengths(spline, knots)
        length = arcs.sum()
        h = length / M
        if k >= passes - 1 and np.max(np.abs(arcs - h)) <= rtol * h:
            break
        cum = np.concatenate([[0.0], np.cumsum(arcs)])
        targets = h * np.arange(M)
        seg = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, M - 1)
        a = knots[seg]
        s = a + (targets - cum[seg]) / arcs[seg] * (knots[seg + 1] - a)
        for _ in range(8):
            resid = cum[seg] + _partial_arc(spline, a, s) - targets
            s = s - resid / np.linalg.norm(spline(s, 1), axis=-1)
        pts = spline(s)
        knots = h * np.arange(M + 1)
        spline = _periodic_spline(knots, pts)
    return DiscretizedCurve(pts, length)


def projection_derivative(curve, Y, beta):
    """Directional derivative of the projection phase at ``Y`` along ``beta``.

    ``<q'(s), beta> / (1 - <Y - q(s), q''(s)>)`` with ``s`` the projection phase.
    """
    res = curve.project(Y)
    if res.denom <= DENOM_MIN:
        raise SingularDenominator(f"denominator {res.denom:.3g} at {Y}")
    return float(curve(res.phase, 1) @ np.asarray(beta, dtype=float)) / res.denom


def normal_basis(tangents):
    """Orthonormal bases of the complements of ``tangents`` (shape (k, n) -> (k, n, n-1))."""
    t = np.atleast_2d(np.asarray(tangents, dtype=float))
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    if t.shape[1] == 2:
        return np.stack([-t[:, 1], t[:, 0]], axis=1)[:, :, None]
    _, _, vh = np.linalg.svd(t[:, None, :])
    return np.transpose(vh[:, 1:, :], (0, 2, 1))


# -- tubes ---------------------------------------------------------------
class TubeClass(str, enum.Enum):
    INTERIOR = "interior"
    LATERAL = "lateral_boundary"
    END_MINUS = "end_minus"
    END_PLUS = "end_plus"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class TubeSpec:
    """Tube of lateral radius ``C0 * sqrt(delta)`` around ``manifold`` over a phase window.

    The window is ``[phi_A - delta1, phi_A + delta2]`` in the arc-length
    phase of ``manifold``.
    """

    manifold: DiscretizedCurve
    delta: float
    C0: float
    delta1: float
    delta2: float
    phi_A: float

    def __post_init__(self):
        if not (self.C0 > 0 and self.delta1 > 0 and self.delta2 > 0):
            raise InvalidParameter("C0, delta1 and delta2 must be positive")
        if self.delta <= 0:
            raise InvalidParameter("tube needs delta > 0")
        if self.delta1 + self.delta2 >= self.manifold.length:
            raise InvalidParameter("phase window must be shorter than the curve")

    @property
    def radius(self):
        return self.C0 * np.sqrt(self.delta)

    def phase_offset(self, phase):
        """Signed phase offset from ``phi_A``, wrapped around the window centre."""
        L = self.manifold.length
        mid = 0.5 * (self.delta2 - self.delta1)
        return np.mod(np.asarray(phase) - self.phi_A - mid + 0.5 * L, L) - 0.5 * L + mid

    def point(self, offset):
        return self.manifold(self.phi_A + offset)

    def classify(self, Y):
        res = self.manifold.project(Y)
        return self._classify(self.phase_offset(res.phase), res.distance)

    def _classify(self, u, dist):
        band = BOUNDARY_BAND
        if u < -self.delta1 - band or u > self.delta2 + band or dist > self.radius + band:
            return TubeClass.OUTSIDE
        if u <= -self.delta1 + band:
            return TubeClass.END_MINUS
        if u >= self.delta2 - band:
            return TubeClass.END_PLUS
        if dist >= self.radius - band:
            return TubeClass.LATERAL
        return TubeClass.INTERIOR

    def exit_class(self, u, dist):
        """Boundary class for a state known to be on or beyond the tube boundary."""
        over_lat = (dist - self.radius) / self.radius
        over_minus = (-self.delta1 - u) / self.delta1
        over_plus = (u - self.delta2) / self.delta2
        k = int(np.argmax([over_lat, over_minus, over_plus]))
        return (TubeClass.LATERAL, TubeClass.END_MINUS, TubeClass.END_PLUS)[k]

    def boundary_sample(self, n_phases=256, n_dirs=8):
        """Points at lateral distance ``radius`` from the manifold over the whole curve."""
        curve = self.manifold
        phases = np.linspace(0.0, curve.length, n_phases, endpoint=False)
        q, dq, _ = curve.jet(phases)
        N = normal_basis(dq)
        if curve.n == 2:
            dirs = np.stack([N[:, :, 0], -N[:, :, 0]], axis=1)
        else:
            ang = 2 * np.pi * np.arange(n_dirs) / n_dirs
            dirs = np.cos(ang)[None, :, None] * N[:, None, :, 0] + np.sin(ang)[None, :, None] * N[:, None, :, 1]
        return (q[:, None, :] + self.radius * dirs).reshape(-1, curve.n)


# -- CSV interface ---------------------------------------------------------
def write_curve_csv(curve_or_points, path):
    pts = curve_or_points.nodes if isinstance(curve_or_points, DiscretizedCurve) else np.asarray(curve_or_points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(pts.shape[1])])
        for row in pts:
            w.writerow([repr(float(v)) for v in row])


def read_curve_csv(path):
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header != [f"x{i}" for i in range(len(header))]:
        raise InvalidParameter(f"unexpected curve CSV header {header}")
    return arc_length_parametrize(np.array(body, dtype=float))
