import numpy as np
import pytest

from quasipath.action import (
    SpacePath, action, action_gradient, el_residual, horizon, initial_path, minimize_action,
)
from quasipath.reduced import reduced_qp_offset

from conftest import make_tube


def _random_path(sys, delta, N=40, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(-3, 0, N + 1)
    th = np.linspace(0.3, 1.7, N + 1)
    pts = np.c_[np.cos(th), np.sin(th)] * (1 + 0.1 * rng.normal(size=(N + 1, 1)))
    return SpacePath(t, pts, delta)


def test_horizon():
    assert abs(horizon(0.1, 2.0) - 2 * np.log(10) / 0.1) < 1e-12


def test_action_zero_on_trajectory(ring1):
    # an exact flow line of the unperturbed system has zero cost up to quadrature error
    t = np.linspace(-2, 0, 4001)
    r0 = 1.2
    r = 1 / np.sqrt(1 + (1 / r0**2 - 1) * np.exp(-2 * (t + 2)))
    p = SpacePath(t, np.c_[r, np.zeros_like(r)], 0.0)
    assert action(p, ring1) < 1e-7


def test_gradient_vs_fd(ring1):
    p = _random_path(ring1, 0.2)
    g = action_gradient(p, ring1)
    h = 1e-6
    for k in (1, 7, 20, 39):
        for i in range(2):
            P1, P2 = p.points.copy(), p.points.copy()
            P1[k, i] += h
            P2[k, i] -= h
            fd = (action(SpacePath(p.times, P1, 0.2), ring1) - action(SpacePath(p.times, P2, 0.2), ring1)) / (2 * h)
            assert abs(fd - g[k - 1, i]) <= 1e-6 * max(1.0, abs(fd))


def test_el_residual_of_exact_solution(ring1):
    t = np.linspace(-2, 0, 2001)
    r0 = 1.2
    r = 1 / np.sqrt(1 + (1 / r0**2 - 1) * np.exp(-2 * (t + 2)))
    # gradient flow lines solve the Euler-Lagrange equation at delta = 0
    p = SpacePath(t, np.c_[r, np.zeros_like(r)], 0.0)
    assert el_residual(p, ring1).rms < 1e-4


def test_initial_path_endpoints(ring1, pm_ring1):
    tube = make_tube(pm_ring1)
    target = tube.phi_A + 1.0
    p = initial_path(ring1, pm_ring1, tube, target, N=200)
    assert p.points.shape == (201, 2)
    assert np.allclose(p.points[-1], pm_ring1.curve_delta(target), atol=1e-10)


@pytest.mark.parametrize("u", [np.pi / 2, -0.8])
def test_minimizer_bound_and_el(ring1, pm_ring1, u):
    tube = make_tube(pm_ring1)
    res = minimize_action(ring1, pm_ring1, tube, tube.point(u), N=1000, end="point")
    W_red = reduced_qp_offset(pm_ring1, tube.phi_A, u)
    assert res.W_mam <= W_red + 1e-8
    assert res.W_mam > 0.5 * W_red
    assert el_residual(res.path, ring1).rms <= 1e-3 * pm_ring1.delta
    assert res.path.diagnostics["max_tube_excess"] <= 1.0


def test_face_below_point(ring1, pm_ring1):
    tube = make_tube(pm_ring1)
    a = minimize_action(ring1, pm_ring1, tube, tube.point(np.pi / 2), N=1000, end="point")
    b = minimize_action(ring1, pm_ring1, tube, tube.point(np.pi / 2), N=1000, end="face")
    assert b.W_mam <= a.W_mam + 1e-9


def test_time_reversal_identity(ring1):
    # at delta = 0: I(path) = I(reversed path) + 2 (V(end) - V(start))
    t = np.linspace(-3, 0, 3001)
    th = 0.4 * np.sin(t)
    r = 1.0 + 0.3 * np.cos(2 * t)
    P = np.c_[r * np.cos(th), r * np.sin(th)]
    fwd = action(SpacePath(t, P, 0.0), ring1)
    rev = action(SpacePath(t, P[::-1], 0.0), ring1)
    dV = ring1.V(P[-1]) - ring1.V(P[0])
    assert abs(fwd - rev - 2 * dV) < 1e-5


def test_action_refinement(ring1):
    def path(N):
        t = np.linspace(-2, 0, N + 1)
        return SpacePath(t, np.c_[np.cos(t), 1.1 * np.sin(t)], 0.1)

    a = [action(path(N), ring1) for N in (100, 200, 400)]
    # second-order convergence of the midpoint rule
    assert 3.5 < (a[0] - a[1]) / (a[1] - a[2]) < 4.5


def test_el_residual_refines(ring1, pm_ring1):
    tube = make_tube(pm_ring1)
    el = []
    for N in (1000, 2000):
        res = minimize_action(ring1, pm_ring1, tube, tube.point(0.75 * np.pi / 2), N=N, end="point", T=60.0)
        el.append(el_residual(res.path, ring1).rms)
    assert el[0] / el[1] >= 2.0
