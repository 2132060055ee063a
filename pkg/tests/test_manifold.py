import numpy as np
import pytest

from quasipath import model
from quasipath.errors import InvalidParameter, NoStableFixedPoint
from quasipath.manifold import (
    first_order_correction, lyapunov_type_numbers, phase_map_gap, relax_to_invariant_curve, stable_phase,
)


def test_first_order_correction_closed_forms():
    # ring(1): G = (x, y) + ... gives a normal push of 1/2 at theta = 0
    h = first_order_correction(model.ring(1.0), np.array([0.0]))
    assert np.allclose(h, [[0.5, 0.0]], atol=1e-12)
    h = first_order_correction(model.ring3d(0.0, 1.0), np.array([0.0]))
    assert np.allclose(h, [[0.0, 0.0, 1.0]], atol=1e-12)


def test_first_order_orthogonal_to_tangent():
    sys = model.ellipse(2.0, 0.3)
    th = np.linspace(0, sys.stationary_curve.length, 50)
    h = first_order_correction(sys, th)
    t = sys.stationary_curve(th, 1)
    assert np.max(np.abs(np.sum(h * t, axis=1))) < 1e-10


def test_ring1_radius(pm_ring1):
    # M^delta is the circle of radius sqrt(1 + delta)
    r = np.linalg.norm(pm_ring1.curve_delta.nodes, axis=1)
    assert np.max(np.abs(r - np.sqrt(1.1))) < 1e-7
    assert abs(pm_ring1.length - 2 * np.pi * np.sqrt(1.1)) < 1e-6


def test_ring0_invariant(pm_ring0):
    assert np.max(np.linalg.norm(pm_ring0.offset, axis=1)) <= 1e-8


def test_ring0_drift_closed_form(pm_ring0):
    th = np.linspace(0, 2 * np.pi, 33)
    assert np.allclose(pm_ring0.b(th), 0.1 * np.cos(th), atol=1e-12)
    assert np.allclose(pm_ring0.b_tilde(th), 0.1 * np.cos(th), atol=1e-8)
    assert np.allclose(pm_ring0.b_delta(th), 0.1 * np.cos(th), atol=1e-8)


def test_stable_phase_ring0(pm_ring0):
    sp = pm_ring0.stable
    assert abs(sp.theta0 - np.pi / 2) < 1e-10
    assert abs(sp.phi_A - np.pi / 2) < 1e-8
    assert np.allclose(sp.attraction, (-np.pi, np.pi), atol=1e-6)


def test_phase_map_gap_ring(pm_ring1):
    # on a ring both phase maps are the polar angle
    assert phase_map_gap(pm_ring1, np.array([1.3, 0.4])) < 1e-8


def test_delta_zero_and_invalid(ring0):
    pm = relax_to_invariant_curve(ring0, 0.0)
    assert pm.invariance_residual == 0.0
    with pytest.raises(NoStableFixedPoint):
        stable_phase(pm)
    with pytest.raises(InvalidParameter):
        relax_to_invariant_curve(ring0, 0.9)
    with pytest.raises(InvalidParameter):
        relax_to_invariant_curve(ring0, -0.1)


def test_ring3d_invariant_curve():
    sys = model.ring3d(0.0, 1.0)
    pm = relax_to_invariant_curve(sys, 0.05)
    assert pm.invariance_residual <= 1e-6 * 0.05
    # first-order prediction of the z-offset
    z = pm.curve_delta.nodes[:, 2]
    xy = pm.curve_delta.nodes[:, :2]
    assert np.max(np.abs(z - 0.05 * xy[:, 0])) < 0.05**2 * 2


@pytest.mark.parametrize("sys, nu", [(model.ring(0.0), -2.0), (model.ring3d(0.0, 0.0), -1.0)])
def test_lyapunov(sys, nu):
    pm = relax_to_invariant_curve(sys, 0.0)
    ly = lyapunov_type_numbers(sys, pm)
    assert abs(ly.nu_rate - nu) < 0.05
    assert abs(ly.tangential_rate) < 0.02


def test_second_order_remainder_ratio():
    # |phi_delta - delta h1| / delta^2 is bounded: consecutive ratios near 4
    sys = model.ring(1.0)
    err = []
    for d in (0.08, 0.04, 0.02):
        pm = relax_to_invariant_curve(sys, d)
        err.append(np.max(np.linalg.norm(pm.offset - d * pm.h1, axis=1)))
    for a, b in zip(err, err[1:]):
        assert 3 <= a / b <= 5


def test_b_delta_node_refinement(ring1):
    a = relax_to_invariant_curve(ring1, 0.1, nodes=512)
    b = relax_to_invariant_curve(ring1, 0.1, nodes=1024)
    phi = np.linspace(0, a.length, 97)
    assert np.max(np.abs(a.b_delta(phi) - b.b_delta(phi))) <= 1e-6 * 0.1
