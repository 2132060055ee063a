import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from quasipath.reduced import (
    PhasePath, adaptive_simpson, reduced_profile, reduced_qp_offset, reduced_quasipotential, reduced_rate,
    reversed_flow_path,
)


def test_simpson_exact_and_smooth():
    assert abs(adaptive_simpson(lambda x: x**3, 0, 2) - 4.0) < 1e-14
    assert abs(adaptive_simpson(np.sin, 0, np.pi) - 2.0) < 1e-10


def test_ring0_values(pm_ring0):
    phi_A = pm_ring0.stable.phi_A
    r = reduced_quasipotential(pm_ring0, phi_A + np.pi / 2)
    assert abs(r.W_red - 0.2) < 1e-8
    r = reduced_quasipotential(pm_ring0, phi_A + np.pi)
    assert abs(r.W_red - 0.4) < 1e-8
    assert abs(r.W_plus - r.W_minus) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_ring0_closed_form(u):
    from quasipath import model
    from quasipath.manifold import relax_to_invariant_curve

    pm = _PM.setdefault("pm", relax_to_invariant_curve(model.ring(0.0), 0.1))
    W = reduced_qp_offset(pm, pm.stable.phi_A, u)
    assert abs(W - 0.2 * (1 - np.cos(u))) < 1e-8


_PM = {}


def test_ring1_against_trapezoid(pm_ring1):
    # independent route: dense trapezoid on the positive part of -b_delta
    phi_A = pm_ring1.stable.phi_A
    for u in (-1.2, 0.7, 1.5):
        s = np.linspace(0, abs(u), 200001)
        d = np.sign(u)
        vals = np.maximum(-d * pm_ring1.b_delta(phi_A + d * s), 0)
        ref = 2 * trapezoid(vals, s)
        assert abs(reduced_qp_offset(pm_ring1, phi_A, u) - ref) < 1e-9


def test_profile_consistent(pm_ring0):
    prof = reduced_profile(pm_ring0, n=256)
    phi_A = pm_ring0.stable.phi_A
    k = 64  # a quarter turn
    assert abs(prof.W_ccw[k] - 0.2) < 1e-8
    assert abs(prof.W_cw[-k] - 0.2) < 1e-8
    # the potential is U = -int b and increases away from phi_A
    assert np.all(prof.U[1:] > prof.U[0])
    assert np.allclose(prof.W_min, np.minimum(prof.W_cw, prof.W_ccw))
    assert abs(prof.phases[0] - phi_A) < 1e-12


def test_reversed_flow_attains_cost(pm_ring0):
    phi_A = pm_ring0.stable.phi_A
    p = reversed_flow_path(pm_ring0, phi_A + 0.05, phi_A + np.pi / 2, n=20000)
    # rate of the reversed flow equals the uphill cost between its ends
    ref = reduced_qp_offset(pm_ring0, phi_A, np.pi / 2) - reduced_qp_offset(pm_ring0, phi_A, 0.05)
    assert abs(reduced_rate(p, pm_ring0) - ref) < 1e-4


def test_rate_zero_on_flow(pm_ring0):
    t = np.linspace(0, 5, 5001)
    # phi' = 0.1 cos(phi) solved in closed form from phi(0) = 0
    phi = 2 * np.arctan(np.tanh(0.05 * t))
    assert reduced_rate(PhasePath(t, phi), pm_ring0) < 1e-10


def test_quadrature_grid_doubling(pm_ring1):
    from quasipath.reduced import _uphill_cost

    phi_A = pm_ring1.stable.phi_A
    for d, L in ((1, 1.5), (-1, 2.5)):
        assert abs(_uphill_cost(pm_ring1, phi_A, d, L, 1e-10, 2048) - _uphill_cost(pm_ring1, phi_A, d, L, 1e-10, 4096)) <= 1e-9
