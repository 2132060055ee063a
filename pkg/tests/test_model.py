import pickle

import numpy as np
import pytest

from quasipath import model
from quasipath.errors import InvalidParameter, NonHyperbolic


@pytest.mark.parametrize("sys, lam", [(model.ring(1.0), 2.0), (model.ring3d(0.0, 1.0), 1.0), (model.ellipse(2.0), 0.5)])
def test_spectral_gap(sys, lam):
    assert abs(sys.lam - lam) < 1e-8


@pytest.mark.parametrize("sys", [model.ring(0.0), model.ring3d(1.0, 0.5), model.ellipse(2.0, 0.3)])
def test_stationary_curve(sys):
    assert model.verify_stationary_curve(sys).passed


@pytest.mark.parametrize("sys", [model.ring(1.0), model.ring3d(1.0, 0.5), model.ellipse(2.0, 0.3)])
def test_derivatives_vs_finite_differences(sys):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, sys.n))
    h = 1e-6
    for i in range(sys.n):
        e = np.zeros(sys.n)
        e[i] = h
        fd_grad = (sys.V(x + e) - sys.V(x - e)) / (2 * h)
        assert np.allclose(fd_grad, sys.gradV(x)[:, i], atol=1e-6)
        fd_H = (sys.gradV(x + e) - sys.gradV(x - e)) / (2 * h)
        assert np.allclose(fd_H, sys.hessV(x)[:, :, i], atol=1e-6)
        fd_dG = (sys.G(x + e) - sys.G(x - e)) / (2 * h)
        assert np.allclose(fd_dG, sys.dG(x)[:, :, i], atol=1e-6)
        fd_T = (sys.hessV(x + e) - sys.hessV(x - e)) / (2 * h)
        assert np.allclose(fd_T, sys.d3V(x)[..., i], atol=1e-5)
        fd_G2 = (sys.dG(x + e) - sys.dG(x - e)) / (2 * h)
        assert np.allclose(fd_G2, sys.d2G(x)[..., i], atol=1e-5)


def test_fd_fallback_agrees():
    sys = model.ring(1.0)
    bare = sys.with_changes(d3V_exact=None, d2G_exact=None)
    x = np.array([[0.3, 1.1], [-0.7, 0.2]])
    assert np.allclose(bare.d3V(x), sys.d3V(x), atol=1e-7)
    assert np.allclose(bare.d2G(x), sys.d2G(x), atol=1e-7)


def test_pickle_roundtrip():
    sys = model.ring3d(1.0, 0.5)
    other = pickle.loads(pickle.dumps(sys))
    x = np.array([0.3, 0.9, 0.1])
    assert np.array_equal(other.drift(x, 0.1), sys.drift(x, 0.1))
    assert other.stationary_curve.length == sys.stationary_curve.length


def test_make_builtin():
    assert model.make_builtin("ring", kappa=2.0).params == {"kappa": 2.0}
    with pytest.raises(InvalidParameter):
        model.make_builtin("torus")
    with pytest.raises(InvalidParameter):
        model.ring(float("nan"))


def test_nonhyperbolic_detected():
    sys = model.ring(0.0)
    flat = sys.with_changes(hessV=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2)))
    with pytest.raises(NonHyperbolic):
        model.spectral_gap_estimate(flat)
