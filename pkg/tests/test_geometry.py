"""Curves, projection and tubes against closed forms on the circle and brute force elsewhere."""
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from hypothesis import given, settings, strategies as st

from quasipath import model
from quasipath.errors import (
    DegenerateCurve, InvalidParameter, LowResolutionWarning, NonUniqueProjection, OutsideNeighborhood,
)
from quasipath.geometry import (
    TubeClass, TubeSpec, arc_length_parametrize, normal_basis, projection_derivative, read_curve_csv,
    write_curve_csv,
)


@pytest.fixture(scope="module")
def circle():
    return model.unit_circle()


@pytest.fixture(scope="module")
def ellipse_curve():
    return model.ellipse(2.0).stationary_curve


def test_circle_length_and_nodes():
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    c = arc_length_parametrize(np.c_[np.cos(t), np.sin(t)])
    assert abs(c.length - 2 * np.pi) < 1e-10
    assert np.allclose(np.linalg.norm(c.nodes, axis=1), 1.0, atol=1e-12)


def test_ellipse_unit_speed(ellipse_curve):
    s = np.linspace(0, ellipse_curve.length, 1000)
    speed = np.linalg.norm(ellipse_curve(s, 1), axis=1)
    assert np.max(np.abs(speed - 1)) < 1e-6
    # arc length derivative is orthogonal to the curvature vector
    assert np.max(np.abs(np.sum(ellipse_curve(s, 1) * ellipse_curve(s, 2), axis=1))) < 1e-5


def test_ellipse_perimeter(ellipse_curve):
    # Ramanujan's second approximation, relative error ~1e-10 at this aspect ratio
    a, b = 2.0, 1.0
    h = ((a - b) / (a + b)) ** 2
    P = np.pi * (a + b) * (1 + 3 * h / (10 + np.sqrt(4 - 3 * h)))
    assert abs(ellipse_curve.length - P) < 1e-6


def test_square_warns_low_resolution():
    sq = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], float)
    with pytest.warns(LowResolutionWarning):
        c = arc_length_parametrize(sq)
    # perimeter 8; the spline rounds the corners outward
    assert 8.0 < c.length < 10.0


def test_degenerate_inputs():
    with pytest.raises(DegenerateCurve):
        arc_length_parametrize(np.array([[0.0, 0.0], [1.0, 0.0]]))
    pts = np.array([[0, 0], [1, 0], [1, 0], [0, 1]] + [[np.cos(t), np.sin(t)] for t in np.linspace(2, 6, 20)], float)
    with pytest.raises(DegenerateCurve):
        arc_length_parametrize(pts)


def test_projection_circle(circle):
    r = circle.project(np.array([1.5, 0.0]))
    assert abs(r.phase) < 1e-12 or abs(r.phase - 2 * np.pi) < 1e-12
    assert abs(r.distance - 0.5) < 1e-12
    with pytest.raises(NonUniqueProjection):
        circle.project(np.array([0.0, 0.0]))


def test_projection_far_point(circle):
    # (2, 0) lies beyond the injectivity estimate but projects regularly
    r = circle.project(np.array([2.0, 0.0]))
    assert abs(r.distance - 1.0) < 1e-12
    with pytest.raises(OutsideNeighborhood):
        circle.project(np.array([0.2, 0.0]))


def test_projection_derivative_closed_form(circle):
    # phase derivative of atan2 at (1.5, 0) along (0, 1) is 1/1.5
    v = projection_derivative(circle, np.array([1.5, 0.0]), np.array([0.0, 1.0]))
    assert abs(v - 2.0 / 3.0) < 1e-9


def test_projection_ellipse_brute_force(ellipse_curve):
    rng = np.random.default_rng(3)
    s = np.linspace(0, ellipse_curve.length, 200001)
    dense = ellipse_curve(s)
    for _ in range(20):
        th = rng.uniform(0, ellipse_curve.length)
        q, dq, _ = ellipse_curve.jet(th)
        Y = q + rng.uniform(-0.2, 0.2) * np.array([-dq[1], dq[0]])
        r = ellipse_curve.project(Y)
        k = np.argmin(np.linalg.norm(dense - Y, axis=1))
        f = lambda u: np.linalg.norm(ellipse_curve(u) - Y)
        best = minimize_scalar(f, bounds=(s[max(k - 1, 0)], s[min(k + 1, len(s) - 1)]), method="bounded",
                               options={"xatol": 1e-13})
        assert abs(r.distance - best.fun) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * np.pi, exclude_max=True), st.floats(-0.45, 0.45))
def test_projection_inverts_normal_offset(theta, r):
    circle = model.unit_circle()
    Y = (1 + r) * np.array([np.cos(theta), np.sin(theta)])
    res = circle.project(Y)
    d = np.mod(res.phase - theta + np.pi, 2 * np.pi) - np.pi
    assert abs(d) < 1e-9
    assert abs(res.distance - abs(r)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.3, 3.0))
def test_arc_length_rotation_invariant(angle, scale):
    t = np.linspace(0, 2 * np.pi, 128, endpoint=False)
    P = np.c_[2 * np.cos(t), np.sin(t)]
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    a = arc_length_parametrize(P)
    b = arc_length_parametrize(scale * P @ R.T)
    assert abs(b.length - scale * a.length) < 1e-9 * scale


def test_project_many_matches_project(ellipse_curve):
    rng = np.random.default_rng(0)
    th = rng.uniform(0, ellipse_curve.length, 300)
    q, dq, _ = ellipse_curve.jet(th)
    Y = q + rng.uniform(-0.2, 0.2, (300, 1)) * np.c_[-dq[:, 1], dq[:, 0]]
    ph, dist = ellipse_curve.project_many(Y)
    for i in range(0, 300, 37):
        r = ellipse_curve.project(Y[i])
        assert abs(dist[i] - r.distance) < 1e-10


def test_normal_basis_orthonormal():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(10, 3))
    N = normal_basis(t)
    assert N.shape == (10, 3, 2)
    tu = t / np.linalg.norm(t, axis=1, keepdims=True)
    assert np.allclose(np.einsum("ki,kia->ka", tu, N), 0, atol=1e-12)
    assert np.allclose(np.einsum("kia,kib->kab", N, N), np.eye(2), atol=1e-12)


def test_tube_classification(circle):
    tube = TubeSpec(circle, 0.04, 1.0, np.pi / 2, np.pi / 2, np.pi / 2)
    r = tube.radius
    assert tube.classify(np.array([0.0, 1.0])) is TubeClass.INTERIOR
    assert tube.classify(np.array([0.0, 1.0 + r])) is TubeClass.LATERAL
    assert tube.classify(np.array([1.0, 0.0])) is TubeClass.END_MINUS
    assert tube.classify(np.array([-1.0, 0.0])) is TubeClass.END_PLUS
    assert tube.classify(np.array([0.0, 1.0 + 2 * r])) is TubeClass.OUTSIDE
    assert tube.classify(np.array([0.0, -1.0])) is TubeClass.OUTSIDE


def test_tube_validation(circle):
    with pytest.raises(InvalidParameter):
        TubeSpec(circle, 0.1, -1.0, 1.0, 1.0, 0.0)
    with pytest.raises(InvalidParameter):
        TubeSpec(circle, 0.1, 1.0, 3.2, 3.2, 0.0)


def test_boundary_sample_distance(circle):
    tube = TubeSpec(circle, 0.09, 1.0, 1.0, 1.0, 0.0)
    P = tube.boundary_sample(64)
    r = np.linalg.norm(P, axis=1)
    assert np.allclose(np.abs(r - 1.0), 0.3, atol=1e-12)


def test_csv_roundtrip(tmp_path, ellipse_curve):
    p = tmp_path / "c.csv"
    write_curve_csv(ellipse_curve, p)
    assert p.read_text().splitlines()[0] == "x0,x1"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c = read_curve_csv(p)
    assert abs(c.length - ellipse_curve.length) < 1e-9


def test_projection_idempotent(ellipse_curve):
    rng = np.random.default_rng(9)
    for Y in rng.uniform(-1.8, 1.8, (20, 2)) * [1, 0.6] + [0, 0.9]:
        try:
            r = ellipse_curve.project(Y)
        except (NonUniqueProjection, OutsideNeighborhood):
            continue
        again = ellipse_curve.project(r.foot)
        d = np.mod(again.phase - r.phase + 0.5 * ellipse_curve.length, ellipse_curve.length) - 0.5 * ellipse_curve.length
        assert abs(d) <= 1e-10 and again.distance <= 1e-10
