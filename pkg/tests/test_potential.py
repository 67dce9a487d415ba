import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metastab import potential as pot


def fd_grad(spec, x, h=1e-5):
    x = np.asarray(x, float)
    g = np.empty(spec.dim)
    for a in range(spec.dim):
        e = np.zeros(spec.dim)
        e[a] = h
        g[a] = (pot.eval(spec, x + e) - pot.eval(spec, x - e)) / (2 * h)
    return g


def fd_hess(spec, x, h=1e-5):
    x = np.asarray(x, float)
    H = np.empty((spec.dim, spec.dim))
    for a in range(spec.dim):
        e = np.zeros(spec.dim)
        e[a] = h
        H[:, a] = (pot.grad(spec, x + e) - pot.grad(spec, x - e)) / (2 * h)
    return H


def tw_by_hand(x, y, A=1.2, s=0.3, B=0.3, sT=0.25, q=0.05, k=4.0):
    g = lambda r2, w: math.exp(-r2 / (2 * w * w))  # noqa: E731
    r2 = x * x + y * y
    return (-A * (g((x - 1) ** 2 + y * y, s) + g((x + 1) ** 2 + y * y, s)) - B * g(r2, sT)
            + q * r2 * r2 + k * y * y / 2)


ALL_SPECS = [pot.builtin_spec(n) for n in ("double_well", "asym_double_well",
                                           "triple_well_1d", "triple_well_2d")] + \
    [pot.builtin_spec("quadratic", 1), pot.builtin_spec("quadratic", 2)]


def test_double_well_values(dw_spec):
    assert pot.eval(dw_spec, [0.0]) == 1.0
    assert pot.eval(dw_spec, [1.0]) == 0.0
    assert pot.eval(dw_spec, 1.0) == 0.0


def test_triple_well_2d_origin_matches_hand_formula():
    spec = pot.builtin_spec("triple_well_2d")
    expected = -2 * 1.2 * math.exp(-1 / (2 * 0.09)) - 0.3
    assert pot.eval(spec, [0.0, 0.0]) == pytest.approx(expected, rel=1e-15)
    assert expected == pytest.approx(-0.30927821, abs=1e-8)


@pytest.mark.parametrize("x, y", [(0.3, -0.2), (1.1, 0.4), (-0.7, 0.05)])
def test_triple_well_2d_matches_hand_formula(x, y):
    spec = pot.builtin_spec("triple_well_2d")
    assert pot.eval(spec, [x, y]) == pytest.approx(tw_by_hand(x, y), rel=1e-14)


def test_triple_well_1d_is_axis_restriction():
    s1 = pot.builtin_spec("triple_well_1d", **{"A": 1.2, "B": 0.3, "q": 0.05})
    s2 = pot.builtin_spec("triple_well_2d")
    for x in np.linspace(-2, 2, 17):
        assert pot.eval(s1, [x]) == pytest.approx(pot.eval(s2, [x, 0.0]), rel=1e-15, abs=1e-300)


def test_double_well_gradient(dw_spec):
    assert pot.grad(dw_spec, [1.0])[0] == 0.0
    assert pot.grad(dw_spec, [0.0])[0] == 0.0
    assert abs(pot.grad(dw_spec, [0.5])[0] - fd_grad(dw_spec, [0.5])[0]) <= 1e-6


def test_double_well_hessian(dw_spec):
    assert pot.hessian(dw_spec, [1.0])[0, 0] == 8.0
    assert pot.hessian(dw_spec, [0.0])[0, 0] == -4.0


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.name}-{s.dim}d")
def test_derivatives_match_finite_differences(spec, rng):
    for _ in range(20):
        x = np.array([rng.uniform(lo, hi) for lo, hi in spec.box]) * 0.8
        np.testing.assert_allclose(pot.grad(spec, x), fd_grad(spec, x),
                                   rtol=1e-5, atol=1e-6 * max(1, abs(pot.eval(spec, x))))
        H = pot.hessian(spec, x)
        np.testing.assert_allclose(H, H.T, rtol=0, atol=0)
        np.testing.assert_allclose(H, fd_hess(spec, x), rtol=1e-5, atol=1e-5)


def test_eval_many_matches_eval():
    spec = pot.builtin_spec("triple_well_2d")
    X = np.random.default_rng(1).uniform(-2, 2, size=(50, 2))
    np.testing.assert_array_equal(pot.eval_many(spec, X), [pot.eval(spec, x) for x in X])


@pytest.mark.parametrize("bad", [[0.0, 0.0], [math.nan]])
def test_bad_points_rejected(dw_spec, bad):
    with pytest.raises(ValueError):
        pot.eval(dw_spec, bad)


def test_spec_validation():
    with pytest.raises(ValueError):
        pot.builtin_spec("nope")
    with pytest.raises(ValueError):
        pot.builtin_spec("double_well", c=1.0)
    with pytest.raises(ValueError):
        pot.PotentialSpec("double_well", {}, 2, ((-1, 1), (-1, 1)))


def test_spec_round_trip():
    for spec in ALL_SPECS:
        assert pot.PotentialSpec.from_dict(spec.to_dict()) == spec


def test_sym_eigen_identity():
    w, V = pot.sym_eigen(np.eye(2))
    np.testing.assert_array_equal(w, [1.0, 1.0])
    np.testing.assert_array_equal(V, np.eye(2))


def test_sym_eigen_diagonal():
    w, V = pot.sym_eigen(np.diag([-4.0, 3.0]))
    np.testing.assert_array_equal(w, [-4.0, 3.0])
    np.testing.assert_array_equal(np.abs(V), np.eye(2))


def test_sym_eigen_rejects_asymmetric():
    with pytest.raises(ValueError):
        pot.sym_eigen([[1.0, 2.0], [0.0, 1.0]])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3))
def test_sym_eigen_reconstruction(abc):
    a, b, c = abc
    m = np.array([[a, b], [b, c]])
    w, V = pot.sym_eigen(m)
    scale = max(1.0, np.abs(m).max())
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, m, atol=1e-10 * scale)
    np.testing.assert_allclose(V.T @ V, np.eye(2), atol=1e-12)
    assert w[0] <= w[1]
    np.testing.assert_allclose(w, np.linalg.eigvalsh(m), atol=1e-10 * scale)
