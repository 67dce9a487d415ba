import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metastab import potential as pot
from metastab.chains import (ChainX, ChainY, beta_matrix, build_chain_x, build_chain_y,
                             capacity, dirichlet_x, dirichlet_y, equilibrium_potential,
                             harmonic_extension, omega_of_saddle)
from metastab.errors import ModelAssumptionError, UsageError
from metastab.landscape import SADDLE, CriticalPoint


def saddle(eigs):
    eigs = np.array(eigs, float)
    d = len(eigs)
    return CriticalPoint(np.zeros(d), 0.0, eigs, np.eye(d), SADDLE)


def path3(w):
    return ChainX(np.array([[0, w, 0], [w, 0, w], [0, w, 0]], float))


# -- omega ------------------------------------------------------------------

def test_omega_double_well_saddle():
    assert omega_of_saddle(saddle([-4.0])) == pytest.approx(1 / math.pi, rel=1e-15)


def test_omega_2d_saddle():
    assert omega_of_saddle(saddle([-2.0, 8.0])) == pytest.approx(1 / (4 * math.pi), rel=1e-15)


def test_omega_unit_saddle():
    assert omega_of_saddle(saddle([-1.0, 1.0])) == pytest.approx(1 / (2 * math.pi), rel=1e-15)


def test_omega_rejects_minimum():
    m = CriticalPoint(np.zeros(1), 0.0, np.array([2.0]), np.eye(1), "minimum")
    with pytest.raises(UsageError):
        omega_of_saddle(m)


# -- chain x ----------------------------------------------------------------

def test_double_well_chain_x(dw):
    cx = build_chain_x(dw)
    assert cx.K == 2
    assert cx.omega[0, 1] == pytest.approx(1 / math.pi, rel=1e-12)
    np.testing.assert_allclose(cx.mu, [0.5, 0.5], rtol=1e-15)


def test_triple_well_2d_chain_x_resummed(tw2d):
    cx = build_chain_x(tw2d)
    brute = np.zeros((3, 3))
    for lk in tw2d.links:
        ev = np.linalg.eigvalsh(pot.hessian(tw2d.spec, lk.saddle.location))
        w = -ev[0] / (2 * math.pi * math.sqrt(-np.prod(ev)))
        brute[lk.i - 1, lk.j - 1] += w
        brute[lk.j - 1, lk.i - 1] += w
    np.testing.assert_allclose(cx.omega, brute, rtol=1e-10)
    assert cx.omega[0, 2] == 0.0


def test_empty_pair_still_valid():
    cx = path3(1.0)
    assert cx.omega[0, 2] == 0.0
    assert np.all(cx.omega_i > 0)


def test_disconnected_state_rejected():
    with pytest.raises(ModelAssumptionError):
        ChainX(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], float))


def test_bad_omega_rejected():
    with pytest.raises(UsageError):
        ChainX(np.array([[0, 1], [2, 0]], float))
    with pytest.raises(UsageError):
        ChainX(np.array([[0, -1], [-1, 0]], float))


def test_generator_rows_and_stationarity():
    cx = ChainX(np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], float))
    L = cx.generator()
    np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(cx.mu @ L, 0, atol=1e-12)


# -- equilibrium potential and capacity --------------------------------------

def test_two_state_equilibrium_potential():
    cx = ChainX(np.array([[0, 0.3], [0.3, 0]]))
    np.testing.assert_array_equal(equilibrium_potential(cx, [1], [2]), [1.0, 0.0])


def test_path_equilibrium_potential():
    h = equilibrium_potential(path3(0.7), [1], [3])
    np.testing.assert_allclose(h, [1.0, 0.5, 0.0], atol=1e-15)


def test_equilibrium_potential_harmonic():
    rng = np.random.default_rng(3)
    w = np.triu(rng.uniform(0.1, 1, (6, 6)), 1)
    cx = ChainX(w + w.T)
    h = equilibrium_potential(cx, [1, 4], [6])
    assert h[0] == 1.0 and h[3] == 1.0 and h[5] == 0.0
    r = cx.generator() @ h
    np.testing.assert_allclose(r[[1, 2, 4]], 0, atol=1e-12)


def test_equilibrium_potential_preconditions():
    cx = path3(1.0)
    with pytest.raises(UsageError):
        equilibrium_potential(cx, [], [1])
    with pytest.raises(UsageError):
        equilibrium_potential(cx, [1], [1])
    with pytest.raises(UsageError):
        equilibrium_potential(cx, [4], [1])


def test_double_well_capacity(dw):
    cx = build_chain_x(dw)
    assert capacity(cx, [1], [2]) == pytest.approx(1 / math.pi, rel=1e-12)


def test_capacity_empty_target_is_zero():
    cx = path3(1.0)
    assert capacity(cx, [1, 2, 3], []) == 0.0
    np.testing.assert_array_equal(equilibrium_potential(cx, [1], []), 1.0)


def test_path_capacity_series_resistance():
    assert capacity(path3(0.7), [1], [3]) == pytest.approx(0.35, rel=1e-14)


def test_dirichlet_x_examples(rng):
    cx = ChainX(np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], float))
    assert dirichlet_x(cx, np.full(3, 2.5), np.full(3, 2.5)) == 0.0
    h = equilibrium_potential(cx, [1], [3])
    assert dirichlet_x(cx, h, h) == capacity(cx, [1], [3])
    f, g1, g2 = rng.normal(size=(3, 3))
    assert dirichlet_x(cx, f, g1 + g2) == pytest.approx(
        dirichlet_x(cx, f, g1) + dirichlet_x(cx, f, g2), abs=1e-12)
    # generator form sum_i mu_i f_i (-L g)_i
    gen = float(np.sum(cx.mu * f * -(cx.generator() @ g1)))
    assert dirichlet_x(cx, f, g1) == pytest.approx(gen, abs=1e-12)


# -- beta and chain y --------------------------------------------------------

def test_double_well_beta(dw):
    beta = beta_matrix(build_chain_x(dw), dw.s_star)
    assert beta[0, 1] == pytest.approx(1 / math.pi, rel=1e-12)


def test_path_beta():
    beta = beta_matrix(path3(0.7), [1, 3])
    assert beta[0, 1] == pytest.approx(0.35, rel=1e-14)


def test_beta_needs_two_states():
    with pytest.raises(UsageError):
        beta_matrix(path3(1.0), [1])


def test_double_well_chain_y(dw):
    cy = build_chain_y(dw, beta_matrix(build_chain_x(dw), dw.s_star))
    np.testing.assert_allclose(cy.nu, [1 / math.sqrt(8)] * 2, rtol=1e-12)
    assert cy.rates()[0, 1] == pytest.approx(2 * math.sqrt(2) / math.pi, rel=1e-12)
    assert cy.rates()[0, 1] == pytest.approx(0.900316, abs=1e-6)
    hold = cy.mean_holding()[0]
    assert hold == pytest.approx(math.pi / (2 * math.sqrt(2)), rel=1e-12)
    # Eyring-Kramers prefactor (2 pi / lambda) sqrt(|det saddle| / det minimum)
    assert hold == pytest.approx((2 * math.pi / 4) * math.sqrt(4 / 8), rel=1e-12)
    assert hold == pytest.approx(1.110721, abs=1e-6)


def test_triple_well_2d_chain_y(tw2d):
    cy = build_chain_y(tw2d, beta_matrix(build_chain_x(tw2d), tw2d.s_star))
    for i, k in zip(tw2d.s_star, range(cy.n)):
        m = tw2d.well(i).minima[0]
        det = np.prod(np.linalg.eigvalsh(pot.hessian(tw2d.spec, m.location)))
        assert cy.nu[k] == pytest.approx(det ** -0.5, rel=1e-10)
    np.testing.assert_allclose(cy.mu_star @ cy.generator(), 0, atol=1e-12)


def test_harmonic_extension_examples():
    cx = ChainX(np.array([[0, 1, 2, 0], [1, 0, 3, 1], [2, 3, 0, 1], [0, 1, 1, 0]], float))
    np.testing.assert_allclose(harmonic_extension(cx, [1, 4], [2.0, 2.0]), 2.0, rtol=1e-14)
    np.testing.assert_allclose(harmonic_extension(cx, [1, 4], [1.0, 0.0]),
                               equilibrium_potential(cx, [1], [4]), atol=1e-14)
    u = np.array([0.3, -1.0, 2.0, 5.0])
    np.testing.assert_array_equal(harmonic_extension(cx, [1, 2, 3, 4], u), u)


def test_dirichlet_y_examples(rng):
    cy = ChainY((1, 2, 3), np.array([[0, 1, 2], [1, 0, 0.5], [2, 0.5, 0]]), np.array([1., 2, 3]))
    assert dirichlet_y(cy, np.ones(3), np.ones(3)) == 0.0
    for i in range(3):
        for j in range(3):
            if i != j:
                assert dirichlet_y(cy, np.eye(3)[i], np.eye(3)[j]) == pytest.approx(
                    -cy.beta[i, j] / cy.nu_star, rel=1e-15)
    f = rng.normal(size=3)
    assert dirichlet_y(cy, f, f) >= 0


def test_negative_beta_warns_without_clamping(monkeypatch):
    import metastab.chains as chains_mod
    cx = path3(1.0)
    real = chains_mod.capacity
    monkeypatch.setattr(chains_mod, "capacity",
                        lambda c, A, B: real(c, A, B) + (5.0 if len(A) == 2 else 0.0))
    with pytest.warns(RuntimeWarning, match="negative beta"):
        beta = chains_mod.beta_matrix(cx, [1, 2, 3])
    assert beta.min() < 0


# -- property suite over random graphs --------------------------------------

@st.composite
def graphs(draw):
    K = draw(st.integers(2, 8))
    w = np.zeros((K, K))
    # a random spanning tree keeps the chain irreducible, then extra edges
    for k in range(1, K):
        parent = draw(st.integers(0, k - 1))
        w[k, parent] = w[parent, k] = draw(st.floats(0.05, 5.0))
    for i in range(K):
        for j in range(i + 1, K):
            if draw(st.booleans()):
                w[i, j] = w[j, i] = w[i, j] + draw(st.floats(0.05, 5.0))
    n_star = draw(st.integers(2, K))
    star = sorted(draw(st.permutations(range(1, K + 1)))[:n_star])
    nu = np.array([draw(st.floats(0.1, 3.0)) for _ in star])
    u = np.array([draw(st.floats(-3, 3)) for _ in star])
    v = np.array([draw(st.floats(-3, 3)) for _ in star])
    noise = np.array([draw(st.floats(-3, 3)) for _ in range(K)])
    return ChainX(w), star, nu, u, v, noise


def _chain_y(cx, star, nu):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        return ChainY(tuple(star), beta_matrix(cx, star), nu)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(graphs())
def test_dirichlet_forms_agree_on_harmonic_extensions(g):
    cx, star, nu, u, v, _ = g
    cy = _chain_y(cx, star, nu)
    ut, vt = harmonic_extension(cx, star, u), harmonic_extension(cx, star, v)
    lhs = dirichlet_x(cx, ut, vt)
    rhs = cy.nu_star * dirichlet_y(cy, u, v)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(graphs())
def test_energy_independent_of_extension(g):
    cx, star, nu, u, v, noise = g
    ut = harmonic_extension(cx, star, u)
    v1 = harmonic_extension(cx, star, v)
    v2 = v1.copy()
    off = [k for k in range(cx.K) if k + 1 not in star]
    v2[off] += noise[off]
    assert dirichlet_x(cx, ut, v1) == pytest.approx(dirichlet_x(cx, ut, v2), rel=1e-10, abs=1e-12)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(graphs())
def test_capacity_identities(g):
    cx, star, nu, *_ = g
    cy = _chain_y(cx, star, nu)
    n = len(star)
    E = [harmonic_extension(cx, star, np.eye(n)[a]) for a in range(n)]
    for a, i in enumerate(star):
        cap = capacity(cx, [i], [k for k in star if k != i])
        assert dirichlet_x(cx, E[a], E[a]) == pytest.approx(cap, rel=1e-12, abs=1e-12)
        for b in range(n):
            if a == b:
                continue
            assert dirichlet_x(cx, E[a], E[b]) == pytest.approx(-cy.beta[a, b], rel=1e-12, abs=1e-12)
            assert dirichlet_y(cy, np.eye(n)[a], np.eye(n)[b]) == pytest.approx(
                -cy.beta[a, b] / cy.nu_star, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(graphs())
def test_chain_invariants(g):
    cx, star, nu, u, *_ = g
    cy = _chain_y(cx, star, nu)
    np.testing.assert_allclose(cy.beta, cy.beta.T, rtol=0, atol=0)
    assert cy.beta.min() >= -1e-12
    for L, m in ((cx.generator(), cx.mu), (cy.generator(), cy.mu_star)):
        scale = max(1.0, np.abs(L).max())
        np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-12 * scale)
        np.testing.assert_allclose(m @ L, 0, atol=1e-12 * scale)
    assert abs(cy.mu_star @ (cy.generator() @ u)) <= 1e-12 * max(1.0, np.abs(cy.generator()).max())
    ut = harmonic_extension(cx, star, u)
    assert np.abs(ut).max() <= np.abs(u).max() * (1 + 1e-12)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(graphs(), st.floats(0.01, 2.0))
def test_extra_saddle_monotonicity(g, extra):
    cx, star, *_ = g
    i, j = star[0] - 1, star[1] - 1
    w = cx.omega.copy()
    w[i, j] += extra
    w[j, i] += extra
    cx2 = ChainX(w)
    assert cx2.omega[i, j] > cx.omega[i, j]
    assert capacity(cx2, [i + 1], [j + 1]) >= capacity(cx, [i + 1], [j + 1]) * (1 - 1e-12)
