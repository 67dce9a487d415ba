import math

import numpy as np
import pytest

from metastab import landscape as lsc
from metastab import potential as pot
from metastab.errors import ConvergenceError, ModelAssumptionError


def kinds(points):
    return [(round(float(c.location[0]), 12), c.kind) for c in points]


def test_double_well_critical_points(dw_spec):
    pts = lsc.find_critical_points(dw_spec)
    assert kinds(pts) == [(-1.0, lsc.MINIMUM), (0.0, lsc.SADDLE), (1.0, lsc.MINIMUM)]
    np.testing.assert_allclose([c.eigenvalues[0] for c in pts], [8.0, -4.0, 8.0], atol=1e-9)


def test_asym_double_well_critical_points_match_cubic_roots():
    spec = pot.builtin_spec("asym_double_well", c=0.1)
    pts = lsc.find_critical_points(spec)
    roots = np.sort(np.roots([4.0, 0.0, -4.0, 0.1]).real)
    np.testing.assert_allclose([c.location[0] for c in pts], roots, atol=1e-10)
    assert [c.kind for c in pts] == [lsc.MINIMUM, lsc.SADDLE, lsc.MINIMUM]
    values = [c.value for c in pts]
    assert len(set(values)) == 3


def test_quadratic_has_one_minimum():
    pts = lsc.find_critical_points(pot.builtin_spec("quadratic", 1))
    assert kinds(pts) == [(0.0, lsc.MINIMUM)]


def test_double_well_graph(dw):
    assert dw.K == 2
    assert dw.s_star == [1, 2]
    assert dw.H == 1.0 and dw.h == 0.0
    assert len(dw.links) == 1
    lk = dw.links[0]
    assert (lk.i, lk.j) == (1, 2)
    np.testing.assert_array_equal(lk.v1, [1.0])
    assert dw.well(1).minima[0].location[0] == pytest.approx(-1.0, abs=1e-12)


def test_double_well_explicit_H(dw_spec):
    g = lsc.analyze(dw_spec, H=1.0)
    assert g.K == 2 and len(g.links) == 1


def test_double_well_low_H_disconnected(dw_spec):
    with pytest.raises(ModelAssumptionError, match="connectivity"):
        lsc.analyze(dw_spec, H=0.5)
    # level-set oracle: {U < 0.5} has two components and no saddle lies in it
    assert lsc.flood_fill_components(dw_spec, 0.5) == 2


def test_asym_double_well_single_deepest():
    with pytest.raises(ModelAssumptionError, match=r"\|S_star\| < 2"):
        lsc.analyze(pot.builtin_spec("asym_double_well"))
    g = lsc.analyze(pot.builtin_spec("asym_double_well"), allow_single=True)
    assert len(g.s_star) == 1


def test_saddle_sides_double_well(dw_spec):
    pts = lsc.find_critical_points(dw_spec)
    minima = [c for c in pts if c.kind == lsc.MINIMUM]
    i, j, v1 = lsc.saddle_sides(dw_spec, pts[1], minima, [1, 2])
    assert (i, j) == (1, 2)
    np.testing.assert_array_equal(v1, [1.0])


def test_saddle_without_minima_fails():
    spec = pot.builtin_spec("quadratic", 2, k2=-2.0)
    pts = lsc.find_critical_points(spec)
    assert [c.kind for c in pts] == [lsc.SADDLE]
    with pytest.raises(ConvergenceError):
        lsc.saddle_sides(spec, pts[0], [])


def test_triple_well_2d_graph(tw2d):
    assert tw2d.K == 3
    assert tw2d.s_star == [1, 3]
    pairs = [(lk.i, lk.j) for lk in tw2d.links]
    assert sorted(pairs) == [(1, 2), (2, 3)]
    assert len(set(pairs)) == len(pairs)
    assert tw2d.valley_radius > 0
    # v1 points into the higher-id well
    for lk in tw2d.links:
        target = tw2d.well(lk.j).minima[0].location
        assert np.dot(lk.v1, target - lk.saddle.location) > 0


def test_triple_well_2d_well_count_matches_flood_fill(tw2d):
    # {U < H} is open; the grid would bridge the saddles at exactly H
    assert lsc.flood_fill_components(tw2d.spec, tw2d.H - 1e-3, 401) == tw2d.K


def test_double_well_valley_radius(dw):
    # a = (H - 0) / 2, so the binding constraint is the outer edge of
    # {(x^2 - 1)^2 < 1/2} at x = sqrt(1 + sqrt(1/2)); r0 is half the distance to it
    oracle = 0.5 * (math.sqrt(1 + math.sqrt(0.5)) - 1)
    assert dw.valley_radius == pytest.approx(oracle, rel=1e-9)


def test_double_well_valley_radius_grid_scan(dw):
    x = np.linspace(1, 2, 200001)
    inside = (x * x - 1) ** 2 < 0.5
    edge = x[np.argmin(inside)]
    assert dw.valley_radius == pytest.approx(0.5 * (edge - 1), abs=1e-5)


def test_quadratic_valley_radius_level_set_only():
    g = lsc.analyze(pot.builtin_spec("quadratic", 1), H=1.0, allow_single=True)
    assert g.s_star == [1]
    assert g.valley_radius == pytest.approx(0.5 * math.sqrt(0.5), rel=1e-9)


def test_locate(dw):
    assert lsc.locate(dw, [1.05]) == 2
    assert lsc.locate(dw, [-1.0]) == 1
    assert lsc.locate(dw, [0.0]) == lsc.DELTA
    assert lsc.locate(dw, [1.0 + dw.valley_radius * (1 + 1e-9)]) == lsc.DELTA


def test_landscape_round_trip(dw, tw2d):
    for g in (dw, tw2d):
        back = lsc.LandscapeGraph.from_dict(g.to_dict())
        assert back.to_dict() == g.to_dict()
