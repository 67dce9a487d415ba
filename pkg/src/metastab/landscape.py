"""Critical points, well decomposition of {U < H}, deepest wells and valley balls."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import brentq

from . import potential as pot
from .errors import ConvergenceError, ModelAssumptionError

__all__ = [
    "DELTA",
    "CriticalPoint",
    "Well",
    "SaddleLink",
    "LandscapeGraph",
    "find_critical_points",
    "descend",
    "saddle_sides",
    "build_landscape",
    "choose_valley_radius",
    "locate",
    "analyze",
    "flood_fill_components",
]

DELTA = 0  # region label for the complement of the valleys; well ids start at 1

MINIMUM = "minimum"
SADDLE = "saddle_index_1"
OTHER = "other"


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    value: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kind: str

    @property
    def lam(self) -> float:
        """Modulus of the negative eigenvalue of a saddle."""
        return -float(self.eigenvalues[0])

    @property
    def det(self) -> float:
        return float(np.prod(self.eigenvalues))

    def to_dict(self) -> dict:
        return {"location": list(map(float, self.location)), "value": float(self.value),
                "eigenvalues": list(map(float, self.eigenvalues)),
                "eigenvectors": [list(map(float, r)) for r in self.eigenvectors],
                "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "CriticalPoint":
        return cls(np.array(d["location"], float), float(d["value"]),
                   np.array(d["eigenvalues"], float), np.array(d["eigenvectors"], float),
                   d["kind"])


@dataclass(frozen=True)
class Well:
    id: int
    minima: tuple          # CriticalPoints attaining the well depth (the set M_i)
    depth: float           # h_i
    all_minima: tuple = ()  # every local minimum inside the well


@dataclass(frozen=True)
class SaddleLink:
    """A saddle of height H joining wells i < j, with v1 pointing into well j."""

    saddle: CriticalPoint
    i: int
    j: int
    v1: np.ndarray


@dataclass
class LandscapeGraph:
    spec: pot.PotentialSpec
    H: float
    h: float
    wells: list
    s_star: list
    links: list                       # SaddleLink for every saddle in S
    valley_radius: float = float("nan")
    critical_points: list = field(default_factory=list)
    tol: float = 1e-9

    @property
    def K(self) -> int:
        return len(self.wells)

    @property
    def saddles(self) -> list:
        return [lk.saddle for lk in self.links]

    @property
    def adjacency(self) -> dict:
        out: dict = {}
        for lk in self.links:
            out.setdefault((lk.i, lk.j), []).append(lk)
        return out

    def well(self, i: int) -> Well:
        return self.wells[i - 1]

    def valley_centers(self):
        """Ball centres of V_star and the owning well id of each."""
        centers, ids = [], []
        for i in self.s_star:
            for m in self.well(i).minima:
                centers.append(m.location)
                ids.append(i)
        return np.array(centers, dtype=np.float64).reshape(-1, self.spec.dim), \
            np.array(ids, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "potential": self.spec.to_dict(),
            "H": self.H,
            "h": self.h,
            "tol": self.tol,
            "valley_radius": self.valley_radius,
            "critical_points": [c.to_dict() for c in self.critical_points],
            "wells": [{"id": w.id, "depth": w.depth,
                       "minima": [m.to_dict() for m in w.minima],
                       "all_minima": [m.to_dict() for m in w.all_minima]}
                      for w in self.wells],
            "s_star": list(self.s_star),
            "saddles": [{"i": lk.i, "j": lk.j, "v1": list(map(float, lk.v1)),
                         "saddle": lk.saddle.to_dict()} for lk in self.links],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LandscapeGraph":
        wells = [Well(w["id"], tuple(CriticalPoint.from_dict(m) for m in w["minima"]),
                      float(w["depth"]),
                      tuple(CriticalPoint.from_dict(m) for m in w.get("all_minima", [])))
                 for w in d["wells"]]
        links = [SaddleLink(CriticalPoint.from_dict(s["saddle"]), s["i"], s["j"],
                            np.array(s["v1"], float)) for s in d["saddles"]]
        return cls(pot.PotentialSpec.from_dict(d["potential"]), float(d["H"]), float(d["h"]),
                   wells, list(d["s_star"]), links, float(d["valley_radius"]),
                   [CriticalPoint.from_dict(c) for c in d["critical_points"]],
                   float(d.get("tol", 1e-9)))


# ---------------------------------------------------------------------------
# critical points

@njit(cache=True)
def _newton_batch(gfn, hfn, p, seeds, lo, hi, maxit):
    n, d = seeds.shape
    pts = seeds.copy()
    gnorm = np.full(n, np.inf)
    g = np.empty(d)
    Hm = np.empty((d, d))
    for k in range(n):
        x = seeds[k].copy()
        for _ in range(maxit):
            gfn(p, x, g)
            gn = 0.0
            for a in range(d):
                gn += g[a] * g[a]
            gn = math.sqrt(gn)
            if gn == 0.0:
                break
            hfn(p, x, Hm)
            x_old0 = x[0]
            x_old1 = x[d - 1]
            if d == 1:
                if Hm[0, 0] == 0.0:
                    break
                x[0] -= g[0] / Hm[0, 0]
            else:
                det = Hm[0, 0] * Hm[1, 1] - Hm[0, 1] * Hm[1, 0]
                if det == 0.0:
                    break
                x[0] -= (Hm[1, 1] * g[0] - Hm[0, 1] * g[1]) / det
                x[1] -= (-Hm[1, 0] * g[0] + Hm[0, 0] * g[1]) / det
            if gn <= 1e-12 and abs(x[0] - x_old0) <= 1e-16 * (1.0 + abs(x[0])) \
                    and abs(x[d - 1] - x_old1) <= 1e-16 * (1.0 + abs(x[d - 1])):
                break
            out = False
            for a in range(d):
                w = hi[a] - lo[a]
                if x[a] < lo[a] - 0.5 * w or x[a] > hi[a] + 0.5 * w:
                    out = True
            if out:
                break
        gfn(p, x, g)
        gn = 0.0
        for a in range(d):
            gn += g[a] * g[a]
        gnorm[k] = math.sqrt(gn)
        pts[k] = x
    return pts, gnorm


def _classify(spec, x, degeneracy_tol) -> CriticalPoint:
    w, V = pot.sym_eigen(pot.hessian(spec, x))
    if np.min(np.abs(w)) <= degeneracy_tol:
        raise ModelAssumptionError(
            f"degenerate critical point at {list(map(float, x))}: eigenvalues {list(w)}")
    nneg = int(np.sum(w < 0))
    kind = MINIMUM if nneg == 0 else SADDLE if nneg == 1 else OTHER
    return CriticalPoint(np.array(x, float), pot.eval(spec, x), w, V, kind)


def find_critical_points(spec: pot.PotentialSpec, grid_density: int = 64,
                         degeneracy_tol: float = 1e-8, maxit: int = 100) -> list:
    """All critical points inside the bounding box.

    Newton iterations on the gradient are started from a uniform grid of
    ``grid_density`` points per axis; converged points are deduplicated and
    classified by the signs of the Hessian eigenvalues.
    """
    if spec.dim not in (1, 2):
        raise ValueError("critical-point search supports d in {1, 2}")
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in spec.box]
    mesh = np.meshgrid(*axes, indexing="ij")
    seeds = np.stack([m.ravel() for m in mesh], axis=1)
    lo = np.array([b[0] for b in spec.box])
    hi = np.array([b[1] for b in spec.box])
    _, gfn, hfn = spec.kernels
    pts, gn = _newton_batch(gfn, hfn, spec.param_vector, seeds, lo, hi, maxit)
    ok = (gn <= 1e-10) & np.all((pts >= lo) & (pts <= hi), axis=1)
    pts = pts[ok]
    uniq: list = []
    for x in pts[np.lexsort(pts.T[::-1])]:
        if not any(np.linalg.norm(x - u) <= 1e-6 for u in uniq):
            uniq.append(x)
    out = [_classify(spec, x, degeneracy_tol) for x in uniq]
    out.sort(key=lambda c: tuple(c.location))
    return out


# ---------------------------------------------------------------------------
# steepest descent from saddles

def descend(spec: pot.PotentialSpec, x0, max_steps: int = 200000, gtol: float = 1e-6):
    """Follow the steepest-descent path from ``x0`` to a local minimum.

    Uses gradient steps with Armijo backtracking until the gradient drops below
    ``gtol``, then finishes with Newton steps (line searches stall on rounding
    noise in U near the minimum). Returns the endpoint and the sampled path
    values of U.

    Raises
    ------
    ConvergenceError
        If the budget is exhausted or the path leaves twice the bounding box.
    """
    x = np.array(x0, dtype=float)
    lo = np.array([b[0] for b in spec.box])
    hi = np.array([b[1] for b in spec.box])
    span = hi - lo
    max_move = 1e-3 * float(span.max())
    u = pot.eval(spec, x)
    t = 1e-3
    values = [u]
    for _ in range(max_steps):
        g = pot.grad(spec, x)
        gg = float(g @ g)
        if math.sqrt(gg) <= gtol:
            for _ in range(20):
                step = np.linalg.solve(pot.hessian(spec, x), pot.grad(spec, x))
                x = x - step
                if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
                    break
            return x, np.array(values)
        # cap the displacement so the path is followed rather than jumped over
        t = min(t, max_move / math.sqrt(gg))
        while True:
            xn = x - t * g
            un = pot.eval(spec, xn)
            if un <= u - 0.25 * t * gg:
                break
            t *= 0.5
            if t < 1e-16:
                raise ConvergenceError(f"line search failed at {list(map(float, x))}")
        x, u = xn, un
        values.append(u)
        t *= 2.0
        if np.any(x < lo - span) or np.any(x > hi + span):
            raise ConvergenceError(f"steepest descent from {list(map(float, x0))} left the domain")
    raise ConvergenceError(f"steepest descent from {list(map(float, x0))} did not converge")


def _descend_to_minimum(spec, x0, minima) -> int:
    x, _ = descend(spec, x0)
    dists = [np.linalg.norm(x - m.location) for m in minima]
    if not dists or min(dists) > 1e-4:
        raise ConvergenceError(f"descent from {list(map(float, x0))} ended at "
                               f"{list(map(float, x))}, not a known minimum")
    return int(np.argmin(dists))


def saddle_sides(spec: pot.PotentialSpec, sigma: CriticalPoint, minima: list,
                 well_of_minimum=None):
    """Minima (or wells) reached by descending from both sides of a saddle.

    Parameters
    ----------
    minima : list of CriticalPoint
        Candidate endpoints.
    well_of_minimum : sequence of int, optional
        Well id for each entry of ``minima``. When given, returns ``(i, j, v1)``
        with ``i < j`` and ``v1`` oriented so that ``sigma + alpha v1`` descends
        into well ``j``. Otherwise returns the minimum indices reached from the
        ``+v1`` and ``-v1`` sides and the raw eigenvector.
    """
    if sigma.kind != SADDLE:
        raise ValueError("saddle_sides needs an index-1 saddle")
    v1 = np.array(sigma.eigenvectors[:, 0], dtype=float)
    alpha = 1e-3 / math.sqrt(sigma.lam)
    a = _descend_to_minimum(spec, sigma.location + alpha * v1, minima)
    b = _descend_to_minimum(spec, sigma.location - alpha * v1, minima)
    if well_of_minimum is None:
        return a, b, v1
    wa, wb = well_of_minimum[a], well_of_minimum[b]
    if wa == wb:
        raise ModelAssumptionError(
            f"saddle at {list(map(float, sigma.location))} does not separate two wells")
    if wa < wb:
        v1 = -v1
    return min(wa, wb), max(wa, wb), v1


# ---------------------------------------------------------------------------
# wells

class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _classes(minima, sides, level, tol, admissible):
    """Union minima below ``level`` through saddles below ``level``."""
    uf = _UnionFind(len(minima))
    for s, (a, b) in sides:
        if s.value < level - tol:
            uf.union(a, b)
    return {k: uf.find(k) for k in range(len(minima)) if admissible(minima[k])}


def build_landscape(spec: pot.PotentialSpec, points: list, H="auto", tol: float = 1e-9,
                    allow_single: bool = False) -> LandscapeGraph:
    """Decompose {U < H} into wells and collect the saddles of height H.

    Parameters
    ----------
    points : list of CriticalPoint
        Output of ``find_critical_points``.
    H : float or "auto"
        Saddle height. ``"auto"`` picks the lowest saddle level that separates
        two distinct wells.
    allow_single : bool
        Accept a single deepest well.
    """
    minima = [c for c in points if c.kind == MINIMUM]
    saddles = [c for c in points if c.kind == SADDLE]
    if not minima:
        raise ModelAssumptionError("no local minimum in the box")
    if len(minima) < 2 and not (allow_single and not isinstance(H, str)):
        # a lone minimum is only meaningful with an explicit H
        raise ModelAssumptionError("fewer than two local minima: no wells to connect")
    sides = []
    for s in saddles:
        a, b, _ = saddle_sides(spec, s, minima)
        sides.append((s, (a, b)))

    def separating_at(level):
        cls = _classes(minima, sides, level, tol, lambda m: m.value < level - tol)
        return [s for s, (a, b) in sides
                if abs(s.value - level) <= tol and a in cls and b in cls
                and cls[a] != cls[b]]

    if isinstance(H, str):
        if H != "auto":
            raise ValueError("H must be a number or 'auto'")
        levels = sorted({s.value for s in saddles})
        chosen = None
        for lev in levels:
            if separating_at(lev):
                chosen = lev
                break
        if chosen is None:
            raise ModelAssumptionError("no saddle separates two wells")
        H = chosen
        near = [s.value for s in saddles if abs(s.value - H) <= tol]
        if max(near) - min(near) > tol:
            raise ModelAssumptionError(f"saddle heights disagree: {near}")
    H = float(H)

    cls = _classes(minima, sides, H, tol, lambda m: m.value < H - tol)
    roots = sorted(set(cls.values()))
    members = {r: [k for k, c in cls.items() if c == r] for r in roots}
    # order wells by the coordinates of their lowest minimum
    def key(r):
        lowest = min(members[r], key=lambda k: (minima[k].value, tuple(minima[k].location)))
        low_val = minima[lowest].value
        deepest = [k for k in members[r] if minima[k].value <= low_val + tol]
        return tuple(min(tuple(minima[k].location) for k in deepest))
    roots.sort(key=key)
    well_of = {}
    wells = []
    for wid, r in enumerate(roots, start=1):
        ks = members[r]
        depth = min(minima[k].value for k in ks)
        deep = tuple(sorted((minima[k] for k in ks if minima[k].value <= depth + tol),
                            key=lambda c: tuple(c.location)))
        wells.append(Well(wid, deep, float(depth),
                          tuple(sorted((minima[k] for k in ks), key=lambda c: tuple(c.location)))))
        for k in ks:
            well_of[k] = wid

    links = []
    for s, (a, b) in sides:
        if abs(s.value - H) > tol or a not in well_of or b not in well_of:
            continue
        if well_of[a] == well_of[b]:
            continue
        i, j, v1 = saddle_sides(spec, s, minima,
                                [well_of.get(k, -1) for k in range(len(minima))])
        links.append(SaddleLink(s, i, j, v1))
    links.sort(key=lambda lk: (lk.i, lk.j, tuple(lk.saddle.location)))

    uf = _UnionFind(len(wells))
    for lk in links:
        uf.union(lk.i - 1, lk.j - 1)
    if len({uf.find(k) for k in range(len(wells))}) > 1:
        higher = sorted({s.value for s, (a, b) in sides
                         if s.value > H + tol and well_of.get(a) != well_of.get(b)})
        msg = f"connectivity failure: wells of {{U < {H}}} are not joined by saddles at height H"
        if higher:
            msg += f"; separating saddles exist only at unequal heights {higher}"
        raise ModelAssumptionError(msg)

    h = min(w.depth for w in wells)
    s_star = [w.id for w in wells if w.depth <= h + tol]
    if len(s_star) < 2 and not allow_single:
        raise ModelAssumptionError(
            f"|S_star| < 2: only well {s_star} attains the global minimum {h}")
    graph = LandscapeGraph(spec, H, float(h), wells, s_star, links,
                           critical_points=list(points), tol=tol)
    graph.valley_radius = choose_valley_radius(graph)
    return graph


# ---------------------------------------------------------------------------
# valleys

def _first_crossing(spec, m, u, level, rmax):
    """Smallest r in (0, rmax] with U(m + r u) >= level, or rmax."""
    f = lambda r: pot.eval(spec, m + r * u) - level
    n = 4000
    prev = 0.0
    for k in range(1, n + 1):
        r = rmax * k / n
        if f(r) >= 0.0:
            return brentq(f, prev, r, xtol=1e-14, rtol=1e-14)
        prev = r
    return rmax


def choose_valley_radius(landscape: LandscapeGraph, n_dirs: int = 720) -> float:
    """Half the smallest of: distance from a deepest minimum to any other critical
    point, and distance to the boundary of its component of {U < H - a}.

    ``a`` is half the gap between H and the largest critical value below H.
    """
    spec = landscape.spec
    H = landscape.H
    below = [c.value for c in landscape.critical_points if c.value < H - landscape.tol]
    a = 0.5 * (H - max(below))
    level = H - a
    span = max(hi - lo for lo, hi in spec.box)
    if spec.dim == 1:
        dirs = [np.array([-1.0]), np.array([1.0])]
    else:
        th = np.arange(n_dirs) * (2 * math.pi / n_dirs)
        dirs = [np.array([math.cos(t), math.sin(t)]) for t in th]
    best = math.inf
    for i in landscape.s_star:
        for m in landscape.well(i).minima:
            for c in landscape.critical_points:
                d = float(np.linalg.norm(c.location - m.location))
                if d > 1e-12:
                    best = min(best, d)
            for u in dirs:
                best = min(best, _first_crossing(spec, m.location, u, level, 2 * span))
    return 0.5 * best


@njit(cache=True, inline="always")
def _locate(centers, ids, r0, x):
    r2 = r0 * r0
    for k in range(centers.shape[0]):
        s = 0.0
        for a in range(x.shape[0]):
            t = x[a] - centers[k, a]
            s += t * t
        if s < r2:
            return ids[k]
    return 0


def locate(landscape: LandscapeGraph, x) -> int:
    """Valley id containing x, or ``DELTA`` (0) if x lies outside every open ball."""
    centers, ids = landscape.valley_centers()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return int(_locate(centers, ids, landscape.valley_radius, x))


def analyze(spec: pot.PotentialSpec, H="auto", grid_density: int = 64, tol: float = 1e-9,
            allow_single: bool = False) -> LandscapeGraph:
    """Critical points plus well decomposition in one call."""
    pts = find_critical_points(spec, grid_density)
    return build_landscape(spec, pts, H=H, tol=tol, allow_single=allow_single)


def flood_fill_components(spec: pot.PotentialSpec, H: float, n: int = 801) -> int:
    """Number of connected components of {U < H} on a uniform grid over the box.

    Independent cross-check of the union-find well count.
    """
    from scipy import ndimage

    axes = [np.linspace(lo, hi, n) for lo, hi in spec.box]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    mask = (pot.eval_many(spec, X) < H).reshape(mesh[0].shape)
    _, count = ndimage.label(mask)
    return int(count)
