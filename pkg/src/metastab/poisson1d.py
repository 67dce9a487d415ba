"""Exact one-dimensional solve of the Poisson problem on the deepest valleys.

Solves theta eps phi'' - theta U' phi' = sum_i a(i) (L_y f)(i) 1_{V_i} on the
bounding interval through its integrating-factor form. Writing
Ftil(x) = sum_i a(i) g(i) int_{V_i, < x} exp(-(U - h)/eps) with g = L_y f,

    phi'(x) = exp((U(x) - H)/eps) Ftil(x) / eps,

and phi follows from a second quadrature. All weights are taken relative to h
(for the valley masses) or to H (for the flux), which keeps every exponential
in range at small eps: the flux factor exp((U - H)/eps) is only ever evaluated
where Ftil is nonzero, i.e. between the first and last valley, where U < H.

Both quadratures use the same composite Gauss-Legendre rule on panels of width
at most sqrt(eps)/40 whose edges include every valley endpoint, so the
compatibility sum Ftil(+inf) = 0 holds to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate

from . import potential as pot
from .chains import ChainY, beta_matrix, build_chain_x, build_chain_y
from .errors import ModelAssumptionError, UsageError
from .landscape import LandscapeGraph

__all__ = [
    "PoissonProblem",
    "PoissonSolution",
    "reduced_chain",
    "basis_function",
    "solve",
    "plateau_report",
    "hitting_bound_demo",
]

GL_ORDER = 12
POINTS_PER_SQRT_EPS = 40
COMPAT_TOL = 1e-10

_tau, _wts = np.polynomial.legendre.leggauss(GL_ORDER)


def reduced_chain(landscape: LandscapeGraph) -> ChainY:
    cx = build_chain_x(landscape)
    return build_chain_y(landscape, beta_matrix(cx, landscape.s_star))


def basis_function(chain: ChainY, i: int, j: int) -> np.ndarray:
    """The f with L_y f = (nu_star/nu_i) e_i - (nu_star/nu_j) e_j and f(i) = 0."""
    a, b = chain.index(i), chain.index(j)
    if a == b:
        raise UsageError("basis function needs two distinct states")
    rhs = np.zeros(chain.n)
    rhs[a] = chain.nu_star / chain.nu[a]
    rhs[b] = -chain.nu_star / chain.nu[b]
    L = chain.generator()
    keep = [k for k in range(chain.n) if k != a]
    sol, *_ = np.linalg.lstsq(L[:, keep], rhs, rcond=None)
    f = np.zeros(chain.n)
    f[keep] = sol
    return f


@dataclass(frozen=True)
class PoissonProblem:
    """Right-hand side data: potential, noise level and f on S_star.

    ``f`` is ordered like ``landscape.s_star``.
    """

    landscape: LandscapeGraph
    epsilon: float
    f: np.ndarray
    chain: ChainY | None = None

    def __post_init__(self):
        if self.landscape.spec.dim != 1:
            raise UsageError("the Poisson solve is one-dimensional")
        if not 0 < self.epsilon < 1:
            raise UsageError("epsilon must lie in (0, 1)")
        f = np.asarray(self.f, dtype=float)
        if f.shape != (len(self.landscape.s_star),):
            raise UsageError("f must have one value per deepest well")
        object.__setattr__(self, "f", f)
        if self.chain is None:
            object.__setattr__(self, "chain", reduced_chain(self.landscape))

    @property
    def g(self) -> np.ndarray:
        """(L_y f)(i) for i in S_star."""
        return self.chain.generator() @ self.f

    def valleys(self):
        """(well id, lo, hi) for every valley interval, left to right."""
        lg = self.landscape
        r0 = lg.valley_radius
        out = []
        for i in lg.s_star:
            for m in lg.well(i).minima:
                x = float(m.location[0])
                out.append((i, x - r0, x + r0))
        return sorted(out, key=lambda t: t[1])


@dataclass
class PoissonSolution:
    """Solution on the panel edges, plus what is needed to evaluate it anywhere.

    ``phi`` is already centred; ``c`` is the constant that was subtracted.
    """

    problem: PoissonProblem
    grid: np.ndarray
    phi: np.ndarray
    a: np.ndarray
    valley_mass: np.ndarray
    Zhat: float
    energy: float
    p: np.ndarray
    lambda_eps: float
    c: float
    compatibility: float
    plateau: dict = field(default_factory=dict)
    _F_edges: np.ndarray = field(default=None, repr=False)
    _rhs_panel: np.ndarray = field(default=None, repr=False)
    _phi_raw: np.ndarray = field(default=None, repr=False)
    _zero_from: float = field(default=math.inf, repr=False)

    # -- evaluation ---------------------------------------------------------
    def _panel(self, x):
        k = np.searchsorted(self.grid, x, side="right") - 1
        return np.clip(k, 0, len(self.grid) - 2)

    def _weight(self, x, k):
        """RHS(x) exp(-(U(x) - h)/eps) on panel k."""
        pr = self.problem
        u = pot.eval_many(pr.landscape.spec, np.asarray(x, dtype=float).ravel()).reshape(np.shape(x))
        return self._rhs_panel[k] * np.exp(-(u - pr.landscape.h) / pr.epsilon)

    def flux(self, x) -> np.ndarray:
        """Ftil(x), by Gauss-Legendre on [left edge of its panel, x]."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = self._panel(x)
        x0 = self.grid[k]
        half = 0.5 * (x - x0)
        nodes = x0[:, None] + half[:, None] * (_tau[None, :] + 1.0)
        w = self._weight(nodes, np.repeat(k[:, None], GL_ORDER, axis=1))
        F = self._F_edges[k] + half * (w @ _wts)
        F[x >= self._zero_from] = 0.0
        return F

    def dphi(self, x) -> np.ndarray:
        """phi'(x) = exp((U - H)/eps) Ftil / eps."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pr = self.problem
        F = self.flux(x)
        out = np.zeros_like(F)
        nz = F != 0.0
        if np.any(nz):
            u = pot.eval_many(pr.landscape.spec, x[nz])
            out[nz] = np.exp((u - pr.landscape.H) / pr.epsilon) * F[nz] / pr.epsilon
        return out

    def __call__(self, x) -> np.ndarray:
        """Centred phi(x)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = self._panel(x)
        x0 = self.grid[k]
        half = 0.5 * (x - x0)
        nodes = x0[:, None] + half[:, None] * (_tau[None, :] + 1.0)
        d = self.dphi(nodes.ravel()).reshape(nodes.shape)
        return self._phi_raw[k] + half * (d @ _wts) - self.c

    def residual(self, x) -> np.ndarray:
        """|theta L phi - RHS| at x, with the operator in divergence form.

        theta (eps phi'' - U' phi') = theta eps exp(U/eps) (exp(-U/eps) phi')'
        = exp((U - h)/eps) Ftil'(x); Ftil' is taken from a polynomial
        interpolant of Ftil through the Gauss nodes of the panel containing x.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pr = self.problem
        out = np.empty_like(x)
        for n, xi in enumerate(x):
            k = int(self._panel(xi))
            lo, hi = self.grid[k], self.grid[k + 1]
            nodes = np.concatenate([[lo], 0.5 * (lo + hi) + 0.5 * (hi - lo) * _tau, [hi]])
            F = self.flux(nodes)
            # the interpolant of constant data is constant; skip the rounding noise
            dF = 0.0 if np.ptp(F) == 0.0 else \
                float(interpolate.BarycentricInterpolator(nodes, F).derivative(xi))
            lhs = 0.0
            if dF != 0.0:
                u = pot.eval(pr.landscape.spec, [xi])
                lhs = math.copysign(math.exp((u - pr.landscape.h) / pr.epsilon
                                             + math.log(abs(float(dF)))), float(dF))
            out[n] = abs(lhs - self._rhs_panel[k])
        return out

    @property
    def rhs_sup(self) -> float:
        return float(np.max(np.abs(self._rhs_panel)))


def _edges(problem: PoissonProblem):
    (a, b) = problem.landscape.spec.box[0]
    step = math.sqrt(problem.epsilon) / POINTS_PER_SQRT_EPS
    n = int(math.ceil((b - a) / step))
    pts = np.linspace(a, b, n + 1)
    cuts = [t for _, lo, hi in problem.valleys() for t in (lo, hi)]
    return np.unique(np.concatenate([pts, cuts]))


def solve(problem: PoissonProblem) -> PoissonSolution:
    """Solve the 1D Poisson problem by two nested Gauss-Legendre quadratures.

    Raises
    ------
    ModelAssumptionError
        If the compatibility sum is off by more than 1e-10 of its scale.
    """
    lg = problem.landscape
    spec = lg.spec
    eps, H, h = problem.epsilon, lg.H, lg.h
    grid = _edges(problem)
    K = len(grid) - 1
    left, right = grid[:-1], grid[1:]
    half = 0.5 * (right - left)
    mid = 0.5 * (left + right)
    nodes = mid[:, None] + half[:, None] * _tau[None, :]
    U = pot.eval_many(spec, nodes.ravel()).reshape(nodes.shape)
    gibbs = np.exp(-(U - h) / eps)
    mass = half * (gibbs @ _wts)                        # per panel
    Zhat = float(mass.sum())

    star = list(lg.s_star)
    valley_of_panel = np.zeros(K, dtype=int)            # 0 = outside every valley
    for i, lo, hi in problem.valleys():
        valley_of_panel[(mid > lo) & (mid < hi)] = i
    vmass = np.array([mass[valley_of_panel == i].sum() for i in star])
    nu = problem.chain.nu
    a_eps = math.sqrt(2 * math.pi * eps) * nu / vmass
    g = problem.g
    rhs_panel = np.zeros(K)
    for n, i in enumerate(star):
        rhs_panel[valley_of_panel == i] = a_eps[n] * g[n]

    inc = rhs_panel * mass
    F_edges = np.concatenate([[0.0], np.cumsum(inc)])
    scale = float(np.sum(np.abs(inc))) or 1.0
    compat = float(F_edges[-1])
    if abs(compat) > COMPAT_TOL * scale:
        raise ModelAssumptionError(f"compatibility violated: sum = {compat:.3e} (scale {scale:.3e})")
    last_hi = max(hi for _, lo, hi in problem.valleys())
    first_lo = min(lo for _, lo, hi in problem.valleys())
    zero_from = last_hi
    F_edges[grid >= zero_from] = 0.0
    F_edges[grid <= first_lo] = 0.0

    sol = PoissonSolution(problem, grid, np.empty(0), a_eps, vmass, Zhat, 0.0, np.zeros(len(star)),
                          0.0, 0.0, compat, _F_edges=F_edges, _rhs_panel=rhs_panel,
                          _phi_raw=np.zeros(K + 1), _zero_from=zero_from)

    # flux and phi' at the panel nodes
    Fn = sol.flux(nodes.ravel()).reshape(nodes.shape)
    dphi = np.zeros_like(Fn)
    nz = Fn != 0.0
    dphi[nz] = np.exp((U[nz] - H) / eps) * Fn[nz] / eps
    phi_raw = np.concatenate([[0.0], np.cumsum(half * (dphi @ _wts))])
    sol._phi_raw = phi_raw

    # theta D(phi) = (1 / (eps Zhat)) int exp((U - H)/eps) Ftil^2
    ener = np.zeros_like(Fn)
    ener[nz] = np.exp((U[nz] - H) / eps) * Fn[nz] ** 2
    energy = float(np.sum(half * (ener @ _wts))) / (eps * Zhat)

    # phi at the nodes of valley panels, for the valley averages
    vp = np.nonzero(valley_of_panel)[0]
    phi_nodes = sol(nodes[vp].ravel()).reshape(len(vp), GL_ORDER)  # c is still 0 here
    pm = np.zeros(len(star))
    for n, i in enumerate(star):
        sel = valley_of_panel[vp] == i
        pm[n] = float(np.sum(half[vp][sel] * ((phi_nodes[sel] * gibbs[vp][sel]) @ _wts)))
    plateau_mean_raw = pm / vmass
    p = a_eps * g * pm / Zhat
    lam = -0.5 * float(p.sum())
    c = float(np.mean(plateau_mean_raw - problem.f))

    sol.phi = phi_raw - c
    sol.c = c
    sol.energy = energy
    sol.p = p
    sol.lambda_eps = lam
    sol.plateau = plateau_report(sol)
    return sol


def plateau_report(solution: PoissonSolution) -> dict:
    """Per deepest well: sup over grid points in V_i of |phi - f(i)| and the
    mu-weighted valley mean of phi. Non-deepest wells report phi at their
    lowest minimum under ``"other_wells"``."""
    pr = solution.problem
    lg = pr.landscape
    r0 = lg.valley_radius
    out = {}
    for n, i in enumerate(lg.s_star):
        sup = 0.0
        for m in lg.well(i).minima:
            x = float(m.location[0])
            sel = np.abs(solution.grid - x) < r0
            if np.any(sel):
                sup = max(sup, float(np.max(np.abs(solution.phi[sel] - pr.f[n]))))
        out[i] = {"f": float(pr.f[n]), "sup_deviation": sup}
    # valley means straight from the solution
    for n, i in enumerate(lg.s_star):
        xs = np.concatenate([np.linspace(float(m.location[0]) - r0, float(m.location[0]) + r0, 201)
                             for m in lg.well(i).minima])
        u = pot.eval_many(lg.spec, xs)
        w = np.exp(-(u - lg.h) / pr.epsilon)
        out[i]["mean"] = float(np.sum(solution(xs) * w) / np.sum(w))
    others = {}
    for w in lg.wells:
        if w.id not in lg.s_star:
            others[w.id] = float(solution([float(w.minima[0].location[0])])[0])
    out["other_wells"] = others
    return out


def hitting_bound_demo(solution: PoissonSolution, a: float) -> dict:
    """Ingredients of the short-time bound P[H <= a theta] <= C a + o(1).

    Requires f = b_i: 0 on one deepest well, 1 on the others. By Dynkin's
    formula for phi(x(t)) started in V_i and stopped at the first visit to the
    other valleys, the probability is at most
    (2 sup_{V_i}|phi| + a sup|RHS|) / (1 - max_j sup_{V_j}|phi - 1|).
    """
    pr = solution.problem
    f = pr.f
    if len(f) < 2:
        raise UsageError("needs |S_star| >= 2")
    zeros = np.nonzero(f == 0.0)[0]
    if len(zeros) != 1 or not np.all(np.delete(f, zeros) == 1.0):
        raise UsageError("f must be 0 on exactly one deepest well and 1 on the others")
    if a < 0:
        raise UsageError("a must be nonnegative")
    i = pr.landscape.s_star[int(zeros[0])]
    rep = solution.plateau
    sup_i = rep[i]["sup_deviation"]
    other = max(rep[j]["sup_deviation"] for j in pr.landscape.s_star if j != i)
    denom = 1.0 - other
    C = solution.rhs_sup / denom
    small = 2.0 * sup_i / denom
    return {"well": i, "a": float(a), "sup_phi_on_valley": sup_i, "rhs_sup": solution.rhs_sup,
            "C": C, "o_term": small, "bound": C * a + small}
