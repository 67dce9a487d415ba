"""Reduced Markov chains on the wells (chain x) and on the deepest wells (chain y).

States are the 1-based well ids of a landscape. Internally vectors are indexed
by position, ``id - 1`` for chain x and the position in ``s_star`` for chain y.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ModelAssumptionError, UsageError
from .landscape import SADDLE, CriticalPoint, LandscapeGraph

__all__ = [
    "MAX_STATES",
    "ChainX",
    "ChainY",
    "omega_of_saddle",
    "build_chain_x",
    "equilibrium_potential",
    "capacity",
    "dirichlet_x",
    "beta_matrix",
    "build_chain_y",
    "harmonic_extension",
    "dirichlet_y",
]

MAX_STATES = 64


@dataclass(frozen=True)
class ChainX:
    """Reversible chain on S with symmetric conductances omega."""

    omega: np.ndarray

    def __post_init__(self):
        w = np.array(self.omega, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise UsageError("omega must be square")
        if w.shape[0] > MAX_STATES:
            raise UsageError(f"at most {MAX_STATES} states are supported")
        if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0) or np.any(w < 0):
            raise UsageError("omega must be symmetric, nonnegative, with zero diagonal")
        if np.any(w.sum(axis=1) <= 0):
            raise ModelAssumptionError("some omega_i = 0: the wells are not connected")
        object.__setattr__(self, "omega", w)

    @property
    def K(self) -> int:
        return self.omega.shape[0]

    @property
    def omega_i(self) -> np.ndarray:
        return self.omega.sum(axis=1)

    @property
    def mu(self) -> np.ndarray:
        wi = self.omega_i
        return wi / wi.sum()

    def generator(self) -> np.ndarray:
        """L_x with off-diagonal rates omega_ij / mu(i)."""
        Q = self.omega / self.mu[:, None]
        np.fill_diagonal(Q, -Q.sum(axis=1))
        return Q


@dataclass(frozen=True)
class ChainY:
    """Reversible chain on S_star with conductances beta and weights nu."""

    s_star: tuple
    beta: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        nu = np.array(self.nu, dtype=float)
        if b.shape != (len(self.s_star), len(self.s_star)) or nu.shape != (len(self.s_star),):
            raise UsageError("beta / nu shapes do not match s_star")
        if not np.allclose(b, b.T, rtol=0, atol=0):
            raise UsageError("beta must be symmetric")
        if np.any(nu <= 0):
            raise UsageError("nu must be positive")
        object.__setattr__(self, "s_star", tuple(int(i) for i in self.s_star))
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "nu", nu)

    @property
    def n(self) -> int:
        return len(self.s_star)

    @property
    def nu_star(self) -> float:
        return float(self.nu.sum())

    @property
    def mu_star(self) -> np.ndarray:
        return self.nu / self.nu.sum()

    def rates(self) -> np.ndarray:
        """Jump rates beta_ij / nu_i (zero diagonal)."""
        return self.beta / self.nu[:, None]

    def generator(self) -> np.ndarray:
        Q = self.rates()
        np.fill_diagonal(Q, -Q.sum(axis=1))
        return Q

    def mean_holding(self) -> np.ndarray:
        """nu_i / sum_j beta_ij."""
        return self.nu / self.beta.sum(axis=1)

    def jump_probabilities(self) -> np.ndarray:
        return self.beta / self.beta.sum(axis=1)[:, None]

    def index(self, well_id: int) -> int:
        return self.s_star.index(int(well_id))


def omega_of_saddle(sigma: CriticalPoint) -> float:
    """lambda / (2 pi sqrt(-det Hess U(sigma))) for an index-1 saddle."""
    if sigma.kind != SADDLE:
        raise UsageError("omega_of_saddle needs an index-1 saddle")
    return sigma.lam / (2.0 * math.pi * math.sqrt(-sigma.det))


def build_chain_x(landscape: LandscapeGraph) -> ChainX:
    """omega_ij = sum of omega_sigma over the saddles joining wells i and j."""
    K = landscape.K
    w = np.zeros((K, K))
    for lk in landscape.links:
        o = omega_of_saddle(lk.saddle)
        w[lk.i - 1, lk.j - 1] += o
        w[lk.j - 1, lk.i - 1] += o
    return ChainX(w)


def _index_set(ids, K, name):
    idx = sorted({int(i) - 1 for i in ids})
    if any(i < 0 or i >= K for i in idx):
        raise UsageError(f"{name} contains ids outside 1..{K}")
    return idx


def equilibrium_potential(chain: ChainX, A, B) -> np.ndarray:
    """h_{A,B}: harmonic off A and B, 1 on A, 0 on B.

    ``A`` and ``B`` are collections of 1-based state ids. An empty ``B`` gives
    the constant 1 (the solution with no absorbing set).
    """
    K = chain.K
    a = _index_set(A, K, "A")
    b = _index_set(B, K, "B")
    if not a:
        raise UsageError("A must be nonempty")
    if set(a) & set(b):
        raise UsageError("A and B must be disjoint")
    h = np.zeros(K)
    if not b:
        return np.ones(K)
    h[a] = 1.0
    interior = [i for i in range(K) if i not in a and i not in b]
    if interior:
        L = chain.generator()
        M = L[np.ix_(interior, interior)]
        rhs = -L[np.ix_(interior, a)].sum(axis=1)
        try:
            h[interior] = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise ModelAssumptionError("singular interior block: chain is not irreducible") from exc
    return h


def dirichlet_x(chain: ChainX, f, g) -> float:
    """(1/2) sum_ij omega_ij (f_j - f_i)(g_j - g_i)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    df = f[None, :] - f[:, None]
    dg = g[None, :] - g[:, None]
    return 0.5 * float(np.sum(chain.omega * df * dg))


def capacity(chain: ChainX, A, B) -> float:
    """cap_x(A, B) = D_x(h_AB, h_AB), with cap(A, {}) = 0."""
    if not list(B):
        return 0.0
    h = equilibrium_potential(chain, A, B)
    return dirichlet_x(chain, h, h)


def beta_matrix(chain: ChainX, s_star) -> np.ndarray:
    """Conductances between deepest wells from capacities by inclusion-exclusion.

    Negative entries are reported with a warning, never clamped.
    """
    s_star = [int(i) for i in s_star]
    if len(s_star) < 2:
        raise UsageError("beta needs |S_star| >= 2")
    n = len(s_star)
    single = [capacity(chain, [i], [k for k in s_star if k != i]) for i in s_star]
    beta = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            i, j = s_star[a], s_star[b]
            rest = [k for k in s_star if k not in (i, j)]
            pair = capacity(chain, [i, j], rest)
            beta[a, b] = beta[b, a] = 0.5 * (single[a] + single[b] - pair)
    scale = max(1.0, float(np.abs(beta).max()))
    neg = np.argwhere(beta < -1e-12 * scale)
    if neg.size:
        warnings.warn(f"negative beta entries at {[(s_star[a], s_star[b]) for a, b in neg]}",
                      RuntimeWarning, stacklevel=2)
    return beta


def build_chain_y(landscape: LandscapeGraph, beta: np.ndarray) -> ChainY:
    """nu_i = sum over the deepest minima m of well i of det(Hess U(m))^(-1/2)."""
    nu = np.array([sum(1.0 / math.sqrt(m.det) for m in landscape.well(i).minima)
                   for i in landscape.s_star])
    return ChainY(tuple(landscape.s_star), beta, nu)


def harmonic_extension(chain: ChainX, s_star, u) -> np.ndarray:
    """Extend u from S_star to S so that L_x vanishes off S_star."""
    K = chain.K
    star = [int(i) - 1 for i in s_star]
    u = np.asarray(u, dtype=float)
    if u.shape != (len(star),):
        raise UsageError("u must have one value per element of s_star")
    out = np.zeros(K)
    out[star] = u
    interior = [i for i in range(K) if i not in star]
    if interior:
        L = chain.generator()
        M = L[np.ix_(interior, interior)]
        rhs = -L[np.ix_(interior, star)] @ u
        out[interior] = np.linalg.solve(M, rhs)
    return out


def dirichlet_y(chain: ChainY, f, g) -> float:
    """(1 / (2 nu_star)) sum_ij beta_ij (f_j - f_i)(g_j - g_i)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    df = f[None, :] - f[:, None]
    dg = g[None, :] - g[:, None]
    return float(np.sum(chain.beta * df * dg)) / (2.0 * chain.nu_star)
