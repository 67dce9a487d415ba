"""Quadrature checks of the small-noise asymptotics.

Covers the Laplace asymptotics of the partition function and of the valley
masses, and the saddle test functions: the boxes around each saddle, the
one-dimensional Gaussian profile f across a saddle, the global test function
F^q built from a vector q on the wells, its Dirichlet energy and the generator
residual of f.

All integrals of Gibbs weights are computed relative to the global minimum,
i.e. with ``exp(-(U - h) / eps)``, so nothing overflows for small eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import potential as pot
from .chains import build_chain_x, dirichlet_x, omega_of_saddle
from .errors import ConvergenceError, ModelAssumptionError, UsageError
from .landscape import CriticalPoint, LandscapeGraph, descend

__all__ = [
    "default_J",
    "EpsilonScale",
    "SaddleBox",
    "TestFunction",
    "PartitionResult",
    "ValleyMeasures",
    "EnergyResult",
    "partition_function",
    "valley_measure",
    "saddle_box",
    "build_test_function",
    "dirichlet_energy",
    "dirichlet_energy_gaussian",
    "generator_residual",
    "normalizer",
]

QUAD_RTOL = 1e-8
QUAD_LIMIT = 400


def default_J(d: int) -> float:
    """Smallest integer strictly above sqrt(12 d), plus one."""
    return float(math.ceil(math.sqrt(12 * d)) + 1)


@dataclass(frozen=True)
class EpsilonScale:
    """Noise level with the derived scales delta(eps) and theta(eps).

    Parameters
    ----------
    epsilon : float
        Noise level in (0, 1).
    H, h : float
        Saddle height and global minimum value.
    d : int
        Dimension.
    J : float, optional
        Box constant; must exceed sqrt(12 d). Defaults to ``default_J(d)``.
    """

    epsilon: float
    H: float
    h: float
    d: int = 1
    J: float | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise UsageError("epsilon must lie in (0, 1)")
        J = default_J(self.d) if self.J is None else float(self.J)
        if not J > math.sqrt(12 * self.d):
            raise UsageError(f"J must exceed sqrt(12 d) = {math.sqrt(12 * self.d):.6g}")
        object.__setattr__(self, "J", J)

    @classmethod
    def for_landscape(cls, landscape: LandscapeGraph, epsilon: float, J=None):
        return cls(epsilon, landscape.H, landscape.h, landscape.spec.dim, J)

    @property
    def delta(self) -> float:
        return math.sqrt(self.epsilon * math.log(1.0 / self.epsilon))

    @property
    def log_theta(self) -> float:
        return (self.H - self.h) / self.epsilon

    @property
    def theta(self) -> float:
        return math.exp(self.log_theta)

    @property
    def level(self) -> float:
        """H + J^2 delta^2, the top of the enlarged sublevel set H^eps."""
        return self.H + (self.J * self.delta) ** 2


def normalizer(scale: EpsilonScale) -> float:
    """c_eps: Gaussian mass of the box across the saddle direction.

    Equal to erf(J sqrt(log(1/eps) / 2)); it does not depend on the saddle.
    """
    return math.erf(scale.J * math.sqrt(math.log(1.0 / scale.epsilon) / 2.0))


# ---------------------------------------------------------------------------
# quadrature helpers

def _scalar_u(spec):
    vfn = spec.kernels[0]
    p = spec.param_vector
    buf = np.empty(spec.dim)
    if spec.dim == 1:
        def u(x):
            buf[0] = x
            return vfn(p, buf)
    else:
        def u(x, y):
            buf[0] = x
            buf[1] = y
            return vfn(p, buf)
    return u


def _quad(f, a, b, points=None, args=()):
    pts = None
    if points is not None:
        pts = sorted({float(t) for t in points if a < t < b})
        pts = pts or None
    val, err, info = integrate.quad(f, a, b, args=args, points=pts, epsabs=0.0,
                                    epsrel=QUAD_RTOL, limit=QUAD_LIMIT, full_output=1)[:3]
    if abs(err) > 1e-6 * max(abs(val), 1e-300) and err > 1e-14:
        raise ConvergenceError(f"quadrature did not converge: value {val:.6g}, error {err:.3g}")
    return val


def _breaks(centers, width, a, b):
    """Panel breaks at each centre and at +-1, +-3, +-6 widths around it."""
    pts = []
    for c in centers:
        for k in (0.0, -1.0, 1.0, -3.0, 3.0, -6.0, 6.0):
            pts.append(c + k * width)
    return [t for t in pts if a < t < b]


def _crit_coords(spec, points, axis):
    if points is None:
        return []
    return [float(c.location[axis]) for c in points]


# ---------------------------------------------------------------------------
# partition function and valley masses

@dataclass(frozen=True)
class PartitionResult:
    """Partition function Z = integral of exp(-U/eps).

    ``scaled`` is Z exp(h/eps); ``tail`` estimates the scaled mass outside the
    bounding box (quadrature only).
    """

    method: str
    epsilon: float
    scaled: float
    h: float
    tail: float = 0.0

    @property
    def log_value(self) -> float:
        return math.log(self.scaled) - self.h / self.epsilon

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def partition_function(spec: pot.PotentialSpec, epsilon: float, method: str = "quadrature",
                       landscape: LandscapeGraph | None = None) -> PartitionResult:
    """Z_eps by adaptive Gauss-Kronrod quadrature or by the Laplace formula.

    Parameters
    ----------
    spec : PotentialSpec
        Potential; quadrature supports d <= 2.
    epsilon : float
        Noise level.
    method : {"quadrature", "laplace"}
        ``laplace`` returns (2 pi eps)^(d/2) exp(-h/eps) nu_star and needs a
        landscape.
    landscape : LandscapeGraph, optional
        Supplies h, the critical points used as panel breaks, and nu_star.
    """
    if epsilon <= 0:
        raise UsageError("epsilon must be positive")
    if method == "laplace":
        if landscape is None:
            raise UsageError("the Laplace formula needs a landscape")
        nu_star = sum(1.0 / math.sqrt(m.det) for i in landscape.s_star
                      for m in landscape.well(i).minima)
        return PartitionResult("laplace", epsilon,
                               (2 * math.pi * epsilon) ** (spec.dim / 2) * nu_star, landscape.h)
    if method != "quadrature":
        raise UsageError(f"unknown method {method!r}")
    if spec.dim > 2:
        raise UsageError("quadrature is supported for d <= 2 only")
    pts = landscape.critical_points if landscape is not None else None
    if landscape is not None:
        h = landscape.h
    else:
        h = _grid_min(spec)
    width = math.sqrt(epsilon)
    u = _scalar_u(spec)
    (a, b) = spec.box[0]
    if spec.dim == 1:
        def g(x):
            return math.exp(-(u(x) - h) / epsilon)
        brk = _breaks(_crit_coords(spec, pts, 0), width, a, b)
        inner = _quad(g, a, b, brk)
        tail = _quad(g, -np.inf, a) + _quad(g, b, np.inf)
        return PartitionResult("quadrature", epsilon, inner, h, tail)
    (c, d) = spec.box[1]
    bx = _breaks(_crit_coords(spec, pts, 0), width, a, b)
    by = _breaks(_crit_coords(spec, pts, 1), width, c, d)

    def g2(y, x):
        return math.exp(-(u(x, y) - h) / epsilon)

    def row(x):
        return _quad(g2, c, d, by, args=(x,))

    inner = _quad(row, a, b, bx)
    # Beyond the box the weight is below exp(-(min_boundary U - h)/eps); bound the
    # tail by that factor times the area of a shell that carries the confinement.
    ub = _boundary_min(spec)
    tail = math.exp(-(ub - h) / epsilon) * 4.0 * (b - a) * (d - c)
    return PartitionResult("quadrature", epsilon, inner, h, tail)


def _grid_min(spec, n=801):
    axes = [np.linspace(lo, hi, n if spec.dim == 1 else 201) for lo, hi in spec.box]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    return float(pot.eval_many(spec, X).min())


def _boundary_min(spec, n=2001):
    (a, b), (c, d) = spec.box
    s = np.linspace(0, 1, n)
    pts = np.concatenate([
        np.column_stack([a + (b - a) * s, np.full(n, c)]),
        np.column_stack([a + (b - a) * s, np.full(n, d)]),
        np.column_stack([np.full(n, a), c + (d - c) * s]),
        np.column_stack([np.full(n, b), c + (d - c) * s]),
    ])
    return float(pot.eval_many(spec, pts).min())


@dataclass(frozen=True)
class ValleyMeasures:
    """mu_eps of each valley V_i (i in S_star) and of its complement Delta."""

    epsilon: float
    valleys: dict
    delta: float
    Z: PartitionResult


def valley_measure(landscape: LandscapeGraph, epsilon: float,
                   Z: PartitionResult | None = None) -> ValleyMeasures:
    """mu_eps(V_i) for every i in S_star by quadrature over the valley balls.

    In d = 2 each ball is integrated in polar coordinates around its centre.
    The balls of a valley are disjoint because r0 is at most half the distance
    between critical points.
    """
    spec = landscape.spec
    if spec.dim > 2:
        raise UsageError("quadrature is supported for d <= 2 only")
    if Z is None:
        Z = partition_function(spec, epsilon, "quadrature", landscape)
    h = landscape.h
    r0 = landscape.valley_radius
    u = _scalar_u(spec)
    out = {}
    for i in landscape.s_star:
        mass = 0.0
        for m in landscape.well(i).minima:
            x0 = m.location
            w = math.sqrt(epsilon / float(m.eigenvalues[-1]))
            if spec.dim == 1:
                def g(x):
                    return math.exp(-(u(x) - h) / epsilon)
                mass += _quad(g, x0[0] - r0, x0[0] + r0, _breaks([x0[0]], w, x0[0] - r0, x0[0] + r0))
            else:
                def gr(r, phi):
                    return r * math.exp(-(u(x0[0] + r * math.cos(phi), x0[1] + r * math.sin(phi))
                                          - h) / epsilon)

                def ring(phi):
                    return _quad(gr, 0.0, r0, [w, 3 * w, 6 * w], args=(phi,))
                mass += _quad(ring, 0.0, 2 * math.pi)
        out[i] = mass / Z.scaled
    return ValleyMeasures(epsilon, out, 1.0 - sum(out.values()), Z)


# ---------------------------------------------------------------------------
# saddle boxes and test functions

@dataclass(frozen=True)
class SaddleBox:
    """Box around a saddle in its eigenbasis.

    ``basis`` has the oriented v1 as its first column; ``half_widths`` are
    J delta / sqrt(lambda_1) along v1 and 2 J delta / sqrt(lambda_k) for the
    positive eigenvalues lambda_k.
    """

    sigma: CriticalPoint
    basis: np.ndarray
    half_widths: np.ndarray
    i: int = 0
    j: int = 0

    @property
    def center(self) -> np.ndarray:
        return self.sigma.location

    @property
    def lam(self) -> float:
        return self.sigma.lam

    def coords(self, x) -> np.ndarray:
        return self.basis.T @ (np.asarray(x, dtype=float) - self.center)

    def contains(self, x) -> bool:
        return bool(np.all(np.abs(self.coords(x)) <= self.half_widths))

    def point(self, alpha) -> np.ndarray:
        return self.center + self.basis @ np.asarray(alpha, dtype=float)

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(self.half_widths))


def saddle_box(sigma: CriticalPoint, v1, scale: EpsilonScale, i: int = 0, j: int = 0) -> SaddleBox:
    """Box around ``sigma`` with its first axis along ``v1``."""
    v1 = np.asarray(v1, dtype=float)
    basis = np.array(sigma.eigenvectors, dtype=float).copy()
    if float(basis[:, 0] @ v1) < 0:
        basis[:, 0] = -basis[:, 0]
    ev = np.asarray(sigma.eigenvalues, dtype=float)
    jd = scale.J * scale.delta
    hw = np.empty(ev.shape[0])
    hw[0] = jd / math.sqrt(-ev[0])
    hw[1:] = 2.0 * jd / np.sqrt(ev[1:])
    return SaddleBox(sigma, basis, hw, i, j)


def _profile(alpha1, lam, scale, c):
    """f across the saddle as a function of the v1 coordinate."""
    eps = scale.epsilon
    a = scale.J * scale.delta / math.sqrt(lam)
    t = min(max(alpha1, -a), a)
    lo = special.ndtr(-a * math.sqrt(lam / eps))
    return (special.ndtr(t * math.sqrt(lam / eps)) - lo) / c


def _profile_slope(alpha1, lam, scale, c):
    eps = scale.epsilon
    return math.sqrt(lam / (2 * math.pi * eps)) * math.exp(-lam * alpha1 ** 2 / (2 * eps)) / c


@dataclass
class TestFunction:
    """F^q: q(i) on the part of well i inside H^eps, the Gaussian profile
    across each saddle box, and a C^1 cut-off in U above H^eps.
    """

    __test__ = False  # not a pytest class

    q: np.ndarray
    landscape: LandscapeGraph
    scale: EpsilonScale
    c: float
    boxes: list = field(default_factory=list)

    def f(self, box: SaddleBox, x) -> float:
        """f_eps^sigma at x (clamped to 0 / 1 beyond the box faces along v1)."""
        return _profile(float(box.coords(x)[0]), box.lam, self.scale, self.c)

    def cutoff(self, u: float) -> float:
        """1 on H^eps, 0 above H + 1.25 J^2 delta^2, C^1 in between."""
        lo = self.scale.level
        hi = self.scale.H + 1.25 * (self.scale.J * self.scale.delta) ** 2
        if u <= lo:
            return 1.0
        if u >= hi:
            return 0.0
        t = (u - lo) / (hi - lo)
        return 1.0 - t * t * (3.0 - 2.0 * t)

    def well_of(self, x) -> int:
        """Well reached by steepest descent from x."""
        end, _ = descend(self.landscape.spec, x)
        best, best_d = 0, math.inf
        for w in self.landscape.wells:
            for m in w.all_minima or w.minima:
                dist = float(np.linalg.norm(end - m.location))
                if dist < best_d:
                    best, best_d = w.id, dist
        if best_d > 1e-4:
            raise ConvergenceError("descent did not reach a known minimum")
        return best

    def raw(self, x) -> float:
        """F^q without the cut-off."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        for b in self.boxes:
            if b.contains(x):
                qi, qj = self.q[b.i - 1], self.q[b.j - 1]
                return float(qi + (qj - qi) * self.f(b, x))
        return float(self.q[self.well_of(x) - 1])

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.cutoff(pot.eval(self.landscape.spec, x)) * self.raw(x)

    def grad_bound(self) -> float:
        """Upper bound on |grad F| over the support of the cut-off."""
        dq = max((abs(self.q[b.j - 1] - self.q[b.i - 1]) for b in self.boxes), default=0.0)
        slope = max((math.sqrt(b.lam / (2 * math.pi * self.scale.epsilon)) / self.c
                     for b in self.boxes), default=0.0)
        width = 0.25 * (self.scale.J * self.scale.delta) ** 2
        gmax = _grad_sup(self.landscape.spec, self.scale.H + 1.25 * (self.scale.J * self.scale.delta) ** 2)
        return dq * slope + 1.5 * gmax / width * float(np.max(np.abs(self.q)))


def _grad_sup(spec, level, n=401):
    axes = [np.linspace(lo, hi, n if spec.dim == 1 else 161) for lo, hi in spec.box]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    U = pot.eval_many(spec, X)
    sel = X[U <= level]
    return max((float(np.linalg.norm(pot.grad(spec, x))) for x in sel), default=0.0)


def build_test_function(q, landscape: LandscapeGraph, scale: EpsilonScale,
                        check_faces: bool = True) -> TestFunction:
    """F^q for a vector q on the wells.

    Raises
    ------
    ModelAssumptionError
        If two saddle boxes overlap; the message gives the largest admissible
        eps found by bisection.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (landscape.K,):
        raise UsageError(f"q must have one entry per well ({landscape.K})")
    boxes = [saddle_box(lk.saddle, lk.v1, scale, lk.i, lk.j) for lk in landscape.links]
    if _overlap(boxes):
        raise ModelAssumptionError(
            f"saddle boxes overlap at eps={scale.epsilon}; largest admissible eps is about "
            f"{max_admissible_epsilon(landscape, scale.J):.4g}")
    tf = TestFunction(q, landscape, scale, normalizer(scale), boxes)
    if check_faces and landscape.spec.dim >= 2:
        for b in boxes:
            m = transverse_face_minimum(landscape.spec, b, scale)
            if m < 1.4:
                raise ModelAssumptionError(
                    f"U - H on the transverse faces of the box at {list(b.center)} reaches "
                    f"{m:.3g} J^2 delta^2 < 1.4 J^2 delta^2")
    return tf


def _overlap(boxes) -> bool:
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            if _boxes_intersect(boxes[a], boxes[b]):
                return True
    return False


def _boxes_intersect(A: SaddleBox, B: SaddleBox) -> bool:
    """Separating-axis test for two oriented boxes (any dimension <= 2)."""
    axes = list(A.basis.T) + list(B.basis.T)
    d = B.center - A.center
    for n in axes:
        ra = float(np.sum(A.half_widths * np.abs(A.basis.T @ n)))
        rb = float(np.sum(B.half_widths * np.abs(B.basis.T @ n)))
        if abs(float(d @ n)) > ra + rb:
            return False
    return True


def max_admissible_epsilon(landscape: LandscapeGraph, J=None) -> float:
    """Largest eps for which the saddle boxes are disjoint (bisection).

    delta(eps) = sqrt(eps log(1/eps)) increases only up to eps = 1/e, so the
    search runs on (0, 1/e]; a return value of 1/e means no overlap anywhere.
    """
    def ok(eps):
        s = EpsilonScale.for_landscape(landscape, eps, J)
        return not _overlap([saddle_box(lk.saddle, lk.v1, s) for lk in landscape.links])
    lo, hi = 1e-12, math.exp(-1.0)
    if ok(hi):
        return hi
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def transverse_face_minimum(spec, box: SaddleBox, scale: EpsilonScale, n: int = 101) -> float:
    """min over sampled transverse faces of (U - H) / (J delta)^2."""
    if spec.dim < 2:
        return math.inf
    jd2 = (scale.J * scale.delta) ** 2
    best = math.inf
    for k in range(1, spec.dim):
        for sign in (-1.0, 1.0):
            for t in np.linspace(-1, 1, n):
                alpha = np.zeros(spec.dim)
                alpha[0] = t * box.half_widths[0]
                alpha[k] = sign * box.half_widths[k]
                best = min(best, (pot.eval(spec, box.point(alpha)) - scale.H) / jd2)
    return best


# ---------------------------------------------------------------------------
# Dirichlet energy and generator residual

@dataclass(frozen=True)
class EnergyResult:
    """theta eps int |grad F|^2 dmu, split into per-box quadratures and a bound
    on everything outside the boxes that the cut-off can touch."""

    value: float
    per_box: tuple
    remainder_bound: float
    target: float

    @property
    def ratio(self) -> float:
        return self.value / self.target if self.target else math.nan


def _box_integral(spec, box: SaddleBox, scale: EpsilonScale, weight):
    """int over the box of weight(alpha1) exp(-(U - H)/eps) d alpha."""
    u = _scalar_u(spec)
    eps, H = scale.epsilon, scale.H
    hw = box.half_widths
    s1 = math.sqrt(eps / box.lam)
    if spec.dim == 1:
        c0, e0 = box.center[0], box.basis[0, 0]

        def g(a1):
            return weight(a1) * math.exp(-(u(c0 + e0 * a1) - H) / eps)
        return _quad(g, -hw[0], hw[0], _breaks([0.0], s1, -hw[0], hw[0]))
    P = box.basis
    c = box.center
    s2 = math.sqrt(eps / float(box.sigma.eigenvalues[1]))

    def g2(a2, a1):
        return math.exp(-(u(c[0] + P[0, 0] * a1 + P[0, 1] * a2,
                            c[1] + P[1, 0] * a1 + P[1, 1] * a2) - H) / eps)

    def row(a1):
        return weight(a1) * _quad(g2, -hw[1], hw[1], _breaks([0.0], s2, -hw[1], hw[1]), args=(a1,))
    return _quad(row, -hw[0], hw[0], _breaks([0.0], s1, -hw[0], hw[0]))


def dirichlet_energy(tf: TestFunction, Z: PartitionResult | None = None) -> EnergyResult:
    """theta_eps * eps * int |grad F^q|^2 dmu_eps.

    Inside each box |grad F|^2 is (q_j - q_i)^2 f'(alpha1)^2 in closed form; the
    box integrals are done by nested adaptive quadrature. Outside the boxes F is
    constant on H^eps, so the only other contribution comes from the cut-off
    layer and the box parts above H^eps; it is bounded by
    theta eps sup|grad F|^2 mu_eps(U > H + J^2 delta^2), with the measure bounded
    by area(bounding box) exp(-(level - h)/eps) / Z.

    The target is D_x(q, q) / nu_star.
    """
    lg = tf.landscape
    spec = lg.spec
    scale = tf.scale
    if spec.dim > 2:
        raise UsageError("quadrature is supported for d <= 2 only")
    if Z is None:
        Z = partition_function(spec, scale.epsilon, "quadrature", lg)
    eps = scale.epsilon
    per_box = []
    for b in tf.boxes:
        dq = tf.q[b.j - 1] - tf.q[b.i - 1]
        if dq == 0.0:
            per_box.append(0.0)
            continue
        lam, c = b.lam, tf.c

        def w(a1):
            return _profile_slope(a1, lam, scale, c) ** 2
        per_box.append(eps * dq * dq * _box_integral(spec, b, scale, w) / Z.scaled)
    value = float(sum(per_box))
    if np.all(tf.q == tf.q[0]):
        rem = 0.0
    else:
        area = float(np.prod([hi - lo for lo, hi in spec.box]))
        # theta * exp(-(level - h)/eps) = exp(-J^2 delta^2 / eps)
        rem = eps * tf.grad_bound() ** 2 * area * math.exp(-(scale.J * scale.delta) ** 2 / eps) / Z.scaled
    nu_star = sum(1.0 / math.sqrt(m.det) for i in lg.s_star for m in lg.well(i).minima)
    target = dirichlet_x(build_chain_x(lg), tf.q, tf.q) / nu_star
    return EnergyResult(value, tuple(per_box), rem, target)


def dirichlet_energy_gaussian(tf: TestFunction, Z: PartitionResult | None = None) -> float:
    """Same energy with U replaced by its quadratic model at each saddle.

    The box integral factorizes into one-dimensional Gaussian integrals:
    (q_j - q_i)^2 (2 pi eps)^(d/2) omega_sigma c2^(d-1) / (c Zhat), where
    c2 = erf(2 J sqrt(log(1/eps) / 2)) is the transverse mass of the box.
    """
    lg = tf.landscape
    scale = tf.scale
    d = lg.spec.dim
    if Z is None:
        Z = partition_function(lg.spec, scale.epsilon, "quadrature", lg)
    c2 = math.erf(2 * scale.J * math.sqrt(math.log(1.0 / scale.epsilon) / 2.0))
    total = 0.0
    for b in tf.boxes:
        dq = tf.q[b.j - 1] - tf.q[b.i - 1]
        total += dq * dq * (2 * math.pi * scale.epsilon) ** (d / 2) * omega_of_saddle(b.sigma) \
            * c2 ** (d - 1) / (tf.c * Z.scaled)
    return total


def generator_residual(spec: pot.PotentialSpec, box: SaddleBox, scale: EpsilonScale,
                       Z: PartitionResult | float) -> float:
    """theta_eps int_box |L_eps f| dmu_eps for the saddle profile f.

    Uses the closed form
    L_eps f = -(1/c) sqrt(lambda / (2 pi eps)) exp(-lambda alpha1^2 / (2 eps))
              [(grad U(x) + lambda (x - sigma)) . v1],
    which vanishes identically when U is exactly quadratic along v1.

    ``Z`` is the scaled partition function (a PartitionResult or its ``scaled``
    value).
    """
    if spec.dim > 2:
        raise UsageError("quadrature is supported for d <= 2 only")
    zs = Z.scaled if isinstance(Z, PartitionResult) else float(Z)
    c = normalizer(scale)
    lam = box.lam
    v1 = box.basis[:, 0]
    gfn = spec.kernels[1]
    p = spec.param_vector
    gbuf = np.empty(spec.dim)
    eps, H = scale.epsilon, scale.H
    u = _scalar_u(spec)
    hw = box.half_widths

    def lf(x, a1):
        gfn(p, x, gbuf)
        return abs(_profile_slope(a1, lam, scale, c) * (float(gbuf @ v1) + lam * a1))

    s1 = math.sqrt(eps / lam)
    if spec.dim == 1:
        def g(a1):
            x = box.point([a1])
            return lf(x, a1) * math.exp(-(u(x[0]) - H) / eps)
        val = _quad(g, -hw[0], hw[0], _breaks([0.0], s1, -hw[0], hw[0]))
    else:
        s2 = math.sqrt(eps / float(box.sigma.eigenvalues[1]))

        def g2(a2, a1):
            x = box.point([a1, a2])
            return lf(x, a1) * math.exp(-(u(x[0], x[1]) - H) / eps)

        def row(a1):
            return _quad(g2, -hw[1], hw[1], _breaks([0.0], s2, -hw[1], hw[1]), args=(a1,))
        val = _quad(row, -hw[0], hw[0], _breaks([0.0], s1, -hw[0], hw[0]))
    return val / zs
