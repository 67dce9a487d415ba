"""Analytic potentials with closed-form gradients and Hessians.

Every built-in is implemented once as a set of numba kernels operating on a
flat parameter vector. The same kernels drive the public evaluation API, the
critical-point search and the Euler-Maruyama integrator, so the drift used in
simulation is bit-for-bit the gradient used everywhere else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "PotentialSpec",
    "BUILTINS",
    "KERNELS",
    "builtin_spec",
    "eval",
    "grad",
    "hessian",
    "eval_many",
    "sym_eigen",
    "documented_critical_points",
]

# Integer codes used inside the kernels.
DOUBLE_WELL = 0
ASYM_DOUBLE_WELL = 1
QUADRATIC = 2
TRIPLE_WELL_1D = 3
TRIPLE_WELL_2D = 4


@dataclass(frozen=True)
class _Builtin:
    code: int
    dim: int
    param_names: tuple
    defaults: tuple
    box: tuple
    doc: str


# The triple-well potentials share one closed form in d = 1 or 2:
#   U(z) = -A [g_s(|z - e1|) + g_s(|z + e1|)] - B g_sT(|z|) + q |z|^4 + k |z'|^2 / 2,
#   g_w(r) = exp(-r^2 / (2 w^2)),  z' = (z_2, ..., z_d),
# i.e. two radially symmetric Gaussian wells of depth A at z = -e1, +e1, a
# shallower one of depth B at the origin, quartic confinement, and a harmonic
# transverse term that keeps the saddles close to quadratic across the x-axis.
# In d = 1 it is exactly the restriction of the d = 2 potential to the x-axis.
_TW_NAMES = ("A", "s", "B", "sT", "q", "k")

BUILTINS = {
    "double_well": _Builtin(
        DOUBLE_WELL, 1, (), (), ((-3.0, 3.0),), "U(x) = (x^2 - 1)^2"),
    "asym_double_well": _Builtin(
        ASYM_DOUBLE_WELL, 1, ("c",), (0.1,), ((-3.0, 3.0),),
        "U(x) = (x^2 - 1)^2 + c x"),
    "quadratic": _Builtin(
        QUADRATIC, 0, ("k1", "k2"), (2.0, 2.0), ((-3.0, 3.0), (-3.0, 3.0)),
        "U(x) = k1 x1^2 / 2 (+ k2 x2^2 / 2 in d=2)"),
    "triple_well_1d": _Builtin(
        TRIPLE_WELL_1D, 1, _TW_NAMES, (1.0, 0.3, 0.5, 0.25, 0.1, 0.0), ((-3.0, 3.0),),
        "U(x) = -A[g_s(x-1) + g_s(x+1)] - B g_sT(x) + q x^4, "
        "g_w(r) = exp(-r^2 / (2 w^2)); k has no effect in d = 1"),
    "triple_well_2d": _Builtin(
        TRIPLE_WELL_2D, 2, _TW_NAMES, (1.2, 0.3, 0.3, 0.25, 0.05, 4.0),
        ((-2.5, 2.5), (-2.5, 2.5)),
        "U(z) = -A[g_s(|z-e1|) + g_s(|z+e1|)] - B g_sT(|z|) + q |z|^4 + k y^2 / 2"),
}


@dataclass(frozen=True)
class PotentialSpec:
    """A named built-in potential.

    Parameters
    ----------
    name : str
        Key into ``BUILTINS``.
    params : dict
        Overrides for the named real parameters; missing ones take defaults.
    dim : int
        Domain dimension.
    box : tuple of (lo, hi)
        Per-axis bounding box.
    """

    name: str
    params: dict = field(default_factory=dict)
    dim: int = 1
    box: tuple = ((-3.0, 3.0),)

    def __post_init__(self):
        if self.name not in BUILTINS:
            raise ValueError(f"unknown potential name: {self.name!r}")
        b = BUILTINS[self.name]
        unknown = set(self.params) - set(b.param_names)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        if b.dim and self.dim != b.dim:
            raise ValueError(f"{self.name} has dim {b.dim}, got {self.dim}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if len(self.box) != self.dim:
            raise ValueError("box must have one [lo, hi] pair per axis")
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))

    @property
    def code(self) -> int:
        return BUILTINS[self.name].code

    @property
    def kernels(self):
        """Numba (value, gradient, Hessian) kernels of this potential."""
        return KERNELS[self.code]

    @property
    def param_vector(self) -> np.ndarray:
        b = BUILTINS[self.name]
        return np.array([self.params.get(n, d) for n, d in zip(b.param_names, b.defaults)],
                        dtype=np.float64)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "dim": self.dim,
                "box": [list(p) for p in self.box]}

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        return cls(name=d["name"], params=dict(d.get("params", {})), dim=int(d["dim"]),
                   box=tuple(tuple(p) for p in d["box"]))


def builtin_spec(name: str, dim: int | None = None, **params) -> PotentialSpec:
    """Spec for a built-in with its default box."""
    if name not in BUILTINS:
        raise ValueError(f"unknown potential name: {name!r}")
    b = BUILTINS[name]
    d = dim if dim is not None else (b.dim or 1)
    box = b.box if len(b.box) == d else b.box[:d]
    return PotentialSpec(name, params, d, box)


# ---------------------------------------------------------------------------
# kernels

@njit(cache=True)
def _tw_value(p, x):
    A, s, B, sT, q, k = p[0], p[1], p[2], p[3], p[4], p[5]
    rm = (x[0] - 1.0) ** 2
    rp = (x[0] + 1.0) ** 2
    r0 = x[0] * x[0]
    t = 0.0
    for a in range(1, x.shape[0]):
        t += x[a] * x[a]
    rm += t
    rp += t
    r0 += t
    return (-A * (math.exp(-rm / (2.0 * s * s)) + math.exp(-rp / (2.0 * s * s)))
            - B * math.exp(-r0 / (2.0 * sT * sT)) + q * r0 * r0 + 0.5 * k * t)


@njit(cache=True)
def _tw_weights(p, x):
    """Gaussian factors A g/s^2 for the three wells and |x|^2."""
    A, s, B, sT = p[0], p[1], p[2], p[3]
    rm = (x[0] - 1.0) ** 2
    rp = (x[0] + 1.0) ** 2
    r0 = x[0] * x[0]
    for a in range(1, x.shape[0]):
        rm += x[a] * x[a]
        rp += x[a] * x[a]
        r0 += x[a] * x[a]
    wm = A * math.exp(-rm / (2.0 * s * s)) / (s * s)
    wp = A * math.exp(-rp / (2.0 * s * s)) / (s * s)
    w0 = B * math.exp(-r0 / (2.0 * sT * sT)) / (sT * sT)
    return wm, wp, w0, r0


@njit(cache=True)
def _tw_grad(p, x, out):
    q, k = p[4], p[5]
    wm, wp, w0, r0 = _tw_weights(p, x)
    for a in range(x.shape[0]):
        c = 1.0 if a == 0 else 0.0
        out[a] = (wm * (x[a] - c) + wp * (x[a] + c) + w0 * x[a]
                  + 4.0 * q * r0 * x[a] + (1.0 - c) * k * x[a])


@njit(cache=True)
def _tw_hess(p, x, out):
    s, sT, q, k = p[1], p[3], p[4], p[5]
    wm, wp, w0, r0 = _tw_weights(p, x)
    n = x.shape[0]
    for a in range(n):
        ca = 1.0 if a == 0 else 0.0
        for b in range(a, n):
            cb = 1.0 if b == 0 else 0.0
            v = (-wm * (x[a] - ca) * (x[b] - cb) / (s * s)
                 - wp * (x[a] + ca) * (x[b] + cb) / (s * s)
                 - w0 * x[a] * x[b] / (sT * sT)
                 + 8.0 * q * x[a] * x[b])
            if a == b:
                v += wm + wp + w0 + 4.0 * q * r0 + (1.0 - ca) * k
            out[a, b] = v


@njit(cache=True)
def _tw_hess_sym(p, x, out):
    _tw_hess(p, x, out)
    _mirror(out)


@njit(cache=True, inline="always")
def _mirror(out):
    n = out.shape[0]
    for k in range(n):
        for m in range(k):
            out[k, m] = out[m, k]


@njit(cache=True)
def _dw_value(p, x):
    return (x[0] * x[0] - 1.0) ** 2


@njit(cache=True)
def _dw_grad(p, x, out):
    out[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0)


@njit(cache=True)
def _dw_hess(p, x, out):
    out[0, 0] = 12.0 * x[0] * x[0] - 4.0


@njit(cache=True)
def _adw_value(p, x):
    return (x[0] * x[0] - 1.0) ** 2 + p[0] * x[0]


@njit(cache=True)
def _adw_grad(p, x, out):
    out[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0) + p[0]


@njit(cache=True)
def _quad_value(p, x):
    v = 0.0
    for k in range(x.shape[0]):
        v += 0.5 * p[k] * x[k] * x[k]
    return v


@njit(cache=True)
def _quad_grad(p, x, out):
    for k in range(x.shape[0]):
        out[k] = p[k] * x[k]


@njit(cache=True)
def _quad_hess(p, x, out):
    for k in range(x.shape[0]):
        for m in range(x.shape[0]):
            out[k, m] = 0.0
        out[k, k] = p[k]


# (value, gradient, Hessian) per built-in. Kernels that take one of these as an
# argument get compiled once per potential, with the call resolved statically.
KERNELS = {
    DOUBLE_WELL: (_dw_value, _dw_grad, _dw_hess),
    ASYM_DOUBLE_WELL: (_adw_value, _adw_grad, _dw_hess),
    QUADRATIC: (_quad_value, _quad_grad, _quad_hess),
    TRIPLE_WELL_1D: (_tw_value, _tw_grad, _tw_hess_sym),
    TRIPLE_WELL_2D: (_tw_value, _tw_grad, _tw_hess_sym),
}


@njit(cache=True)
def _value_many(vfn, p, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = vfn(p, X[i])
    return out


def _point(spec: PotentialSpec, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1 or x.shape[0] != spec.dim:
        raise ValueError(f"dimension mismatch: point has shape {x.shape}, spec dim {spec.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point has non-finite entries")
    return x


def eval(spec: PotentialSpec, x) -> float:  # noqa: A001 - mirrors the math name
    """U(x)."""
    return float(spec.kernels[0](spec.param_vector, _point(spec, x)))


def grad(spec: PotentialSpec, x) -> np.ndarray:
    """Exact gradient of U at x."""
    out = np.empty(spec.dim)
    spec.kernels[1](spec.param_vector, _point(spec, x), out)
    return out


def hessian(spec: PotentialSpec, x) -> np.ndarray:
    """Exact Hessian of U at x, symmetric by construction."""
    out = np.empty((spec.dim, spec.dim))
    spec.kernels[2](spec.param_vector, _point(spec, x), out)
    return out


def eval_many(spec: PotentialSpec, X) -> np.ndarray:
    """U at each row of X (shape (n, d)), or at each entry of a 1D array when d=1."""
    X = np.asarray(X, dtype=np.float64)
    if spec.dim == 1 and X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise ValueError("dimension mismatch")
    return _value_many(spec.kernels[0], spec.param_vector, np.ascontiguousarray(X))


# ---------------------------------------------------------------------------
# eigen-solver

def sym_eigen(m, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Symmetric matrix.

    Returns
    -------
    w : ndarray
        Eigenvalues in ascending order.
    V : ndarray
        Orthonormal eigenvectors as columns, ``m @ V[:, k] = w[k] * V[:, k]``.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    # work on a / max|a| so tiny or subnormal inputs do not underflow
    scale = float(np.abs(a).max())
    if scale == 0.0:
        return np.zeros(n), v
    a = a / scale
    for _ in range(max_sweeps):
        off = float(np.abs(np.triu(a, 1)).max()) if n > 1 else 0.0
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                # rotate columns then rows of a, and columns of v
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a) * scale
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    resid = np.abs(np.asarray(m, float) @ v - v * w).max()
    if resid > 1e-10 * scale:
        raise RuntimeError(f"Jacobi iteration did not converge (residual {resid:.3e})")
    return w, v


# ---------------------------------------------------------------------------
# documented critical points

def documented_critical_points(spec: PotentialSpec) -> list:
    """Approximate critical points of a built-in, as (location, kind) pairs.

    These are seeds from the closed forms; callers polish them with Newton.
    """
    name = spec.name
    if name == "double_well":
        return [(np.array([-1.0]), "minimum"), (np.array([0.0]), "saddle"),
                (np.array([1.0]), "minimum")]
    if name == "asym_double_well":
        c = spec.param_vector[0]
        roots = np.sort(np.roots([4.0, 0.0, -4.0, c]).real)
        kinds = ["minimum", "saddle", "minimum"]
        return [(np.array([r]), k) for r, k in zip(roots, kinds)]
    if name == "quadratic":
        return [(np.zeros(spec.dim), "minimum")]
    if name in ("triple_well_1d", "triple_well_2d"):
        xs = [(-0.97, "minimum"), (-0.4, "saddle"), (0.0, "minimum"),
              (0.4, "saddle"), (0.97, "minimum")]
        return [(np.array([x0] + [0.0] * (spec.dim - 1)), kind) for x0, kind in xs]
    raise ValueError(f"unknown potential name: {name!r}")
