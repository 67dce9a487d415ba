"""Euler-Maruyama simulation, hitting times and the trace process on the valleys.

Randomness comes from numpy's Philox counter-based generator. Run ``r`` of a
batch with base seed ``s`` draws from ``SeedSequence(s, spawn_key=(r,))``, so
each trajectory is a pure function of ``(cfg, s, r)`` and the batch output does
not depend on the order or the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import potential as pot
from .landscape import DELTA, LandscapeGraph, _locate
from .errors import MetastabError, UsageError

__all__ = [
    "RNG_ALGORITHM",
    "SimConfig",
    "SimulationError",
    "TraceJumpLog",
    "HittingResult",
    "default_dt",
    "make_generator",
    "step",
    "sample_path",
    "hitting_time",
    "hitting_times",
    "trace_run",
    "batch",
    "stiffness_estimate",
]

RNG_ALGORITHM = "numpy.random.Philox(4x64, 10 rounds) seeded by SeedSequence(base_seed, spawn_key=(run,))"
BLOCK = 1 << 15

# kernel status codes
_RUNNING, _DONE, _ABORT_GUARD, _ABORT_NONFINITE, _OUT_FULL = 0, 1, 2, 3, 4


class SimulationError(MetastabError):
    """A trajectory was aborted (non-finite state or escape from the guard box)."""


def default_dt(epsilon: float) -> float:
    """min(eps/10, 1e-3)."""
    return min(epsilon / 10.0, 1e-3) if epsilon > 0 else 1e-3


def stiffness_estimate(spec: pot.PotentialSpec, n: int = 41, band: float = 3.0) -> float:
    """Largest Hessian operator norm over grid points of the box with U within
    ``band`` of the lowest grid value (the region the dynamics explores)."""
    axes = [np.linspace(lo, hi, n) for lo, hi in spec.box]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    u = pot.eval_many(spec, X)
    keep = X[u <= u.min() + band]
    return max(float(np.abs(np.linalg.eigvalsh(pot.hessian(spec, x))).max()) for x in keep)


@dataclass(frozen=True)
class SimConfig:
    """Settings for one family of trajectories.

    Parameters
    ----------
    spec : PotentialSpec
    epsilon : float
        Noise level; 0 gives the deterministic gradient flow.
    dt : float, optional
        Time step, default ``min(eps/10, 1e-3)``.
    seed : int
        Seed of a single run; ``batch`` derives per-run seeds from its own base seed.
    max_steps : int
        Hard cap on Euler steps per trajectory.
    start : int or sequence of float, optional
        Valley id (start at its first minimum) or an explicit point.
    check_stability : bool
        Enforce ``dt <= eps/4`` and ``dt <= 0.1/||Hess U||``.
    """

    spec: pot.PotentialSpec
    epsilon: float
    dt: float | None = None
    seed: int = 0
    max_steps: int = 10**10
    start: object = None
    check_stability: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise UsageError("epsilon must be nonnegative")
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.epsilon))
        if self.dt <= 0 or self.max_steps <= 0:
            raise UsageError("dt and max_steps must be positive")
        if self.check_stability:
            if self.epsilon > 0 and self.dt > self.epsilon / 4:
                raise UsageError(f"dt={self.dt} exceeds eps/4={self.epsilon / 4}")
            stiff = stiffness_estimate(self.spec)
            lim = 0.1 / stiff if stiff > 0 else math.inf
            if self.dt > lim:
                raise UsageError(f"dt={self.dt} exceeds stiffness limit {lim:.3g}")


def make_generator(seed: int, run: int | None = None) -> np.random.Generator:
    """Philox generator for a single run, or run ``run`` of a batch."""
    ss = np.random.SeedSequence(seed) if run is None else \
        np.random.SeedSequence(seed, spawn_key=(run,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TraceJumpLog:
    """Projected trace process of one trajectory.

    ``valleys[k]`` and ``holdings[k]`` give the k-th visited valley and the time
    spent there on the trace clock, divided by theta. The last entry is always
    cut by the horizon and flagged in ``censored``.
    """

    valleys: np.ndarray
    holdings: np.ndarray
    censored: np.ndarray
    delta_time: float
    total_time: float
    theta: float
    dt: float
    run: int = 0
    first_transition: float = math.nan   # raw time of the first valley change / theta
    status: str = "ok"

    @property
    def entries(self) -> list:
        return list(zip(self.valleys.tolist(), self.holdings.tolist()))

    @property
    def trace_time(self) -> float:
        return float(np.sum(self.holdings)) * self.theta

    @property
    def delta_fraction(self) -> float:
        return self.delta_time / self.total_time if self.total_time > 0 else 0.0


@dataclass(frozen=True)
class HittingResult:
    time: float
    exit_point: np.ndarray
    censored: bool
    steps: int


# ---------------------------------------------------------------------------
# kernels

@njit(cache=True, nogil=True)
def _guard_ok(x, glo, ghi):
    for a in range(x.shape[0]):
        if not (x[a] >= glo[a] and x[a] <= ghi[a]):
            return False
    return True


@njit(cache=True, nogil=True)
def _em_path(gfn, p, x, dt, sig, noise, n):
    """n Euler steps in place; returns the number taken before a non-finite state."""
    d = x.shape[0]
    g = np.empty(d)
    for k in range(n):
        gfn(p, x, g)
        for a in range(d):
            x[a] = x[a] - g[a] * dt + sig * noise[k, a]
        for a in range(d):
            if not math.isfinite(x[a]):
                return k + 1
    return n


@njit(cache=True, nogil=True)
def _hit_block(gfn, p, x, dt, sig, noise, centers, ids, r0, target, glo, ghi):
    """Advance until the located region is flagged in ``target``.

    Returns (steps taken, status)."""
    d = x.shape[0]
    g = np.empty(d)
    for k in range(noise.shape[0]):
        gfn(p, x, g)
        for a in range(d):
            x[a] = x[a] - g[a] * dt + sig * noise[k, a]
        if not _guard_ok(x, glo, ghi):
            for a in range(d):
                if not math.isfinite(x[a]):
                    return k + 1, _ABORT_NONFINITE
            return k + 1, _ABORT_GUARD
        if target[_locate(centers, ids, r0, x)]:
            return k + 1, _DONE
    return noise.shape[0], _RUNNING


@njit(cache=True, nogil=True)
def _trace_block(gfn, p, x, dt, sig, noise, centers, ids, r0, glo, ghi,
                 st, out_v, out_n, trace_target):
    """Advance the trace process over one block of normals.

    ``st`` holds int64 state: [current valley, steps in current entry,
    delta steps, total steps, trace steps, entries written, first change step].
    """
    d = x.shape[0]
    g = np.empty(d)
    for k in range(noise.shape[0]):
        if st[5] >= out_v.shape[0]:
            return k, _OUT_FULL
        gfn(p, x, g)
        for a in range(d):
            x[a] = x[a] - g[a] * dt + sig * noise[k, a]
        if not _guard_ok(x, glo, ghi):
            for a in range(d):
                if not math.isfinite(x[a]):
                    return k + 1, _ABORT_NONFINITE
            return k + 1, _ABORT_GUARD
        st[3] += 1
        r = _locate(centers, ids, r0, x)
        if r == 0:
            st[2] += 1
        else:
            st[4] += 1
            if r == st[0]:
                st[1] += 1
            else:
                out_v[st[5]] = st[0]
                out_n[st[5]] = st[1]
                st[5] += 1
                if st[6] < 0:
                    st[6] = st[3]
                st[0] = r
                st[1] = 1
            if st[4] >= trace_target:
                return k + 1, _DONE
    return noise.shape[0], _RUNNING


# ---------------------------------------------------------------------------
# python drivers

def _start_point(cfg: SimConfig, landscape: LandscapeGraph | None) -> np.ndarray:
    s = cfg.start
    if s is None or isinstance(s, (int, np.integer)):
        if landscape is None:
            raise UsageError("a valley start needs a landscape")
        vid = landscape.s_star[0] if s is None else int(s)
        return np.array(landscape.well(vid).minima[0].location, dtype=np.float64)
    x = np.atleast_1d(np.asarray(s, dtype=np.float64)).copy()
    if x.shape != (cfg.spec.dim,):
        raise UsageError("start point has wrong dimension")
    return x


def _guard_box(spec):
    lo = np.array([b[0] for b in spec.box])
    hi = np.array([b[1] for b in spec.box])
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return mid - 2 * half, mid + 2 * half


class _Noise:
    """Blocks of scaled-free standard normals; zeros when eps = 0."""

    def __init__(self, cfg: SimConfig, rng: np.random.Generator | None):
        self.d = cfg.spec.dim
        self.rng = rng if cfg.epsilon > 0 else None
        self._zeros = None

    def block(self, n):
        if self.rng is None:
            if self._zeros is None or self._zeros.shape[0] < n:
                self._zeros = np.zeros((n, self.d))
            return self._zeros[:n]
        return self.rng.standard_normal((n, self.d))


def step(state, cfg: SimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """One Euler-Maruyama step x - grad U(x) dt + sqrt(2 eps dt) xi."""
    x = np.atleast_1d(np.asarray(state, dtype=np.float64)).copy()
    noise = _Noise(cfg, rng).block(1)
    taken = _em_path(cfg.spec.kernels[1], cfg.spec.param_vector, x, cfg.dt,
                     math.sqrt(2.0 * cfg.epsilon * cfg.dt), noise, 1)
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite state after {taken} step(s) from {list(state)}")
    return x


def sample_path(cfg: SimConfig, x0, n_steps: int, thin: int = 1,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """States after every ``thin`` Euler steps, ``n_steps // thin`` rows."""
    if n_steps < 1 or thin < 1:
        raise UsageError("n_steps and thin must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    rng = rng if rng is not None else make_generator(cfg.seed)
    noise = _Noise(cfg, rng)
    gfn, p = cfg.spec.kernels[1], cfg.spec.param_vector
    sig = math.sqrt(2.0 * cfg.epsilon * cfg.dt)
    out = np.empty((n_steps // thin, x.shape[0]))
    for k in range(out.shape[0]):
        taken = _em_path(gfn, p, x, cfg.dt, sig, noise.block(thin), thin)
        if taken < thin or not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite state after {k * thin + taken} steps")
        out[k] = x
    return out


def _target_mask(landscape, target) -> np.ndarray:
    """Boolean mask over region labels 0..K. ``target`` is an iterable of valley
    ids, or ("not", ids) for the complement of a union of valleys."""
    mask = np.zeros(landscape.K + 1, dtype=np.bool_)
    if isinstance(target, tuple) and len(target) == 2 and target[0] == "not":
        mask[:] = True
        for i in target[1]:
            mask[int(i)] = False
    else:
        for i in np.atleast_1d(target):
            mask[int(i)] = True
    return mask


def hitting_time(cfg: SimConfig, landscape: LandscapeGraph, target, start=None,
                 rng: np.random.Generator | None = None) -> HittingResult:
    """First time the discretised path enters ``target``.

    ``target`` is a collection of valley ids (use ``landscape.DELTA`` = 0 for the
    complement of all valleys) or ``("not", ids)``. Returns time 0 when the start
    already lies in the target; hitting ``max_steps`` gives a censored result.
    """
    spec = cfg.spec
    x = _start_point(replace(cfg, start=start) if start is not None else cfg, landscape)
    mask = _target_mask(landscape, target)
    centers, ids = landscape.valley_centers()
    r0 = landscape.valley_radius
    if mask[_locate(centers, ids, r0, x)]:
        return HittingResult(0.0, x, False, 0)
    rng = rng if rng is not None else make_generator(cfg.seed)
    noise = _Noise(cfg, rng)
    glo, ghi = _guard_box(spec)
    sig = math.sqrt(2.0 * cfg.epsilon * cfg.dt)
    code, p = spec.kernels[1], spec.param_vector
    total = 0
    while total < cfg.max_steps:
        n = int(min(BLOCK, cfg.max_steps - total))
        taken, status = _hit_block(code, p, x, cfg.dt, sig, noise.block(n), centers, ids,
                                   r0, mask, glo, ghi)
        total += taken
        if status == _DONE:
            return HittingResult(total * cfg.dt, x, False, total)
        if status in (_ABORT_GUARD, _ABORT_NONFINITE):
            raise SimulationError(
                f"trajectory aborted after {total} steps at {list(map(float, x))}: "
                + ("left twice the bounding box (dt too large?)" if status == _ABORT_GUARD
                   else "non-finite state"))
    return HittingResult(total * cfg.dt, x, True, total)


def trace_run(cfg: SimConfig, landscape: LandscapeGraph, horizon_rescaled: float,
              rng: np.random.Generator | None = None, run: int = 0) -> TraceJumpLog:
    """Simulate until the trace clock reaches ``horizon_rescaled * theta``.

    The trace clock runs only while the path sits in a valley of V_star. A step
    is attributed to the region of its endpoint.
    """
    if cfg.epsilon <= 0:
        theta = 1.0
    else:
        theta = math.exp((landscape.H - landscape.h) / cfg.epsilon)
    spec = cfg.spec
    x = _start_point(cfg, landscape)
    centers, ids = landscape.valley_centers()
    r0 = landscape.valley_radius
    v0 = _locate(centers, ids, r0, x)
    if v0 == DELTA:
        raise UsageError("trace_run must start inside a valley of V_star")
    rng = rng if rng is not None else make_generator(cfg.seed)
    noise = _Noise(cfg, rng)
    glo, ghi = _guard_box(spec)
    sig = math.sqrt(2.0 * cfg.epsilon * cfg.dt)
    code, p = spec.kernels[1], spec.param_vector
    trace_target = max(1, int(math.ceil(horizon_rescaled * theta / cfg.dt - 1e-9)))
    st = np.array([v0, 0, 0, 0, 0, 0, -1], dtype=np.int64)
    out_v = np.empty(256, dtype=np.int64)
    out_n = np.empty(256, dtype=np.int64)
    status_name = "ok"
    pending = None
    while True:
        if st[3] >= cfg.max_steps:
            status_name = "max_steps"
            break
        n = int(min(BLOCK, cfg.max_steps - st[3]))
        block = pending if pending is not None else noise.block(n)
        pending = None
        taken, status = _trace_block(code, p, x, cfg.dt, sig, block, centers, ids, r0,
                                     glo, ghi, st, out_v, out_n, trace_target)
        if status == _OUT_FULL:
            out_v = np.concatenate([out_v, np.empty_like(out_v)])
            out_n = np.concatenate([out_n, np.empty_like(out_n)])
            # the kernel stopped before consuming block[taken]
            pending = block[taken:]
            continue
        if status == _DONE:
            break
        if status in (_ABORT_GUARD, _ABORT_NONFINITE):
            raise SimulationError(
                f"run {run} aborted after {int(st[3])} steps at {list(map(float, x))}")
    k = int(st[5])
    valleys = np.append(out_v[:k], st[0])
    steps = np.append(out_n[:k], st[1])
    censored = np.zeros(k + 1, dtype=bool)
    censored[-1] = True
    return TraceJumpLog(
        valleys=valleys, holdings=steps * cfg.dt / theta, censored=censored,
        delta_time=float(st[2]) * cfg.dt, total_time=float(st[3]) * cfg.dt, theta=theta,
        dt=cfg.dt, run=run,
        first_transition=(float(st[6]) * cfg.dt / theta) if st[6] >= 0 else math.nan,
        status=status_name)


def hitting_times(cfg: SimConfig, landscape: LandscapeGraph, target, n_runs: int,
                  base_seed: int, threads: int = 1) -> list:
    """Independent hitting times, run ``r`` seeded by ``(base_seed, r)``."""
    def job(r):
        return hitting_time(cfg, landscape, target, rng=make_generator(base_seed, r))
    return _map(job, n_runs, threads)


def batch(cfg: SimConfig, landscape: LandscapeGraph, horizon_rescaled: float, n_runs: int,
          base_seed: int, threads: int = 1) -> list:
    """``n_runs`` trace runs; identical output for any ``threads``."""
    if n_runs < 1:
        raise UsageError("n_runs must be at least 1")

    def job(r):
        return trace_run(cfg, landscape, horizon_rescaled, rng=make_generator(base_seed, r),
                         run=r)
    return _map(job, n_runs, threads)


def _map(job, n_runs, threads):
    results: list = [None] * n_runs
    errors = []

    def wrapped(r):
        try:
            results[r] = job(r)
        except MetastabError as exc:
            errors.append((r, str(exc)))

    if threads <= 1:
        for r in range(n_runs):
            wrapped(r)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(wrapped, range(n_runs)))
    if errors:
        errors.sort()
        raise SimulationError(f"{len(errors)} of {n_runs} runs failed: "
                              + "; ".join(f"run {r}: {m}" for r, m in errors))
    return results
