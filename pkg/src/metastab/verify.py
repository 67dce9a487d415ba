"""Statistical comparison of projected trace-process logs with the chain y.

Works on lists of ``TraceJumpLog`` regardless of where they came from: the SDE
simulator or ``simulate_chain``, which samples the limiting chain directly and
is used to calibrate every statistic here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .chains import ChainY
from .errors import UsageError
from .simulate import TraceJumpLog, make_generator

__all__ = [
    "RATE_TOL",
    "KS_ALPHA",
    "CENSOR_MAX",
    "MIN_KS_SAMPLE",
    "EmpiricalChain",
    "Criterion",
    "VerifyReport",
    "estimate_chain",
    "exponentiality_test",
    "delta_negligibility",
    "short_time_bound",
    "simulate_chain",
    "verify",
]

RATE_TOL = 0.15
KS_ALPHA = 0.01
CENSOR_MAX = 0.10
MIN_KS_SAMPLE = 50
N_BATCHES = 20


@dataclass
class EmpiricalChain:
    """Counts and times per state of S_star, from uncensored holdings only.

    ``states`` lists the well ids; matrices are indexed by position in it.
    """

    states: tuple
    counts: np.ndarray            # counts[i, j]: observed jumps i -> j
    time_in: np.ndarray           # total uncensored rescaled time per state
    n_holdings: np.ndarray
    mean_holding: np.ndarray
    mean_holding_ci: np.ndarray   # (n, 2) t-interval, 95%
    normalized: np.ndarray        # pooled holdings divided by their state's mean
    first_holdings: np.ndarray
    censored: int
    total_entries: int
    delta_fractions: np.ndarray
    sequence: list = field(default_factory=list)   # (state index, holding) in log order

    @property
    def censor_fraction(self) -> float:
        return self.censored / self.total_entries if self.total_entries else 0.0

    @property
    def n_jumps(self) -> int:
        return int(self.counts.sum())

    def rates(self) -> np.ndarray:
        """MLE jump rates (jumps i -> j) / (time in i); NaN where time is zero."""
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.counts / self.time_in[:, None]
        r[self.time_in == 0] = np.nan
        return r

    def jump_probabilities(self) -> np.ndarray:
        tot = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self.counts / tot[:, None]
        p[tot == 0] = np.nan
        return p

    def occupation(self):
        """Fraction of uncensored trace time per state and its batch-means SE."""
        occ = self.time_in / self.time_in.sum()
        n = len(self.sequence)
        B = min(N_BATCHES, n)
        if B < 2:
            return occ, np.full_like(occ, np.nan)
        parts = np.array_split(np.arange(n), B)
        fr = []
        for idx in parts:
            t = np.zeros(len(self.states))
            for k in idx:
                s, hold = self.sequence[k]
                t[s] += hold
            fr.append(t / t.sum() if t.sum() > 0 else np.full(len(t), np.nan))
        fr = np.array(fr)
        return occ, np.nanstd(fr, axis=0, ddof=1) / math.sqrt(B)


def estimate_chain(logs, states) -> EmpiricalChain:
    """Pool a list of logs into counts, times and normalized holdings.

    Censored (horizon-cut) holdings are excluded from every estimate and only
    counted. A holding that ends in a jump contributes to ``counts[from, to]``.
    """
    states = tuple(int(s) for s in states)
    pos = {s: k for k, s in enumerate(states)}
    n = len(states)
    counts = np.zeros((n, n), dtype=np.int64)
    holds = [[] for _ in range(n)]
    firsts, seq, deltas = [], [], []
    censored = total = 0
    for log in logs:
        v = np.asarray(log.valleys)
        hd = np.asarray(log.holdings, dtype=float)
        cz = np.asarray(log.censored, dtype=bool)
        deltas.append(log.delta_fraction)
        bad = set(v.tolist()) - set(pos)
        if bad:
            raise UsageError(f"log visits states {sorted(bad)} outside {states}")
        for k in range(len(v)):
            total += 1
            if cz[k]:
                censored += 1
                continue
            s = pos[int(v[k])]
            holds[s].append(hd[k])
            seq.append((s, hd[k]))
            if k == 0:
                firsts.append(hd[k])
            if k + 1 < len(v):
                counts[s, pos[int(v[k + 1])]] += 1
    time_in = np.array([float(np.sum(h)) for h in holds])
    nh = np.array([len(h) for h in holds])
    mean = np.array([float(np.mean(h)) if h else np.nan for h in holds])
    ci = np.full((n, 2), np.nan)
    for s in range(n):
        if nh[s] >= 2:
            sd = float(np.std(holds[s], ddof=1))
            half = stats.t.ppf(0.975, nh[s] - 1) * sd / math.sqrt(nh[s])
            ci[s] = (mean[s] - half, mean[s] + half)
    norm = np.concatenate([np.asarray(holds[s]) / mean[s] for s in range(n) if nh[s]]) \
        if np.any(nh) else np.zeros(0)
    return EmpiricalChain(states, counts, time_in, nh, mean, ci, norm, np.asarray(firsts),
                          censored, total, np.asarray(deltas, dtype=float), seq)


def exponentiality_test(sample) -> tuple:
    """One-sample KS test against the mean-one exponential.

    Returns ``(statistic, p_value)`` with the asymptotic Kolmogorov p-value.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < MIN_KS_SAMPLE:
        raise UsageError(f"exponentiality test needs at least {MIN_KS_SAMPLE} holdings, got {x.size}")
    res = stats.kstest(x, "expon", method="asymp")
    return float(res.statistic), float(res.pvalue)


def delta_negligibility(logs_by_eps: dict) -> dict:
    """Mean Delta fraction per eps and whether it decreases as eps decreases."""
    if len(logs_by_eps) < 2:
        raise UsageError("needs at least two eps values")
    eps = sorted(logs_by_eps, reverse=True)
    means = {e: float(np.mean([l.delta_fraction for l in logs_by_eps[e]])) for e in eps}
    seq = [means[e] for e in eps]
    return {"eps": eps, "mean_delta_fraction": means,
            "decreasing": all(b < a for a, b in zip(seq, seq[1:]))}


def short_time_bound(logs, a_grid, chain: ChainY) -> list:
    """Empirical P[first rescaled transition <= a] against 1 - exp(-r a).

    ``r`` is the total exit rate of each run's starting state; runs without a
    transition count as later than every a within their horizon.
    """
    starts = [int(l.valleys[0]) for l in logs]
    firsts = np.array([l.first_transition for l in logs], dtype=float)
    exit_rate = chain.rates().sum(axis=1)
    r = np.array([exit_rate[chain.index(s)] for s in starts])
    out = []
    n = len(logs)
    for a in a_grid:
        hit = np.nan_to_num(firsts, nan=np.inf) <= a
        p = float(np.mean(hit)) if n else math.nan
        pred = float(np.mean(1.0 - np.exp(-r * a))) if n else math.nan
        sd = math.sqrt(max(pred * (1 - pred), 0.0) / n) if n else math.nan
        out.append({"a": float(a), "empirical": p, "predicted": pred, "sigma": sd, "n": n,
                    "within_3sigma": bool(abs(p - pred) <= 3 * sd) if sd > 0 else p == pred})
    return out


def simulate_chain(chain: ChainY, horizon: float, n_runs: int, base_seed: int,
                   start: int | None = None) -> list:
    """Sample the chain y directly (Gillespie) and package runs as jump logs.

    Each run uses the same per-run generator as the SDE simulator. The last
    holding of every run is cut by the horizon and flagged as censored.
    """
    Q = chain.rates()
    out_rate = Q.sum(axis=1)
    P = Q / out_rate[:, None]
    s0 = chain.index(start) if start is not None else 0
    logs = []
    for r in range(n_runs):
        rng = make_generator(base_seed, r)
        s, t = s0, 0.0
        vs, hs, cs = [], [], []
        first = math.nan
        while True:
            hold = rng.exponential(1.0 / out_rate[s])
            vs.append(chain.s_star[s])
            if t + hold >= horizon:
                hs.append(horizon - t)
                cs.append(True)
                break
            hs.append(hold)
            cs.append(False)
            t += hold
            if math.isnan(first):
                first = t
            s = int(rng.choice(chain.n, p=P[s]))
        logs.append(TraceJumpLog(np.array(vs, dtype=np.int64), np.array(hs), np.array(cs),
                                 0.0, horizon, 1.0, math.nan, r, first))
    return logs


@dataclass
class Criterion:
    name: str
    value: float
    target: float
    tolerance: str
    passed: bool
    data: str

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name}: value={self.value:.6g} "
                f"target={self.target:.6g} tolerance={self.tolerance} [{self.data}]")


@dataclass
class VerifyReport:
    criteria: list
    empirical: EmpiricalChain

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "criteria": [c.__dict__ for c in self.criteria],
                "n_jumps": self.empirical.n_jumps,
                "censor_fraction": self.empirical.censor_fraction,
                "mean_delta_fraction": float(np.mean(self.empirical.delta_fractions))
                if len(self.empirical.delta_fractions) else 0.0}


def verify(logs, chain: ChainY, rate_tol: float = RATE_TOL, alpha: float = KS_ALPHA) -> VerifyReport:
    """Every per-dataset criterion: rates, jump probabilities, mean holdings,
    exponentiality, occupation and censoring."""
    emp = estimate_chain(logs, chain.s_star)
    crit = []
    vol = f"{emp.n_jumps} jumps, {len(logs)} runs"
    crit.append(Criterion("censor fraction", emp.censor_fraction, 0.0, f"< {CENSOR_MAX}",
                          emp.censor_fraction < CENSOR_MAX, f"{emp.censored}/{emp.total_entries} entries"))
    R = chain.rates()
    Rh = emp.rates()
    Pm = chain.jump_probabilities()
    Ph = emp.jump_probabilities()
    hold = chain.mean_holding()
    for a, i in enumerate(chain.s_star):
        for b, j in enumerate(chain.s_star):
            if a == b or R[a, b] == 0:
                continue
            ratio = Rh[a, b] / R[a, b]
            crit.append(Criterion(f"rate {i}->{j}", float(Rh[a, b]), float(R[a, b]),
                                  f"+-{rate_tol:.0%}", bool(abs(ratio - 1) <= rate_tol),
                                  f"{emp.counts[a, b]} jumps, time {emp.time_in[a]:.4g}"))
            n_i = int(emp.counts[a].sum())
            sd = math.sqrt(Pm[a, b] * (1 - Pm[a, b]) / n_i) if n_i else math.nan
            ok = bool(abs(Ph[a, b] - Pm[a, b]) <= 3 * sd) if sd > 0 else bool(Ph[a, b] == Pm[a, b])
            crit.append(Criterion(f"jump probability {i}->{j}", float(Ph[a, b]), float(Pm[a, b]),
                                  "3 sigma binomial", ok, f"{n_i} jumps from {i}"))
        crit.append(Criterion(f"mean holding {i}", float(emp.mean_holding[a]), float(hold[a]),
                              f"+-{rate_tol:.0%}",
                              bool(abs(emp.mean_holding[a] / hold[a] - 1) <= rate_tol),
                              f"{emp.n_holdings[a]} holdings"))
    if emp.normalized.size >= MIN_KS_SAMPLE:
        ks, p = exponentiality_test(emp.normalized)
        crit.append(Criterion("exponentiality KS p-value", p, alpha, f"> {alpha}", p > alpha,
                              f"n={emp.normalized.size}, KS={ks:.4g}"))
    else:
        crit.append(Criterion("exponentiality KS p-value", math.nan, alpha, f"> {alpha}", False,
                              f"n={emp.normalized.size} < {MIN_KS_SAMPLE}"))
    occ, se = emp.occupation()
    for a, i in enumerate(chain.s_star):
        target = float(chain.mu_star[a])
        ok = bool(abs(occ[a] - target) <= 3 * se[a]) if np.isfinite(se[a]) else False
        crit.append(Criterion(f"occupation {i}", float(occ[a]), target, "3 sigma batch means", ok,
                              f"{N_BATCHES} batches, se={se[a]:.3g}"))
    return VerifyReport(crit, emp)
