"""Run configuration: potential plus per-stage settings, JSON round-trippable."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

from . import io
from .errors import UsageError
from .potential import BUILTINS, PotentialSpec, builtin_spec

__all__ = ["SimulationSettings", "RunConfig", "load_config"]


@dataclass(frozen=True)
class SimulationSettings:
    epsilon: float = 0.1
    runs: int = 100
    horizon: float = 20.0
    seed: int = 42
    dt: float | None = None
    max_steps: int = 10**10

    def __post_init__(self):
        if self.epsilon <= 0 or self.runs < 1 or self.horizon <= 0 or self.max_steps < 1:
            raise UsageError("simulation settings: epsilon, runs, horizon, max_steps must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs.

    ``H`` is ``"auto"`` or a number; ``eps_grid`` drives the asymptotics and
    Poisson stages; ``f`` is the Poisson datum on S_star.
    """

    potential: PotentialSpec
    H: object = "auto"
    allow_single: bool = False
    eps_grid: tuple = (0.1, 0.05, 0.02)
    f: tuple | None = None
    simulation: SimulationSettings = field(default_factory=SimulationSettings)

    def __post_init__(self):
        if not (self.H == "auto" or isinstance(self.H, (int, float))):
            raise UsageError('H must be "auto" or a number')
        if any(not 0 < e < 1 for e in self.eps_grid):
            raise UsageError("eps_grid values must lie in (0, 1)")
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        if self.f is not None:
            object.__setattr__(self, "f", tuple(float(v) for v in self.f))

    def to_dict(self) -> dict:
        return {"potential": self.potential.to_dict(), "H": self.H,
                "allow_single": self.allow_single, "eps_grid": list(self.eps_grid),
                "f": list(self.f) if self.f is not None else None,
                "simulation": asdict(self.simulation)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict) or "potential" not in d:
            raise UsageError("config must be an object with a 'potential' entry")
        known = {"potential", "H", "allow_single", "eps_grid", "f", "simulation"}
        extra = set(d) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        p = d["potential"]
        try:
            if isinstance(p, str):
                spec = builtin_spec(p)
            elif "box" in p and "dim" in p:
                spec = PotentialSpec.from_dict(p)
            else:
                if p.get("name") not in BUILTINS:
                    raise ValueError(f"unknown potential name: {p.get('name')!r}")
                spec = builtin_spec(p["name"], p.get("dim"), **p.get("params", {}))
        except (ValueError, TypeError, KeyError) as exc:
            raise UsageError(f"invalid potential: {exc}") from exc
        sim = d.get("simulation") or {}
        try:
            sim = SimulationSettings(**sim)
        except TypeError as exc:
            raise UsageError(f"invalid simulation settings: {exc}") from exc
        return cls(spec, d.get("H", "auto"), bool(d.get("allow_single", False)),
                   tuple(d.get("eps_grid", (0.1, 0.05, 0.02))), d.get("f"), sim)

    def digest(self) -> str:
        return hashlib.sha256(io.dumps(self.to_dict()).encode()).hexdigest()


def load_config(path) -> RunConfig:
    try:
        return RunConfig.from_dict(io.read_json(path))
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {path}") from exc
    except ValueError as exc:  # JSON decode errors
        raise UsageError(f"config is not valid JSON: {exc}") from exc
