"""Plain-text experiment configuration: ``key = value`` lines, ``#`` comments.

Recognized keys (defaults in parentheses):

    dim (1)                   spatial dimension, 1..3
    n_grid (64)               grid points per axis, a power of two >= 4
    n_particles (100000)
    dt (0.001)                positive number or ``auto``
    t_end (1.0)
    model (vpme)              vpme | electron | smooth:<cos|cos2|gauss>
    mollifier_radius (none)   number in (0, 1/2] or ``none``
    scenario (perturbed_maxwellian)
    sigma, delta, mode, v0, R_x, R_v   parameters of the chosen scenario
    seed (0)
    log_every (10)            steps between diagnostics rows
    snapshot_every (0)        steps between snapshots; 0 keeps first and last
    out (.)                   output directory
    shape_order (3)           B-spline order 1..3
    newton_tol (1e-10)
    max_iters (50)
    moment_order (6)          order of the m_cfg diagnostics column
    w2_subsample (4000)       points per side for exact W2
    stability_samples (11)    sample times of a stability run
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .particles import Scenario

SCENARIO_KEYS = ("sigma", "delta", "mode", "v0", "R_x", "R_v")
KERNELS = ("cos", "cos2", "gauss")


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _nonnegative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise ValueError("must be a nonnegative integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise ValueError("must be a positive finite number")
    return v


def _finite_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _dt(text: str):
    return None if text.lower() == "auto" else _positive_float(text)


def _radius(text: str):
    if text.lower() == "none":
        return None
    v = _positive_float(text)
    if v > 0.5:
        raise ValueError("must lie in (0, 1/2]")
    return v


def _model(text: str) -> str:
    if text in ("vpme", "electron"):
        return text
    if text.startswith("smooth:") and text.split(":", 1)[1] in KERNELS:
        return text
    raise ValueError(f"expected vpme, electron or smooth:<{'|'.join(KERNELS)}>")


def _scenario(text: str) -> str:
    if text not in Scenario.DEFAULTS:
        raise ValueError(f"unknown scenario; expected one of {sorted(Scenario.DEFAULTS)}")
    return text


def _moment_order(text: str) -> float:
    v = float(text)
    if not 0 <= v <= 8:
        raise ValueError("must lie in [0, 8]")
    return v


PARSERS = {
    "dim": _positive_int,
    "n_grid": _positive_int,
    "n_particles": _positive_int,
    "dt": _dt,
    "t_end": _positive_float,
    "model": _model,
    "mollifier_radius": _radius,
    "scenario": _scenario,
    "seed": _nonnegative_int,
    "log_every": _positive_int,
    "snapshot_every": _nonnegative_int,
    "out": str,
    "shape_order": _positive_int,
    "newton_tol": _positive_float,
    "max_iters": _positive_int,
    "moment_order": _moment_order,
    "w2_subsample": _positive_int,
    "stability_samples": _positive_int,
    "sigma": _positive_float,
    "delta": _finite_float,
    "mode": _positive_int,
    "v0": _positive_float,
    "R_x": _positive_float,
    "R_v": _positive_float,
}


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 1
    n_grid: int = 64
    n_particles: int = 100_000
    dt: float | None = 1e-3
    t_end: float = 1.0
    model: str = "vpme"
    mollifier_radius: float | None = None
    scenario: str = "perturbed_maxwellian"
    scenario_params: dict = field(default_factory=dict)
    seed: int = 0
    log_every: int = 10
    snapshot_every: int = 0
    out: str = "."
    shape_order: int = 3
    newton_tol: float = 1e-10
    max_iters: int = 50
    moment_order: float = 6.0
    w2_subsample: int = 4000
    stability_samples: int = 11

    def problems(self):
        """Yield ``(key, message)`` for every cross-field inconsistency."""
        if self.dim not in (1, 2, 3):
            yield "dim", "dim must be 1, 2 or 3"
        if self.n_grid < 4 or self.n_grid & (self.n_grid - 1):
            yield "n_grid", "n_grid must be a power of two >= 4"
        if self.shape_order not in (1, 2, 3):
            yield "shape_order", "shape_order must be 1, 2 or 3"
        if self.w2_subsample > 4000:
            yield "w2_subsample", "w2_subsample must not exceed the exact-solver cap 4000"
        if self.stability_samples < 2:
            yield "stability_samples", "stability_samples must be at least 2"
        allowed = Scenario.DEFAULTS[self.scenario]
        for key in self.scenario_params:
            if key not in allowed:
                yield key, f"scenario {self.scenario} has no parameter {key!r}"

    def scenario_object(self) -> Scenario:
        return Scenario(self.scenario, dict(self.scenario_params))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        """Canonical form, without the output directory."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name in ("out", "scenario_params"):
                continue
            v = getattr(self, f.name)
            if v is None:
                v = "auto" if f.name == "dt" else "none"
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        for k in sorted(self.scenario_params):
            lines.append(f"{k} = {self.scenario_params[k]!r}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values, params, where = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in where:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {where[key]})")
        try:
            parsed = PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}: {exc}") from None
        where[key] = lineno
        (params if key in SCENARIO_KEYS else values)[key] = parsed
    cfg = ExperimentConfig(**values, scenario_params=params)
    for key, msg in cfg.problems():
        loc = f"{source}:{where[key]}" if key in where else source
        raise ConfigError(f"{loc}: {msg}")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
