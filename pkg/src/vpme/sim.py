"""Particle-in-cell evolution of the kinetic equation under three force laws."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonFinite
from .grid import (
    ScalarField,
    TorusGrid,
    VectorField,
    convolve_mollifier,
    gradient,
    mollifier_multiplier,
)
from .particles import ParticleEnsemble, Stencil, deposit, interpolate_force
from .poisson import PotentialSplit, SolverSettings, electron_field, solve_bar, vpme_field

MODEL_KINDS = ("vpme", "electron", "smooth")


def kernel_from_name(name: str, grid: TorusGrid) -> ScalarField:
    """Named interaction potentials for the smooth-kernel model."""
    x = grid.nodes()
    if name == "cos":
        return ScalarField(grid, np.cos(2 * np.pi * x[0]))
    if name == "cos2":
        return ScalarField(grid, np.cos(4 * np.pi * x[0]))
    if name == "gauss":
        d2 = sum(np.minimum(c, 1 - c) ** 2 for c in x)
        return ScalarField(grid, np.exp(-d2 / (2 * 0.1**2)))
    raise ValueError(f"unknown kernel {name!r}; known: cos, cos2, gauss")


@dataclass(frozen=True, eq=False)
class ForceModel:
    kind: str = "vpme"
    kernel: ScalarField | None = None
    mollifier_radius: float | None = None
    settings: SolverSettings = SolverSettings()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.kind!r}")
        if (self.kind == "smooth") != (self.kernel is not None):
            raise ValueError("a kernel is required for, and only for, the smooth model")
        if self.mollifier_radius is not None:
            # validates the radius
            mollifier_multiplier(TorusGrid(1, 4), self.mollifier_radius)

    @classmethod
    def parse(cls, spec: str, grid: TorusGrid, mollifier_radius=None,
              settings: SolverSettings | None = None) -> "ForceModel":
        """``vpme``, ``electron`` or ``smooth:<kernel-name>``."""
        settings = settings or SolverSettings()
        if spec.startswith("smooth:"):
            return cls("smooth", kernel_from_name(spec.split(":", 1)[1], grid),
                       mollifier_radius, settings)
        return cls(spec, None, mollifier_radius, settings)

    def force_lipschitz(self) -> float:
        """``sup |Hess W|`` (Frobenius), the Lipschitz constant of ``grad W * rho``
        for any probability density rho. Only defined for smooth kernels."""
        if self.kernel is None:
            return math.inf
        grad = gradient(self.kernel)
        hess2 = 0.0
        for comp in grad.components:
            for second in gradient(comp).components:
                hess2 = hess2 + second.values**2
        return float(np.sqrt(np.max(hess2)))


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Grid fields consistent with one deposited density."""

    E: VectorField                       # force field after optional mollification
    split: PotentialSplit | None = None  # VPME potentials
    U_bar: ScalarField | None = None     # electron-model potential
    potential: ScalarField | None = None # W * rho for smooth kernels
    source: ScalarField | None = None    # density the field equation was solved with


def solve_fields(rho: ScalarField, model: ForceModel) -> FieldSolution:
    src = rho
    if model.mollifier_radius is not None:
        src = convolve_mollifier(rho, model.mollifier_radius)
    split = U_bar = potential = None
    if model.kind == "vpme":
        split = vpme_field(src, model.settings)
        E = split.E
    elif model.kind == "electron":
        U_bar, E = solve_bar(src)
    else:
        g = rho.grid
        conv = model.kernel.spectrum * src.spectrum * g.cell_volume
        potential = ScalarField.from_spectrum(g, conv)
        E = -gradient(potential)
    if model.mollifier_radius is not None:
        E = VectorField(tuple(convolve_mollifier(c, model.mollifier_radius) for c in E.components))
    return FieldSolution(E, split, U_bar, potential, src)


@dataclass(frozen=True, eq=False)
class SimState:
    time: float
    ensemble: ParticleEnsemble
    rho: ScalarField
    fields: FieldSolution
    accel: np.ndarray
    model: ForceModel
    grid: TorusGrid
    shape_order: int = 3

    @property
    def split(self) -> PotentialSplit | None:
        return self.fields.split


def initialize(ensemble: ParticleEnsemble, grid: TorusGrid, model: ForceModel,
               shape_order: int = 3, time: float = 0.0) -> SimState:
    rho = deposit(ensemble, grid, shape_order)
    fields = solve_fields(rho, model)
    accel = interpolate_force(fields.E, ensemble.positions, shape_order)
    return SimState(time, ensemble, rho, fields, accel, model, grid, shape_order)


def step(state: SimState, dt: float) -> SimState:
    """One kick-drift-kick leapfrog step with a field solve after the drift."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    ens = state.ensemble
    v_half = ens.velocities + 0.5 * dt * state.accel
    x_new = ens.positions + dt * v_half
    if not (np.all(np.isfinite(v_half)) and np.all(np.isfinite(x_new))):
        raise NonFinite(f"particle state became non-finite at t={state.time + dt}")
    moved = ens.replace(positions=x_new, velocities=v_half)
    stencil = Stencil.build(moved.positions, state.grid.n, state.shape_order)
    rho = stencil.deposit(state.grid, moved.weights)
    fields = solve_fields(rho, state.model)
    accel = stencil.gather(fields.E)
    v_new = v_half + 0.5 * dt * accel
    if not np.all(np.isfinite(v_new)):
        raise NonFinite(f"velocities became non-finite at t={state.time + dt}")
    return replace(state, time=state.time + dt, ensemble=moved.replace(velocities=v_new),
                   rho=rho, fields=fields, accel=accel)


def field_gradient_norm(E: VectorField) -> float:
    """Max over nodes of the Frobenius norm of the Jacobian of ``E``."""
    total = 0.0
    for comp in E.components:
        for der in gradient(comp).components:
            total = total + der.values**2
    return float(np.sqrt(np.max(total)))


def suggest_dt(state: SimState, safety: float = 0.5, eps: float = 1e-12) -> float:
    """``safety * min(h / v_max, 1 / sqrt(||grad E||_inf + eps))``."""
    vmax = float(np.max(np.abs(state.ensemble.velocities)))
    stream = state.grid.h / vmax if vmax > 0 else math.inf
    force = 1.0 / math.sqrt(field_gradient_norm(state.fields.E) + eps)
    return safety * min(stream, force)
