"""Electrostatics of the massless-electron model on the torus.

The potential solving ``Laplacian(U) = exp(U) - rho`` is split as
``U = U_bar + U_hat`` with

* ``Laplacian(U_bar) = 1 - rho``                      (linear, singular part)
* ``Laplacian(U_hat) = exp(U_bar + U_hat) - 1``       (nonlinear, regular part)

The nonlinear part is the unique minimizer of the strictly convex energy

    J(u) = int 1/2 |grad u|^2 + exp(U_bar + u) - u dx,

so it is computed with a damped Newton iteration whose step length is chosen
by backtracking on J.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg

from .errors import NonFinite, NonUnitMass, NoConvergence, PotentialOverflow
from .grid import (
    ScalarField,
    TorusGrid,
    VectorField,
    gradient,
    invert_laplacian,
)

log = logging.getLogger(__name__)

# exp(709.78) is the largest finite double
EXP_LIMIT = 700.0
MASS_TOL = 1e-10
NEGATIVE_NOISE = 1e-12
DENSE_LIMIT = 1024


@dataclass(frozen=True)
class SolverSettings:
    newton_tol: float = 1e-10
    max_iters: int = 50
    damping: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class PotentialSplit:
    U_bar: ScalarField
    U_hat: ScalarField
    E_bar: VectorField
    E_hat: VectorField
    newton_residual: float
    newton_iters: int
    # variational energy at every accepted iterate, starting from U_hat = 0
    energy_history: tuple[float, ...] = field(default=())

    @property
    def U(self) -> ScalarField:
        return self.U_bar + self.U_hat

    @property
    def E(self) -> VectorField:
        return self.E_bar + self.E_hat


def _check_density(rho: ScalarField) -> np.ndarray:
    """Validate a mass-one density and return a cleaned copy of its values.

    Values in ``[-1e-12, 0)`` are deposition round-off: they are clamped and
    the mass restored. Anything more negative is kept, with a warning.
    """
    if not rho.is_finite():
        raise NonFinite("density contains non-finite values")
    if abs(rho.mean - 1.0) > MASS_TOL:
        raise NonUnitMass(f"density has mean {rho.mean!r}, expected 1")
    vals = np.array(rho.values)
    low = vals.min()
    if low < 0.0:
        if low >= -NEGATIVE_NOISE:
            vals = np.maximum(vals, 0.0)
        else:
            warnings.warn(f"density has negative values down to {low:.3e}", RuntimeWarning,
                          stacklevel=3)
    return vals / vals.mean()


def _zero_mean_source(grid: TorusGrid, vals: np.ndarray) -> ScalarField:
    src = vals - vals.mean()
    return ScalarField(grid, src)


def solve_bar(rho: ScalarField) -> tuple[ScalarField, VectorField]:
    """Linear part: ``Laplacian(U_bar) = 1 - rho``, ``E_bar = -grad U_bar``."""
    vals = _check_density(rho)
    U_bar = invert_laplacian(_zero_mean_source(rho.grid, 1.0 - vals))
    return U_bar, -gradient(U_bar)


def electron_field(rho: ScalarField) -> VectorField:
    """Field of the electron model, ``div E = rho - 1``, ``curl E = 0``."""
    return solve_bar(rho)[1]


class _HatProblem:
    """Residual, energy and Newton systems for the nonlinear part."""

    def __init__(self, U_bar: ScalarField):
        self.grid = U_bar.grid
        self.ubar = U_bar.values
        self.lap = self.grid.laplacian_symbol
        self.dv = self.grid.cell_volume

    def exponent(self, u: np.ndarray) -> np.ndarray:
        return self.ubar + u

    def residual(self, u: np.ndarray, expu: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.inverse(g.forward(u) * self.lap) - expu + 1.0

    def energy(self, u: np.ndarray, expu: np.ndarray) -> float:
        g = self.grid
        # -1/2 int u Lap(u) = 1/2 int |grad u|^2 with the same Laplacian symbol
        lap_u = g.inverse(g.forward(u) * self.lap)
        return float(np.sum(-0.5 * u * lap_u + expu - u) * self.dv)

    def newton_step(self, residual: np.ndarray, expu: np.ndarray) -> np.ndarray:
        """Solve ``(Lap - diag(exp)) s = -residual``."""
        g = self.grid
        if g.size <= DENSE_LIMIT:
            jac = g.laplacian_matrix - np.diag(expu.ravel())
            # -jac is symmetric positive definite
            s = sla.solve(-jac, residual.ravel(), assume_a="pos")
            return s.reshape(g.shape)
        return self._newton_step_cg(residual, expu)

    def _newton_step_cg(self, residual: np.ndarray, expu: np.ndarray) -> np.ndarray:
        g = self.grid
        shape, size = g.shape, g.size
        c = float(np.mean(expu))
        precond_symbol = 1.0 / (c - self.lap)

        def apply(x):
            x = x.reshape(shape)
            return (-g.inverse(g.forward(x) * self.lap) + expu * x).ravel()

        def precond(x):
            return g.inverse(g.forward(x.reshape(shape)) * precond_symbol).ravel()

        A = LinearOperator((size, size), matvec=apply, dtype=float)
        M = LinearOperator((size, size), matvec=precond, dtype=float)
        s, info = cg(A, residual.ravel(), rtol=1e-13, atol=0.0, maxiter=2000, M=M)
        if info > 0:
            log.debug("inner CG stopped after %d iterations", info)
        return s.reshape(shape)


def solve_hat(U_bar: ScalarField, settings: SolverSettings | None = None):
    """Nonlinear part: ``Laplacian(U_hat) = exp(U_bar + U_hat) - 1``.

    Returns ``(U_hat, E_hat, newton_residual, newton_iters, energy_history)``
    where the residual is the final sup-norm residual.
    """
    settings = settings or SolverSettings()
    if not U_bar.is_finite():
        raise NonFinite("U_bar contains non-finite values")
    if U_bar.values.max() > EXP_LIMIT:
        raise PotentialOverflow(f"max U_bar = {U_bar.values.max():.1f} exceeds {EXP_LIMIT}")

    prob = _HatProblem(U_bar)
    u = np.zeros(U_bar.grid.shape)
    expu = np.exp(prob.exponent(u))
    res = prob.residual(u, expu)
    J = prob.energy(u, expu)
    history = [J]
    rnorm = float(np.max(np.abs(res)))
    iters = 0
    while rnorm > settings.newton_tol:
        if iters >= settings.max_iters:
            raise NoConvergence(
                f"no convergence after {iters} Newton iterations, residual {rnorm:.3e}", rnorm)
        step = prob.newton_step(res, expu)
        # grad J = -res, so the directional derivative along step is:
        slope = -float(np.sum(res * step) * prob.dv)
        slack = 1e-14 * (abs(J) + 1.0)
        alpha = 1.0
        while True:
            trial = u + alpha * step
            expo = prob.exponent(trial)
            if expo.max() <= EXP_LIMIT:
                exp_trial = np.exp(expo)
                J_trial = prob.energy(trial, exp_trial)
                if J_trial <= J + settings.armijo * alpha * slope + slack:
                    break
            alpha *= settings.damping
            if alpha < 1e-12:
                raise NoConvergence(
                    f"line search failed at iteration {iters}, residual {rnorm:.3e}", rnorm)
        u, expu, J = trial, exp_trial, J_trial
        res = prob.residual(u, expu)
        rnorm = float(np.max(np.abs(res)))
        history.append(J)
        iters += 1
    # the iterate lives in the zero-mean-Laplacian range only up to round-off
    U_hat = ScalarField(U_bar.grid, u)
    return U_hat, -gradient(U_hat), rnorm, iters, tuple(history)


def vpme_field(rho: ScalarField, settings: SolverSettings | None = None) -> PotentialSplit:
    """Full split solve of ``Laplacian(U) = exp(U) - rho``."""
    U_bar, E_bar = solve_bar(rho)
    U_hat, E_hat, res, iters, hist = solve_hat(U_bar, settings)
    return PotentialSplit(U_bar, U_hat, E_bar, E_hat, res, iters, hist)


def vpme_residual(rho: ScalarField, split: PotentialSplit) -> float:
    """Sup norm of ``Laplacian(U) - exp(U) + rho``."""
    g = rho.grid
    U = split.U.values
    lap = g.inverse(g.forward(U) * g.laplacian_symbol)
    return float(np.max(np.abs(lap - np.exp(U) + rho.values)))


def neutrality_defect(split: PotentialSplit) -> float:
    """``int exp(U) dx - 1``."""
    return float(np.mean(np.exp(split.U.values)) - 1.0)


def l2_norm(vec: VectorField) -> float:
    g = vec.grid
    return float(np.sqrt(np.sum(vec.stacked() ** 2) * g.cell_volume))


def hat_stability_gap(rho_1: ScalarField, rho_2: ScalarField,
                      settings: SolverSettings | None = None, subsample: int = 1000):
    """L2 distance of the regular fields next to the W2 distance of the densities.

    Returns ``(gap, w2)`` with ``gap = ||E_hat_1 - E_hat_2||_L2`` and ``w2``
    from :func:`vpme.wasserstein.grid_w2`.
    """
    from .wasserstein import grid_w2

    s1 = vpme_field(rho_1, settings)
    s2 = vpme_field(rho_2, settings)
    diff = s1.E_hat + (-s2.E_hat)
    w2 = grid_w2(rho_1, rho_2, subsample).distance
    return l2_norm(diff), w2
