"""Periodic grid on the unit torus and the Fourier-multiplier operators on it.

Every operator here is diagonal in Fourier space: the Laplacian, its inverse
in the zero-mean gauge, spectral differentiation and the Gaussian mollifier.
Fields are immutable; each operation returns a new field.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import InvalidRadius, NonFinite, NonZeroMean

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "fft_workers",
    "laplacian",
    "invert_laplacian",
    "gradient",
    "divergence",
    "convolve_mollifier",
    "mollifier_multiplier",
]


def fft_workers() -> int:
    """Thread cap for transforms, read from ``VPME_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("VPME_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid of ``n**dim`` nodes ``x_j = j / n`` on the unit torus."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")

    @property
    def h(self) -> float:
        # exact for powers of two
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def nodes(self) -> list[np.ndarray]:
        """Node coordinates, one broadcastable array per axis."""
        x = np.arange(self.n) * self.h
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))

    # spectral layout follows rfftn: full axes first, half axis last
    @cached_property
    def modes(self) -> list[np.ndarray]:
        """Integer mode numbers per axis, broadcast to the rfftn shape."""
        full = sfft.fftfreq(self.n, d=1.0 / self.n)
        half = sfft.rfftfreq(self.n, d=1.0 / self.n)
        axes = [full] * (self.dim - 1) + [half]
        return [np.asarray(m) for m in np.meshgrid(*axes, indexing="ij")]

    @cached_property
    def mode_norm(self) -> np.ndarray:
        """Euclidean length of the integer mode vector."""
        return np.sqrt(sum(m**2 for m in self.modes))

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        return -((2.0 * np.pi) ** 2) * self.mode_norm**2

    @cached_property
    def derivative_symbols(self) -> list[np.ndarray]:
        # the Nyquist mode is invisible on the nodes, so its derivative is dropped
        out = []
        for m in self.modes:
            k = 2.0j * np.pi * m
            k = np.where(np.abs(m) == self.n // 2, 0.0, k)
            out.append(k)
        return out

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        """Dense matrix of the spectral Laplacian (small grids only)."""
        eye = np.eye(self.size).reshape((self.size,) + self.shape)
        axes = tuple(range(1, self.dim + 1))
        spec = sfft.rfftn(eye, axes=axes, workers=fft_workers())
        cols = sfft.irfftn(spec * self.laplacian_symbol, s=self.shape, axes=axes,
                           workers=fft_workers())
        # column j is the Laplacian of the j-th unit vector
        return cols.reshape(self.size, self.size).T.copy()

    def forward(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values, workers=fft_workers())

    def inverse(self, spectrum: np.ndarray) -> np.ndarray:
        return sfft.irfftn(spectrum, s=self.shape, workers=fft_workers())

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a periodic function on ``grid``."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @cached_property
    def mean(self) -> float:
        """Integral over the unit torus."""
        return float(np.mean(self.values))

    @cached_property
    def spectrum(self) -> np.ndarray:
        return self.grid.forward(self.values)

    @classmethod
    def from_spectrum(cls, grid: TorusGrid, spectrum: np.ndarray) -> "ScalarField":
        return cls(grid, grid.inverse(spectrum))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values - other.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    components: tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise ValueError("all components must live on the same grid")
        if len(comps) != grid.dim:
            raise ValueError(f"expected {grid.dim} components, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> TorusGrid:
        return self.components[0].grid

    def stacked(self) -> np.ndarray:
        """Array of shape ``(dim, n, ..., n)``."""
        return np.stack([c.values for c in self.components])

    @classmethod
    def from_stacked(cls, grid: TorusGrid, arr: np.ndarray) -> "VectorField":
        return cls(tuple(ScalarField(grid, a) for a in arr))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "VectorField":
        return cls.from_stacked(grid, np.zeros((grid.dim,) + grid.shape))

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.stacked() ** 2, axis=0))))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __neg__(self) -> "VectorField":
        return VectorField(tuple(ScalarField(c.grid, -c.values) for c in self.components))


def _require_finite(field: ScalarField, what: str = "field") -> None:
    if not field.is_finite():
        raise NonFinite(f"{what} contains non-finite values")


def laplacian(field: ScalarField) -> ScalarField:
    """Spectral Laplacian, symbol ``-(2 pi |k|)^2`` on every mode."""
    _require_finite(field)
    return ScalarField.from_spectrum(field.grid, field.spectrum * field.grid.laplacian_symbol)


def invert_laplacian(rhs: ScalarField) -> ScalarField:
    """Zero-mean solution of ``Laplacian(phi) = rhs``.

    Raises NonZeroMean unless ``|mean(rhs)| <= 1e-12 * ||rhs||_inf``; the
    periodic Poisson problem has no solution otherwise.
    """
    _require_finite(rhs, "rhs")
    scale = rhs.sup_norm()
    if abs(rhs.mean) > 1e-12 * scale:
        raise NonZeroMean(f"rhs has mean {rhs.mean:.3e} (sup norm {scale:.3e})")
    grid = rhs.grid
    symbol = grid.laplacian_symbol.copy()
    symbol.flat[0] = 1.0
    spec = rhs.spectrum / symbol
    spec.flat[0] = 0.0
    return ScalarField.from_spectrum(grid, spec)


def gradient(field: ScalarField) -> VectorField:
    _require_finite(field)
    grid = field.grid
    spec = field.spectrum
    return VectorField(tuple(ScalarField.from_spectrum(grid, spec * ik)
                             for ik in grid.derivative_symbols))


def divergence(vec: VectorField) -> ScalarField:
    grid = vec.grid
    spec = sum(c.spectrum * ik for c, ik in zip(vec.components, grid.derivative_symbols))
    return ScalarField.from_spectrum(grid, spec)


def mollifier_multiplier(grid: TorusGrid, r: float) -> np.ndarray:
    """Fourier multiplier of the Gaussian mollifier of width ``r``.

    The kernel is the standard Gaussian rescaled to ``r^-d chi(x / r)``,
    periodized and sampled on the nodes, then normalized to unit mass. Its
    transform is ``exp(-(2 pi r |k|)^2 / 2)`` up to aliasing terms of order
    ``exp(-(pi r n)^2 / 2)``, equals 1 at k = 0 and lies in [0, 1]. Because the
    sampled kernel is nonnegative, convolution never increases the sup norm.
    """
    if not (0.0 < r <= 0.5):
        raise InvalidRadius(f"mollifier radius must lie in (0, 1/2], got {r}")
    x = np.arange(grid.n) * grid.h
    x = np.minimum(x, 1.0 - x)
    # r <= 1/2, so images beyond |m| = 3 are below double precision
    kern = sum(np.exp(-0.5 * ((x + m) / r) ** 2) for m in range(-3, 4))
    kern /= kern.sum()
    mult_1d = np.clip(sfft.fft(kern).real, 0.0, 1.0)
    mult = np.ones(grid.modes[0].shape)
    for m in grid.modes:
        mult = mult * mult_1d[m.astype(int) % grid.n]
    return mult


def convolve_mollifier(field: ScalarField, r: float) -> ScalarField:
    mult = mollifier_multiplier(field.grid, r)
    _require_finite(field)
    return ScalarField.from_spectrum(field.grid, field.spectrum * mult)
