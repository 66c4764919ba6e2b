"""Optimal-transport distances between particle ensembles and grid densities.

Phase-space points carry ``periodic`` leading coordinates on the unit torus
(shortest-displacement metric) followed by Euclidean ones; squared costs of
the two factors add.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionError, OutOfRange, SizeMismatch, TooLarge
from .grid import ScalarField

EXACT_CAP = 4000


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray
    masses: np.ndarray
    periodic: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (pts.shape[0],):
            raise SizeMismatch("one mass per point required")
        if not (np.all(np.isfinite(pts)) and np.all(m > 0)):
            raise ValueError("points must be finite and masses positive")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {m.sum()!r}, expected 1")
        if not 0 <= self.periodic <= pts.shape[1]:
            raise ValueError("periodic exceeds the number of coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    @classmethod
    def uniform(cls, points, periodic: int = 0) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), periodic)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.masses, 1.0 / self.size, rtol=1e-12, atol=0.0))


def squared_cost(a: np.ndarray, b: np.ndarray, periodic: int) -> np.ndarray:
    """Pairwise squared distances, torus metric on the first ``periodic`` axes."""
    cost = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        diff = np.abs(a[:, None, j] - b[None, :, j])
        if j < periodic:
            diff = np.mod(diff, 1.0)
            diff = np.minimum(diff, 1.0 - diff)
        cost += diff * diff
    return cost


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.size != nu.size or mu.dim != nu.dim or mu.periodic != nu.periodic:
        raise SizeMismatch(f"measures differ in shape: {mu.points.shape} vs {nu.points.shape}")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise SizeMismatch("exact solver needs equal uniform masses")
    if mu.size > EXACT_CAP:
        raise TooLarge(f"{mu.size} points exceed the exact-solver cap {EXACT_CAP}")


def _assignment_cost(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]))


def w2_exact(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact W2 between equal-size uniform measures via optimal assignment."""
    _check_pair(mu, nu)
    return math.sqrt(_assignment_cost(squared_cost(mu.points, nu.points, mu.periodic)))


def w1_exact(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact W1 with the same ground metric as :func:`w2_exact`."""
    _check_pair(mu, nu)
    return _assignment_cost(np.sqrt(squared_cost(mu.points, nu.points, mu.periodic)))


def _line_samples(m) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, DiscreteMeasure):
        if m.dim != 1 or m.periodic:
            raise DimensionError("quantile formula needs a measure on the real line")
        return m.points[:, 0], m.masses
    x = np.asarray(m, dtype=float)
    if x.ndim != 1:
        raise DimensionError("quantile formula needs one-dimensional samples")
    return x, np.full(x.size, 1.0 / x.size)


def _quantile_pieces(mu, nu):
    """Quantile functions of both measures on a common partition of (0, 1)."""
    x, a = _line_samples(mu)
    y, b = _line_samples(nu)
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, a, y, b = x[ix], a[ix], y[iy], b[iy]
    if x.size == y.size and np.array_equal(a, b):
        return x, y, a
    ca, cb = np.cumsum(a), np.cumsum(b)
    ca[-1] = cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    widths = np.diff(np.concatenate(([0.0], cuts)))
    mids = cuts - 0.5 * widths
    qx = x[np.minimum(np.searchsorted(ca, mids), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cb, mids), y.size - 1)]
    return qx, qy, widths


def w2_1d(mu, nu) -> float:
    """W2 on the real line from sorted samples (quantile coupling)."""
    qx, qy, w = _quantile_pieces(mu, nu)
    return math.sqrt(float(np.sum(w * (qx - qy) ** 2)))


def w1_1d(mu, nu) -> float:
    """W1 on the real line from sorted samples."""
    qx, qy, w = _quantile_pieces(mu, nu)
    return float(np.sum(w * np.abs(qx - qy)))


def systematic_resample(points: np.ndarray, masses: np.ndarray, m: int,
                        offset: float = 0.5) -> np.ndarray:
    """Pick ``m`` equal-mass points at the quantiles ``(j + offset) / m``."""
    cdf = np.cumsum(masses)
    cdf /= cdf[-1]
    u = (np.arange(m) + offset) / m
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(masses) - 1)
    return points[idx]


def cell_measure(rho: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Node positions and cell masses of a density."""
    grid = rho.grid
    vals = np.asarray(rho.values).ravel()
    if vals.min() < 0:
        raise ValueError("density must be nonnegative")
    pts = np.stack([c.ravel() for c in grid.nodes()], axis=1)
    return pts, vals / vals.sum()


@dataclass(frozen=True)
class GridW2:
    distance: float
    noise_floor: float


def grid_w2(rho_1: ScalarField, rho_2: ScalarField, subsample: int = 1000) -> GridW2:
    """W2 between two grid densities through equal-mass resampling.

    The noise floor is the larger of the two self-distances between
    resamplings at quantile offsets 1/4 and 3/4.
    """
    if rho_1.grid != rho_2.grid:
        raise SizeMismatch("densities live on different grids")
    periodic = rho_1.grid.dim
    p1, m1 = cell_measure(rho_1)
    p2, m2 = cell_measure(rho_2)

    def dist(a, b):
        return w2_exact(DiscreteMeasure.uniform(a, periodic), DiscreteMeasure.uniform(b, periodic))

    d = dist(systematic_resample(p1, m1, subsample), systematic_resample(p2, m2, subsample))
    floor = max(
        dist(systematic_resample(p, m, subsample, 0.25), systematic_resample(p, m, subsample, 0.75))
        for p, m in ((p1, m1), (p2, m2))
    )
    return GridW2(d, floor)


@dataclass(frozen=True)
class StabilityFit:
    C: float
    residual: float
    floor_dominated: bool
    t0_implied: float


def stability_scale(d: int) -> float:
    """``16 d e``: the normalizing constant of the log-Lipschitz stability bound."""
    return 16.0 * d * math.e


def fit_stability_constant(times, w2, w0: float, d: int = 1, floor: float = 0.0) -> StabilityFit:
    """Fit ``log L(t)`` by a line, ``L(t) = -log(w2(t)^2 / (16 d e))``.

    The stability bound reads ``L(t) >= L(0) exp(-C t)``, so ``C`` is minus the
    slope. Series at or below ``floor`` cannot be fitted and are flagged.
    """
    t = np.asarray(times, dtype=float)
    w = np.asarray(w2, dtype=float)
    if t.shape != w.shape or t.size < 2:
        raise SizeMismatch("need at least two (t, w2) samples of equal length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be increasing")
    if np.all(w <= floor) or np.any(w <= 0.0):
        return StabilityFit(math.nan, math.nan, True, math.nan)
    scale = stability_scale(d)
    if np.any(w >= math.sqrt(scale)):
        raise OutOfRange(f"w2 must stay below sqrt(16 d e) = {math.sqrt(scale):.4f}")
    logL = np.log(-np.log(w**2 / scale))
    tc = t - t.mean()
    slope = float(np.sum(tc * (logL - logL.mean())) / np.sum(tc * tc))
    fitted = logL.mean() + slope * tc
    residual = float(np.sqrt(np.mean((logL - fitted) ** 2)))
    C = -slope
    return StabilityFit(C, residual, False, implied_t0(w0, C, d))


def implied_t0(w0: float, C: float, d: int = 1) -> float:
    """First time at which the short-time stability bound reaches ``d``."""
    if not w0 > 0 or not C > 0:
        return math.inf
    scale = stability_scale(d)
    L0 = -math.log(w0**2 / scale)
    ratio = L0 / math.log(16.0 * math.e)
    if ratio <= 1.0:
        return 0.0
    return math.log(ratio) / C


def log_L(w2, d: int = 1) -> np.ndarray:
    w = np.asarray(w2, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(-np.log(w**2 / stability_scale(d)))



@dataclass(frozen=True)
class PairedW2:
    """Distance of two paired point clouds with two uncertainty scales.

    ``noise_floor`` is the self-distance between two resamplings of one
    cloud, the floor for unpaired comparisons. ``spread`` is the largest
    change of the paired estimate when the resampling offset moves, the
    floor for clouds that share their particles.
    """

    distance: float
    noise_floor: float
    spread: float


def phase_w2(points_a: np.ndarray, points_b: np.ndarray, masses: np.ndarray | None = None,
             periodic: int = 0, subsample: int = 1000, floors: bool = True) -> PairedW2:
    """W2 between two weighted point clouds sharing one mass vector.

    Clouds of at most ``subsample`` equal-mass points are compared exactly
    and both floors are zero. Larger clouds are reduced by systematic
    resampling, drawing the same indices on both sides. ``floors=False``
    skips the four extra assignments and reports NaN floors.
    """
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise SizeMismatch(f"point clouds differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    w = np.full(n, 1.0 / n) if masses is None else np.asarray(masses, dtype=float)

    def dist(x, y):
        return w2_exact(DiscreteMeasure.uniform(x, periodic), DiscreteMeasure.uniform(y, periodic))

    if n <= subsample and np.allclose(w, 1.0 / n, rtol=1e-12, atol=0.0):
        return PairedW2(dist(a, b), 0.0, 0.0)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]

    def pick(off):
        u = (np.arange(subsample) + off) / subsample
        return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)

    mid, lo, hi = pick(0.5), pick(0.25), pick(0.75)
    d = dist(a[mid], b[mid])
    if not floors:
        return PairedW2(d, math.nan, math.nan)
    spread = max(abs(dist(a[lo], b[lo]) - d), abs(dist(a[hi], b[hi]) - d))
    floor = max(dist(a[lo], a[hi]), dist(b[lo], b[hi]))
    return PairedW2(d, floor, spread)
