"""Weighted particle ensembles: sampling, deposition, interpolation, snapshots.

Initial data use a quiet start. Velocities are a shifted rank-1 lattice
pushed through the inverse CDF of the velocity profile. Every velocity
"beam" carries its own shifted lattice of positions, mapped through the
inverse CDF of the spatial marginal. Free streaming moves each beam
rigidly, so a uniform beam remains an equally spaced lattice and deposits a
flat density up to spline aliasing.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import FormatError, NonFinite, UnknownScenario
from .grid import ScalarField, TorusGrid, VectorField

SNAP_MAGIC = "vpme-snap"
SNAP_VERSION = "v1"


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        w = np.array(self.weights, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape != v.shape or w.shape != (x.shape[0],):
            raise ValueError(f"inconsistent shapes {x.shape}, {v.shape}, {w.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise NonFinite("particle state contains non-finite values")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        x = np.mod(x, 1.0)
        # mod can round tiny negatives up to exactly 1.0
        x[x >= 1.0] = 0.0
        for a in (x, v, w):
            a.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def replace(self, positions=None, velocities=None) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.positions if positions is None else positions,
            self.velocities if velocities is None else velocities,
            self.weights,
        )

    def phase_points(self) -> np.ndarray:
        return np.hstack([self.positions, self.velocities])

    def subsample_indices(self, m: int) -> np.ndarray:
        """Deterministic systematic subsample of ``min(m, N)`` indices."""
        if m >= self.N:
            return np.arange(self.N)
        return np.floor((np.arange(m) + 0.5) * self.N / m).astype(int)


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    """Initial datum. ``params`` override the defaults of the named family."""

    name: str
    params: dict = field(default_factory=dict)

    DEFAULTS = {
        "uniform_maxwellian": {"sigma": 1.0},
        "perturbed_maxwellian": {"delta": 0.1, "mode": 1, "sigma": 1.0},
        "two_stream": {"v0": 1.0, "delta": 0.05, "mode": 1, "sigma": 0.3},
        "compact_support": {"R_x": 0.25, "R_v": 3.0},
    }

    def __post_init__(self):
        if self.name not in self.DEFAULTS:
            raise UnknownScenario(f"unknown scenario {self.name!r}; "
                                  f"expected one of {sorted(self.DEFAULTS)}")
        unknown = set(self.params) - set(self.DEFAULTS[self.name])
        if unknown:
            raise UnknownScenario(f"{self.name} has no parameters {sorted(unknown)}")

    def get(self, key):
        return self.params.get(key, self.DEFAULTS[self.name][key])

    def f_linf(self, dim: int) -> float:
        """Sup norm of the initial phase-space density."""
        if self.name == "uniform_maxwellian":
            return (2 * math.pi * self.get("sigma") ** 2) ** (-dim / 2)
        if self.name == "perturbed_maxwellian":
            return (1 + abs(self.get("delta"))) * (2 * math.pi * self.get("sigma") ** 2) ** (-dim / 2)
        if self.name == "two_stream":
            sigma, v0 = self.get("sigma"), self.get("v0")
            g = (2 * math.pi * sigma**2) ** (-dim / 2)
            # the two-bump profile along v_1 peaks at the beam centres or at 0
            s = np.linspace(-v0 - 1e-9, v0 + 1e-9, 2001)
            prof = 0.5 * (np.exp(-(s - v0) ** 2 / (2 * sigma**2)) + np.exp(-(s + v0) ** 2 / (2 * sigma**2)))
            return (1 + abs(self.get("delta"))) * g * float(prof.max())
        R_x, R_v = self.get("R_x"), self.get("R_v")
        return (2 * R_x) ** (-dim) * _epanechnikov_peak(dim) / R_v**dim


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _epanechnikov_peak(d: int) -> float:
    # (1 - |v|^2) on the unit ball, normalized
    return 1.0 / (_unit_ball_volume(d) * 2.0 / (d + 2))


def rank1_lattice(m: int, d: int, shift: np.ndarray) -> np.ndarray:
    """Shifted rank-1 lattice ``frac(i g / m + shift)`` in ``[0, 1)^d``."""
    i = np.arange(m)[:, None]
    if d == 1:
        g = np.array([1])
    elif d == 2:
        # Fibonacci-like generator close to m / golden ratio
        g = np.array([1, _coprime_near(m, m / 1.6180339887498949)])
    else:
        a = _coprime_near(m, m / 1.3247179572447460)
        g = np.array([1, a, (a * a) % m])
    return np.mod(i * g / m + shift, 1.0)


def _coprime_near(m: int, target: float) -> int:
    if m <= 2:
        return 1
    base = int(round(target))
    for off in range(m):
        for c in (base + off, base - off):
            if 1 <= c < m and math.gcd(c, m) == 1:
                return c
    return 1


def beam_layout(N: int) -> list[int]:
    """Split ``N`` particles into beams of roughly ``sqrt(N)`` each."""
    root = max(1, int(round(math.sqrt(N))))
    for size in sorted(range(max(1, root // 2), 2 * root + 1), key=lambda s: abs(s - root)):
        if N % size == 0:
            return [size] * (N // size)
    full, rest = divmod(N, root)
    return [root] * full + ([rest] if rest else [])


def _invert_cos_cdf(u: np.ndarray, delta: float, mode: int) -> np.ndarray:
    """Inverse CDF of ``1 + delta cos(2 pi mode x)`` on [0, 1)."""
    if delta == 0.0:
        return u
    k = 2 * math.pi * mode
    x = u.copy()
    for _ in range(60):
        F = x + delta * np.sin(k * x) / k - u
        x = x - F / (1.0 + delta * np.cos(k * x))
        if np.max(np.abs(F)) < 1e-15:
            break
    return x


def _epanechnikov_radius(u: np.ndarray, d: int) -> np.ndarray:
    """Inverse radial CDF of ``(1 - s^2)`` on the unit ball in ``d`` dims."""
    s = np.linspace(0.0, 1.0, 20001)
    cdf = (s**d / d - s ** (d + 2) / (d + 2)) / (1.0 / d - 1.0 / (d + 2))
    return np.interp(u, cdf, s)


def _velocities(scn: Scenario, u: np.ndarray) -> np.ndarray:
    d = u.shape[1]
    if scn.name in ("uniform_maxwellian", "perturbed_maxwellian"):
        return scn.get("sigma") * ndtri(u)
    if scn.name == "two_stream":
        v = scn.get("sigma") * ndtri(u)
        u1 = u[:, 0]
        left = u1 < 0.5
        # composition: the first coordinate picks the beam, then is reused
        w = np.where(left, 2 * u1, 2 * u1 - 1)
        w = np.clip(w, 1e-16, 1 - 1e-16)
        v[:, 0] = scn.get("sigma") * ndtri(w) + np.where(left, -scn.get("v0"), scn.get("v0"))
        return v
    R = scn.get("R_v")
    if d == 1:
        t = 2 * u[:, 0] - 1
        return (R * np.sign(t) * _epanechnikov_radius(np.abs(t), 1))[:, None]
    r = R * _epanechnikov_radius(u[:, 0], d)
    if d == 2:
        th = 2 * math.pi * u[:, 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    ct = 2 * u[:, 1] - 1
    st = np.sqrt(1 - ct**2)
    ph = 2 * math.pi * u[:, 2]
    return np.stack([r * st * np.cos(ph), r * st * np.sin(ph), r * ct], axis=1)


def _positions(scn: Scenario, u: np.ndarray) -> np.ndarray:
    x = u.copy()
    if scn.name in ("perturbed_maxwellian", "two_stream"):
        x[:, 0] = _invert_cos_cdf(u[:, 0], scn.get("delta"), scn.get("mode"))
    elif scn.name == "compact_support":
        R = scn.get("R_x")
        x = 0.5 - R + 2 * R * u
    return x


def sample_initial(scenario: Scenario | str, N: int, seed: int, dim: int = 1) -> ParticleEnsemble:
    """Quiet-start sample of ``N`` equal-weight particles; deterministic in ``seed``."""
    scn = Scenario(scenario) if isinstance(scenario, str) else scenario
    if N < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(seed)
    beams = beam_layout(N)
    uv = rank1_lattice(len(beams), dim, rng.random(dim))
    # keep the inverse CDFs away from +-inf
    uv = np.clip(uv, 0.5 / N, 1 - 0.5 / N)
    vel_beams = _velocities(scn, uv)
    shifts = rng.random((len(beams), dim))
    xs, vs = [], []
    for b, m in enumerate(beams):
        xs.append(_positions(scn, rank1_lattice(m, dim, shifts[b])))
        vs.append(np.repeat(vel_beams[b:b + 1], m, axis=0))
    return ParticleEnsemble(np.vstack(xs), np.vstack(vs), np.full(N, 1.0 / N))


# ----------------------------------------------------- deposition and gather

def shape_weights(x: np.ndarray, n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """B-spline stencil of one coordinate.

    Returns node indices and weights, both of shape ``(N, order + 1)``; the
    weights of each particle sum to one.
    """
    s = x * n
    w = np.empty((x.shape[0], order + 1))
    if order == 1:
        i0 = np.floor(s)
        u = s - i0
        w[:, 0] = 1.0 - u
        w[:, 1] = u
        first = i0
    elif order == 2:
        i0 = np.floor(s + 0.5)
        t = s - i0
        a, b = 0.5 - t, 0.5 + t
        w[:, 0] = 0.5 * a * a
        w[:, 1] = 0.75 - t * t
        w[:, 2] = 0.5 * b * b
        first = i0 - 1
    elif order == 3:
        i0 = np.floor(s)
        u = s - i0
        v = 1.0 - u
        u2, v2 = u * u, v * v
        w[:, 0] = v2 * v / 6.0
        w[:, 1] = 2.0 / 3.0 - u2 + 0.5 * u2 * u
        w[:, 2] = 2.0 / 3.0 - v2 + 0.5 * v2 * v
        w[:, 3] = u2 * u / 6.0
        first = i0 - 1
    else:
        raise ValueError(f"shape order must be 1, 2 or 3, got {order}")
    idx = first.astype(np.int64)[:, None] + np.arange(order + 1)
    idx %= n
    return idx, w


@dataclass(frozen=True, eq=False)
class Stencil:
    """Flat node indices and tensor-product weights, ``(N, (order+1)^d)``.

    Deposition and gather share one stencil, which makes them adjoint.
    """

    index: np.ndarray
    weight: np.ndarray

    @classmethod
    def build(cls, positions: np.ndarray, n: int, order: int) -> "Stencil":
        d = positions.shape[1]
        idx, w = shape_weights(positions[:, 0], n, order)
        for a in range(1, d):
            ia, wa = shape_weights(positions[:, a], n, order)
            idx = (idx[:, :, None] * n + ia[:, None, :]).reshape(len(positions), -1)
            w = (w[:, :, None] * wa[:, None, :]).reshape(len(positions), -1)
        return cls(idx, w)

    def deposit(self, grid: TorusGrid, weights: np.ndarray) -> ScalarField:
        acc = np.zeros(grid.size)
        # column-by-column accumulation keeps the summation order fixed
        for c in range(self.index.shape[1]):
            acc += np.bincount(self.index[:, c], weights=self.weight[:, c] * weights,
                               minlength=grid.size)
        return ScalarField(grid, acc.reshape(grid.shape) / grid.cell_volume)

    def gather(self, E: VectorField) -> np.ndarray:
        out = np.empty((self.index.shape[0], len(E.components)))
        for a, comp in enumerate(E.components):
            out[:, a] = np.einsum("ij,ij->i", comp.values.ravel()[self.index], self.weight)
        return out


def deposit(ensemble: ParticleEnsemble, grid: TorusGrid, shape_order: int = 3) -> ScalarField:
    """Nodal density ``rho_j = sum_i w_i S(x_j - x_i) / h^d`` (mean one)."""
    if ensemble.dim != grid.dim:
        raise ValueError("ensemble and grid dimensions differ")
    return Stencil.build(ensemble.positions, grid.n, shape_order).deposit(grid, ensemble.weights)


def interpolate_force(E: VectorField, positions: np.ndarray, shape_order: int = 3) -> np.ndarray:
    """Gather a grid vector field at particle positions, shape ``(N, d)``."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    return Stencil.build(pos, E.grid.n, shape_order).gather(E)


# ------------------------------------------------------------------ snapshots

def write_snapshot(path, ensemble: ParticleEnsemble, time: float) -> None:
    """Header line, then little-endian float64 positions, velocities, weights."""
    header = f"{SNAP_MAGIC} {SNAP_VERSION} d={ensemble.dim} N={ensemble.N} t={float(time)!r}\n"
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in (ensemble.positions, ensemble.velocities, ensemble.weights))
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(body)
    os.replace(tmp, path)


def read_snapshot(path) -> tuple[ParticleEnsemble, float]:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        magic, version, d_tok, n_tok, t_tok = raw[:nl].decode("ascii").split(" ")
        if magic != SNAP_MAGIC or version != SNAP_VERSION:
            raise ValueError(f"bad magic {magic!r} {version!r}")
        if not (d_tok.startswith("d=") and n_tok.startswith("N=") and t_tok.startswith("t=")):
            raise ValueError("expected d=, N=, t= fields")
        d, N, t = int(d_tok[2:]), int(n_tok[2:]), float(t_tok[2:])
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: corrupted header ({exc})") from exc
    if d < 1 or N < 1:
        raise FormatError(f"{path}: invalid sizes d={d} N={N}")
    body = raw[nl + 1:]
    expected = 8 * (2 * N * d + N)
    if len(body) != expected:
        raise FormatError(f"{path}: body has {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f8").astype(float)
    x = data[: N * d].reshape(N, d)
    v = data[N * d: 2 * N * d].reshape(N, d)
    w = data[2 * N * d:]
    try:
        ens = ParticleEnsemble(x, v, w)
    except ValueError as exc:
        raise FormatError(f"{path}: invalid particle data ({exc})") from exc
    return ens, t
