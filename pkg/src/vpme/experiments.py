"""Simulation drivers behind the command-line experiments."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .diagnostics import DiagnosticsRecord, collect, moment, write_csv_atomic, write_diagnostics
from .errors import ConfigError, DimMismatch, VPMEError
from .grid import TorusGrid
from .particles import ParticleEnsemble, read_snapshot, sample_initial, write_snapshot
from .poisson import SolverSettings
from .sim import ForceModel, SimState, initialize, step, suggest_dt
from .wasserstein import (
    DiscreteMeasure,
    PairedW2,
    fit_stability_constant,
    log_L,
    phase_w2,
    systematic_resample,
    w1_1d,
    w1_exact,
    w2_exact,
)

log = logging.getLogger(__name__)


def build_grid(cfg: ExperimentConfig) -> TorusGrid:
    return TorusGrid(cfg.dim, cfg.n_grid)


def build_model(cfg: ExperimentConfig, grid: TorusGrid, mollifier_radius="config") -> ForceModel:
    r = cfg.mollifier_radius if mollifier_radius == "config" else mollifier_radius
    settings = SolverSettings(newton_tol=cfg.newton_tol, max_iters=cfg.max_iters)
    return ForceModel.parse(cfg.model, grid, r, settings)


def initial_ensemble(cfg: ExperimentConfig, seed: int | None = None) -> ParticleEnsemble:
    return sample_initial(cfg.scenario_object(), cfg.n_particles,
                          cfg.seed if seed is None else seed, cfg.dim)


def step_plan(cfg: ExperimentConfig, state: SimState) -> tuple[float, int]:
    """Step size and count; ``dt`` is shortened so that the steps tile ``t_end``."""
    dt = cfg.dt if cfg.dt is not None else suggest_dt(state)
    nsteps = max(1, math.ceil(cfg.t_end / dt - 1e-9))
    return cfg.t_end / nsteps, nsteps


def simulate(cfg: ExperimentConfig, ensemble: ParticleEnsemble, model: ForceModel,
             observe=None, marks=None) -> SimState:
    """Run to ``t_end``; ``observe(k, state)`` is called at step 0 and at steps in ``marks``.

    ``marks`` may be a set of step indices or a callable ``nsteps -> set``.
    """
    grid = build_grid(cfg)
    state = initialize(ensemble, grid, model, cfg.shape_order)
    dt, nsteps = step_plan(cfg, state)
    if callable(marks):
        marks = marks(nsteps)
    marks = set(marks or ())
    if observe is not None:
        observe(0, state)
    for k in range(1, nsteps + 1):
        try:
            # time as k * dt avoids drift from repeated addition
            state = replace(step(state, dt), time=k * dt)
        except VPMEError:
            log.error("step %d of %d (t = %.6g) failed", k, nsteps, k * dt)
            raise
        if observe is not None and k in marks:
            observe(k, state)
    return state


def every(n: int):
    """Marks every ``n`` steps plus the last one."""
    return lambda nsteps: set(range(n, nsteps + 1, n)) | {nsteps}


def evenly(samples: int):
    """``samples`` marks evenly spread over the run, first and last included."""
    return lambda nsteps: {round(j * nsteps / (samples - 1)) for j in range(samples)}


def _ensure_out(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_text_atomic(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------- commands

def run(cfg: ExperimentConfig) -> list[DiagnosticsRecord]:
    """Diagnostics every ``log_every`` steps and snapshots into ``cfg.out``."""
    out = _ensure_out(cfg.out)
    if cfg.dim == 3:
        log.warning("d = 3 runs are long; expect minutes per hundred steps")
    _write_text_atomic(os.path.join(out, "config.resolved"), cfg.to_text())
    grid = build_grid(cfg)
    model = build_model(cfg, grid)
    records = []
    log_marks, snap_marks = set(), set()

    def observe(k, state):
        if k in log_marks or k == 0:
            records.append(collect(state, cfg.moment_order))
        if k == 0 or k in snap_marks:
            write_snapshot(os.path.join(out, f"snapshot_{k:06d}.bin"), state.ensemble, state.time)

    def marks(nsteps):
        log_marks.update(every(cfg.log_every)(nsteps))
        if cfg.snapshot_every:
            snap_marks.update(every(cfg.snapshot_every)(nsteps))
        else:
            snap_marks.add(nsteps)
        return log_marks | snap_marks

    try:
        simulate(cfg, initial_ensemble(cfg), model, observe, marks)
    finally:
        write_diagnostics(os.path.join(out, "diagnostics.csv"), records)
    return records


def moments(cfg: ExperimentConfig, orders) -> dict:
    """``|v|^m`` moments at every logged step; returns columns incl. the sup row."""
    orders = [float(m) for m in orders]
    if not orders or any(not 0 <= m <= 8 for m in orders):
        raise ConfigError("moment orders must lie in [0, 8]")
    out = _ensure_out(cfg.out)
    grid = build_grid(cfg)
    rows = []

    def observe(k, state):
        rows.append([state.time] + [moment(state.ensemble, m) for m in orders])

    try:
        simulate(cfg, initial_ensemble(cfg), build_model(cfg, grid), observe,
                 every(cfg.log_every))
    finally:
        names = [f"m{m:g}" for m in orders]
        table = np.array([r[1:] for r in rows]) if rows else np.zeros((0, len(orders)))
        sup = ["sup"] + [float(c.max()) for c in table.T] if rows else ["sup"]
        write_csv_atomic(os.path.join(out, "moments.csv"), ["time"] + names, rows + [sup])
    return {"time": [r[0] for r in rows], "orders": orders, "table": table,
            "sup": sup[1:]}


@dataclass(frozen=True)
class StabilityResult:
    eps: float
    times: np.ndarray
    w2: np.ndarray
    w1: np.ndarray
    spread: float
    rho_sup: float
    C: float
    residual: float
    floor_dominated: bool
    t0_implied: float
    w1_rate: float


def _perturbed(ens: ParticleEnsemble, eps: float) -> ParticleEnsemble:
    v = np.array(ens.velocities)
    v[:, 0] += eps
    return ens.replace(velocities=v)


def _snapshots(cfg, ensemble, model):
    """Ensembles and density sup norms at the stability sample times."""
    taken = []

    def observe(k, state):
        taken.append((state.time, state.ensemble, float(np.max(state.rho.values))))

    simulate(cfg, ensemble, model, observe, evenly(cfg.stability_samples))
    return taken


def growth_rate(times, values) -> float:
    """Least-squares slope of ``log values`` against time."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if np.any(y <= 0):
        return math.nan
    tc = t - t.mean()
    return float(np.sum(tc * np.log(y)) / np.sum(tc * tc))


def stability(cfg: ExperimentConfig, eps_list, trials: int = 1) -> list[StabilityResult]:
    """Paired runs from ``f0`` and ``f0`` shifted by ``eps`` in ``v_1``; seeds averaged."""
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    if any(not (e >= 0 and math.isfinite(e)) for e in eps_list):
        raise ConfigError("eps values must be nonnegative")
    out = _ensure_out(cfg.out)
    grid = build_grid(cfg)
    model = build_model(cfg, grid)
    d = cfg.dim
    acc = {e: {"w2": 0.0, "w1": 0.0, "spread": 0.0, "rho": 0.0} for e in eps_list}
    times = None
    for trial in range(trials):
        ens0 = initial_ensemble(cfg, cfg.seed + trial)
        base = _snapshots(cfg, ens0, model)
        times = np.array([b[0] for b in base])
        for e in eps_list:
            pert = _snapshots(cfg, _perturbed(ens0, e), model)
            w2s, w1s = [], []
            for j, ((t, a, ra), (_, b, rb)) in enumerate(zip(base, pert)):
                last = j == len(base) - 1
                # the spread is largest where the runs are furthest apart
                pw = phase_w2(a.phase_points(), b.phase_points(), a.weights, d,
                              cfg.w2_subsample, floors=last)
                w2s.append(pw.distance)
                if last:
                    acc[e]["spread"] = max(acc[e]["spread"], pw.spread)
                w1s.append(w1_1d(a.velocities[:, 0], b.velocities[:, 0]) if d == 1 else
                           _phase_w1(a, b, cfg.w2_subsample))
            acc[e]["w2"] = acc[e]["w2"] + np.array(w2s) / trials
            acc[e]["w1"] = acc[e]["w1"] + np.array(w1s) / trials
            acc[e]["rho"] = max(acc[e]["rho"], max(r for _, _, r in base),
                                max(r for _, _, r in pert))
    results = []
    for e in eps_list:
        a_ = acc[e]
        fit = fit_stability_constant(times, a_["w2"], a_["w2"][0], d, a_["spread"])
        results.append(StabilityResult(e, times, a_["w2"], a_["w1"], a_["spread"], a_["rho"],
                                       fit.C, fit.residual, fit.floor_dominated, fit.t0_implied,
                                       growth_rate(times, a_["w1"])))
    lip = model.force_lipschitz()
    write_csv_atomic(os.path.join(out, "stability.csv"), ["eps", "t", "w2", "logL"],
                     [[r.eps, t, w, L] for r in results
                      for t, w, L in zip(r.times, r.w2, log_L(r.w2, d))])
    write_csv_atomic(os.path.join(out, "stability_detail.csv"), ["eps", "t", "w1"],
                     [[r.eps, t, w] for r in results for t, w in zip(r.times, r.w1)])
    write_csv_atomic(
        os.path.join(out, "stability_fit.csv"),
        ["eps", "C", "residual", "t0_implied", "rho_sup", "w2_spread", "floor_dominated",
         "w1_rate", "force_lipschitz"],
        [[r.eps, r.C, r.residual, r.t0_implied, r.rho_sup, r.spread, str(int(r.floor_dominated)),
          r.w1_rate, lip] for r in results])
    return results


def _phase_w1(a: ParticleEnsemble, b: ParticleEnsemble, subsample: int) -> float:
    idx = a.subsample_indices(subsample)
    pa, pb = a.phase_points()[idx], b.phase_points()[idx]
    return w1_exact(DiscreteMeasure.uniform(pa, a.dim), DiscreteMeasure.uniform(pb, a.dim))


@dataclass(frozen=True)
class MollifyRow:
    r: float
    w2: float
    noise_floor: float
    resample_floor: float


def mollify(cfg: ExperimentConfig, radii) -> list[MollifyRow]:
    """Final-time W2 between mollified runs and the unmollified one."""
    radii = [float(r) for r in radii]
    if not radii or any(not 0 < r <= 0.5 for r in radii):
        raise ConfigError("radii must lie in (0, 1/2]")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ConfigError("radii must be strictly decreasing")
    out = _ensure_out(cfg.out)
    grid = build_grid(cfg)
    ens0 = initial_ensemble(cfg)
    ref = simulate(cfg, ens0, build_model(cfg, grid, None)).ensemble
    rows = []
    for r in radii:
        fin = simulate(cfg, ens0, build_model(cfg, grid, r)).ensemble
        pw: PairedW2 = phase_w2(ref.phase_points(), fin.phase_points(), ref.weights, cfg.dim,
                                cfg.w2_subsample)
        rows.append(MollifyRow(r, pw.distance, pw.spread, pw.noise_floor))
        log.info("r = %g: w2 = %.3e (floor %.1e)", r, pw.distance, pw.spread)
    write_csv_atomic(os.path.join(out, "mollify.csv"), ["r", "w2", "noise_floor", "resample_floor"],
                     [[m.r, m.w2, m.noise_floor, m.resample_floor] for m in rows])
    return rows


def snapshot_w2(path_a, path_b, subsample: int = 1000) -> PairedW2:
    """W2 between two snapshot files in the periodic-x phase-space metric.

    Snapshots of one ensemble (equal N) are compared particle-paired; others
    are reduced independently to equal-size resamplings.
    """
    a, _ = read_snapshot(path_a)
    b, _ = read_snapshot(path_b)
    if a.dim != b.dim:
        raise DimMismatch(f"snapshots have dimensions {a.dim} and {b.dim}")
    if a.N == b.N:
        return phase_w2(a.phase_points(), b.phase_points(), a.weights, a.dim, subsample)
    m = min(subsample, a.N, b.N)

    def dist(x, y):
        return w2_exact(DiscreteMeasure.uniform(x, a.dim), DiscreteMeasure.uniform(y, a.dim))

    pa, pb = a.phase_points(), b.phase_points()
    sa = [systematic_resample(pa, a.weights, m, o) for o in (0.5, 0.25, 0.75)]
    sb = [systematic_resample(pb, b.weights, m, o) for o in (0.5, 0.25, 0.75)]
    d = dist(sa[0], sb[0])
    floor = max(dist(sa[1], sa[2]), dist(sb[1], sb[2]))
    spread = max(abs(dist(sa[i], sb[i]) - d) for i in (1, 2))
    return PairedW2(d, floor, spread)
