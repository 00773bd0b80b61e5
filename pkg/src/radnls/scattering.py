"""Scattering states, distance to the bound-state library and the amplitude sweep."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundstates import BoundState, Branch, gauge_distance
from .dynamics import StepperConfig, Trajectory, evolve
from .errors import ConfigurationError, ParameterError
from .grid import ModelParams, RadialField, RadialGrid, h1_norm
from .operators import LinearSpectrum

__all__ = [
    "ScatteringRecord",
    "AttractorLibrary",
    "ResolutionReport",
    "SweepRow",
    "SweepTable",
    "extract_scattering_state",
    "attractor_distance",
    "resolution_report",
    "amplitude_sweep",
    "worker_count",
    "WORKERS_ENV",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "RADNLS_WORKERS"


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be >= 1")
    return n


def _require_free(spectrum: LinearSpectrum) -> None:
    if not spectrum.potential_is_zero:
        raise ParameterError("scattering uses the free flow; pass a spectrum built without V")


def _sponge_active(traj: Trajectory) -> bool:
    sp = traj.config.sponge
    return sp is not None and sp.strength > 0


@dataclass(frozen=True, eq=False)
class ScatteringRecord:
    """Candidates ``w(T) = e^{-iT Delta} u(T)`` and their pairwise H-defects."""

    times: np.ndarray
    candidates: tuple[RadialField, ...] = field(repr=False)
    defects: np.ndarray = field(repr=False)

    @property
    def u_plus(self) -> RadialField:
        return self.candidates[-1]

    def defect(self, t_a: float, t_b: float) -> float:
        i = int(np.argmin(np.abs(self.times - t_a)))
        j = int(np.argmin(np.abs(self.times - t_b)))
        return float(self.defects[i, j])


def _free_backward(spectrum: LinearSpectrum, u: RadialField, t: float) -> RadialField:
    return spectrum.propagate(u, -t)


def extract_scattering_state(traj: Trajectory, spectrum: LinearSpectrum, times) -> ScatteringRecord:
    _require_free(spectrum)
    if spectrum.grid != traj.grid:
        raise ParameterError("trajectory and spectrum live on different grids")
    if _sponge_active(traj):
        raise ConfigurationError("a sponge breaks the isometry of the free flow; extract on an undamped run")
    times = np.asarray(sorted(float(t) for t in times))
    if times.size == 0:
        raise ParameterError("need at least one extraction time")
    cands = tuple(_free_backward(spectrum, traj.at(t), t) for t in times)
    k = len(cands)
    defects = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            defects[i, j] = defects[j, i] = h1_norm(cands[i] - cands[j])
    return ScatteringRecord(times, cands, defects)


@dataclass(frozen=True, eq=False)
class AttractorLibrary:
    """Zero state plus computed bound states, all on one grid.

    Index 0 is always the zero state; bound state ``k`` sits at index ``k+1``.
    """

    grid: RadialGrid
    states: tuple[BoundState, ...] = ()
    params: ModelParams | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for st in self.states:
            if st.grid != self.grid:
                raise ParameterError("library states must share the library grid")
            if self.params is not None and st.params is not None and st.params != self.params:
                raise ParameterError("library states must share model parameters")

    @classmethod
    def from_branch(cls, branch: Branch, grid: RadialGrid, params: ModelParams | None = None, **provenance):
        return cls(grid, tuple(pt.state for pt in branch), params, dict(provenance))

    def __len__(self) -> int:
        return len(self.states) + 1

    def profile(self, index: int) -> RadialField:
        if index == 0:
            return self.grid.zeros()
        return self.states[index - 1].profile


def attractor_distance(v: RadialField, lib: AttractorLibrary) -> tuple[float, int, float]:
    """Distance from ``v`` to the gauge orbits of the library (zero state included)."""
    if v.grid != lib.grid:
        raise ParameterError("field and library live on different grids")
    best = (h1_norm(v), 0, 0.0)
    for k, st in enumerate(lib.states, start=1):
        dist, theta = gauge_distance(v, st.profile)
        if dist < best[0]:
            best = (dist, k, theta)
    return best


@dataclass(frozen=True, eq=False)
class ResolutionReport:
    times: np.ndarray
    remainder_norm: np.ndarray
    distance: np.ndarray
    best_index: np.ndarray
    u_plus: RadialField = field(repr=False)
    window: tuple[float, float] = (0.0, 0.0)
    lower_bound_only: bool = False

    def _last_quarter(self, series: np.ndarray) -> np.ndarray:
        k = len(series)
        return series[k - max(2, k // 4):]

    @property
    def final_remainder(self) -> float:
        """Mean remainder norm over the last quarter of the series."""
        return float(np.mean(self._last_quarter(self.remainder_norm)))

    @property
    def final_distance(self) -> float:
        return float(np.mean(self._last_quarter(self.distance)))

    def settled(self, rel: float = 0.05) -> bool:
        """Mean remainder norm changes by less than ``rel`` across the last quarter.

        The two halves of the last quarter are averaged separately; the
        bound part of the solution beats between trapped modes, so the
        pointwise norm oscillates even after the radiation has left.
        """
        tail = self._last_quarter(self.remainder_norm)
        h = len(tail) // 2
        a, b = float(np.mean(tail[:h])), float(np.mean(tail[h:]))
        top = max(abs(a), abs(b))
        if top == 0.0:
            return True
        return bool(abs(b - a) / top < rel)


def resolution_report(
    traj: Trajectory, spectrum: LinearSpectrum, lib: AttractorLibrary, t_tail_window: float
) -> ResolutionReport:
    """Split late snapshots into radiation ``e^{it Delta} u_+`` and a remainder.

    ``u_+`` is the time average of the candidates ``e^{-it Delta} u(t)`` over
    the trailing window; the average suppresses the part of ``u`` bound in
    the well, whose candidates keep rotating.  With a sponge active the
    radiation has been removed, so the reported norms are lower bounds.
    """
    _require_free(spectrum)
    if spectrum.grid != traj.grid or lib.grid != traj.grid:
        raise ParameterError("trajectory, spectrum and library must share a grid")
    if not t_tail_window > 0:
        raise ParameterError("t_tail_window must be positive")
    t_end = float(traj.times[-1])
    sel = np.flatnonzero(traj.times >= t_end - t_tail_window - 1e-12)
    grid = traj.grid
    lam = spectrum.eigenvalues
    S = spectrum.eigenvectors
    coeffs = S.T @ (grid.to_v[:, None] * traj.values[sel].T)
    back = np.exp(1j * np.outer(lam, traj.times[sel])) * coeffs
    c_plus = back.mean(axis=1)
    u_plus = spectrum.synthesize(c_plus)
    rem_norm, dist, idx = [], [], []
    for k in sel:
        t = float(traj.times[k])
        rad = S @ (np.exp(-1j * t * lam) * c_plus) / grid.to_v
        v = RadialField(grid, traj.values[k] - rad)
        rem_norm.append(h1_norm(v))
        dd, ii, _ = attractor_distance(v, lib)
        dist.append(dd)
        idx.append(ii)
    return ResolutionReport(
        np.array(traj.times[sel]),
        np.array(rem_norm),
        np.array(dist),
        np.array(idx, dtype=int),
        u_plus,
        (float(traj.times[sel[0]]), t_end),
        _sponge_active(traj),
    )


@dataclass(frozen=True)
class SweepRow:
    amplitude: float
    h1_initial: float
    h1_remainder_final: float
    attractor_distance_final: float
    settled: bool


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    lower_bound_only: bool = False

    def row(self, amplitude: float) -> SweepRow:
        for r in self.rows:
            if np.isclose(r.amplitude, amplitude):
                return r
        raise ParameterError(f"no row with amplitude {amplitude}")

    def remainder_ratio(self, a_hi: float, a_lo: float) -> float:
        lo = self.row(a_lo).h1_remainder_final
        return self.row(a_hi).h1_remainder_final / lo if lo else float("inf")

    def saturation_slope(self) -> float:
        """Log-log slope of final remainder against A over settled nonzero rows."""
        pts = [(r.amplitude, r.h1_remainder_final) for r in self.rows
               if r.settled and r.amplitude > 0 and r.h1_remainder_final > 0]
        if len(pts) < 2:
            return float("nan")
        a, m = np.log(np.array(pts)).T
        return float(np.polyfit(a, m, 1)[0])


@dataclass(frozen=True)
class _SweepJob:
    amplitude: float
    profile: RadialField
    params: ModelParams
    config: StepperConfig
    spectrum: LinearSpectrum
    lib: AttractorLibrary
    tail_window: float


def _run_one(job: _SweepJob) -> tuple[SweepRow, Trajectory]:
    u0 = job.profile * job.amplitude
    h_init = h1_norm(u0)
    if job.amplitude == 0:
        empty = Trajectory(job.params, u0.grid, job.config, np.array([0.0]), u0.values[None, :].astype(complex))
        return SweepRow(0.0, 0.0, 0.0, 0.0, True), empty
    traj = evolve(u0, job.params, job.config, job.spectrum)
    rep = resolution_report(traj, job.spectrum, job.lib, job.tail_window)
    row = SweepRow(job.amplitude, h_init, rep.final_remainder, rep.final_distance, rep.settled())
    return row, traj


def amplitude_sweep(
    params: ModelParams,
    spectrum: LinearSpectrum,
    lib: AttractorLibrary,
    amplitudes,
    horizon: float,
    profile: RadialField,
    config: StepperConfig,
    tail_window: float | None = None,
    workers: int | None = None,
) -> tuple[SweepTable, list[Trajectory]]:
    """Evolve ``A * profile`` for each amplitude and tabulate the final remainder.

    ``config.t_end`` is replaced by ``horizon``.  Runs are independent and
    are spread over ``workers`` processes (default from the environment).
    """
    amps = [float(a) for a in amplitudes]
    if any(b < a for a, b in zip(amps, amps[1:])):
        raise ParameterError("amplitudes must be ascending")
    if any(a < 0 for a in amps):
        raise ParameterError("amplitudes must be non-negative")
    _require_free(spectrum)
    cfg = StepperConfig(config.dt, horizon, config.record_every, config.sponge, False)
    cfg.validate_for(profile.grid)
    window = tail_window if tail_window is not None else 0.5 * horizon
    jobs = [_SweepJob(a, profile, params, cfg, spectrum, lib, window) for a in amps]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for (row, _), a in zip(results, amps):
        log.info("sweep A=%g: remainder %.4g, settled=%s", a, row.h1_remainder_final, row.settled)
    sponge = cfg.sponge is not None and cfg.sponge.strength > 0
    return SweepTable(tuple(r for r, _ in results), sponge), [t for _, t in results]
