"""Strang-split time evolution of i u_t + Delta u = |u|^{p-1} u + V u.

The nonlinear (and, by default, potential) substep is an exact pointwise
phase rotation because it leaves ``|u|`` unchanged; the linear substep is
the exact discrete propagator.  Both preserve the discrete L^2 norm.

Sign convention: a bound state ``Q`` with frequency ``E`` solves
``-Delta Q + V Q + |Q|^{p-1} Q = E Q`` and evolves as ``exp(-i E t) Q``.
"""

from __future__ import annotations

import logging
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BlowUpError, ConfigurationError, ParameterError
from .grid import ModelParams, RadialField, RadialGrid, eval_potential, h1_norm
from .operators import LinearSpectrum, build_operator

__all__ = [
    "Sponge",
    "StepperConfig",
    "Trajectory",
    "WallContactWarning",
    "Stepper",
    "nonlinear_phase",
    "strang_step",
    "evolve",
    "duhamel_residual",
    "sponge_profile",
    "sponge_apply",
]

log = logging.getLogger(__name__)


class WallContactWarning(RuntimeWarning):
    """More than 1% of the mass reached the outer 10% of the grid."""


@dataclass(frozen=True)
class Sponge:
    width: float
    strength: float

    def __post_init__(self):
        if not self.width > 0 or self.strength < 0:
            raise ParameterError("sponge needs width > 0 and strength >= 0")


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    t_end: float
    record_every: int = 1
    sponge: Sponge | None = None
    fold_potential: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ParameterError(f"t_end must be non-negative, got {self.t_end}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ParameterError("record_every must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate_for(self, grid: RadialGrid) -> None:
        if self.sponge is not None and not self.sponge.width < grid.r_max / 4:
            raise ParameterError(
                f"sponge width {self.sponge.width} must be below r_max/4 = {grid.r_max / 4}"
            )
        if abs(self.n_steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ParameterError("t_end must be an integer multiple of dt")


@dataclass(eq=False)
class Trajectory:
    params: ModelParams
    grid: RadialGrid
    config: StepperConfig
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    wall_contact: bool = False

    def __len__(self) -> int:
        return len(self.times)

    @property
    def snapshots(self) -> list[tuple[float, RadialField]]:
        return [(float(t), RadialField(self.grid, v)) for t, v in zip(self.times, self.values)]

    def field_at(self, index: int) -> RadialField:
        return RadialField(self.grid, self.values[index])

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ParameterError(f"time {t} is not a recorded snapshot")
        return k

    def at(self, t: float) -> RadialField:
        return self.field_at(self.index_of(t))

    def conservation(self):
        from .diagnostics import conservation_series

        return conservation_series(self)


def nonlinear_phase(values: np.ndarray, tau: float, p: float, vpot, nonlinear: bool = True):
    """Exact flow of i u_t = (|u|^{p-1} + V) u over time ``tau``."""
    rate = np.abs(values) ** (p - 1) if nonlinear else 0.0
    if vpot is not None:
        rate = rate + vpot
    if np.isscalar(rate) and rate == 0.0:
        return values.astype(complex)
    return values * np.exp(-1j * tau * rate)


def _potential_for(params: ModelParams, grid: RadialGrid):
    if params.potential.is_zero:
        return None
    return eval_potential(params.potential, grid).values.real


def strang_step(
    u: RadialField,
    dt: float,
    params: ModelParams,
    spectrum: LinearSpectrum,
    fold_potential: bool = False,
) -> RadialField:
    """One Strang step using the dense spectral propagator.

    With ``fold_potential`` the spectrum must include V and the phase
    substeps carry only the power nonlinearity.
    """
    if u.grid != spectrum.grid:
        raise ParameterError("field and spectrum live on different grids")
    vpot = None if fold_potential else _potential_for(params, u.grid)
    if fold_potential and spectrum.potential_is_zero and not params.potential.is_zero:
        raise ParameterError("fold_potential needs a spectrum built with the potential")
    if not fold_potential and not spectrum.potential_is_zero:
        raise ParameterError("unfolded stepping needs the free spectrum")
    half = nonlinear_phase(u.values, 0.5 * dt, params.p, vpot, params.nonlinear)
    lin = spectrum.propagate(RadialField(u.grid, half), dt).values
    out = nonlinear_phase(lin, 0.5 * dt, params.p, vpot, params.nonlinear)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite samples after Strang step", last_good=u)
    return RadialField(u.grid, out)


def sponge_profile(grid: RadialGrid, sponge: Sponge) -> np.ndarray:
    """0 inside ``r_max - width``, smooth C^2 ramp to 1 at the wall."""
    x = np.clip((grid.r - (grid.r_max - sponge.width)) / sponge.width, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def sponge_apply(u: RadialField, sponge: Sponge, dt: float) -> RadialField:
    s = sponge_profile(u.grid, sponge)
    return u.with_values(u.values * np.exp(-dt * sponge.strength * s))


class Stepper:
    """Repeated Strang stepping with a precomputed banded linear propagator."""

    def __init__(self, params: ModelParams, spectrum: LinearSpectrum, config: StepperConfig):
        self.params = params
        self.spectrum = spectrum
        self.config = config
        grid = spectrum.grid
        if config.fold_potential:
            if spectrum.potential_is_zero and not params.potential.is_zero:
                raise ParameterError("fold_potential needs a spectrum built with the potential")
            self.vpot = None
        else:
            if not spectrum.potential_is_zero:
                raise ParameterError("unfolded stepping needs the free spectrum")
            self.vpot = _potential_for(params, grid)
        self.scale = grid.to_v
        self.U = spectrum.step_operator(config.dt)
        self.damping = None
        if config.sponge is not None and config.sponge.strength > 0:
            self.damping = np.exp(-config.dt * config.sponge.strength * sponge_profile(grid, config.sponge))

    def step(self, values: np.ndarray) -> np.ndarray:
        p, nl, dt = self.params.p, self.params.nonlinear, self.config.dt
        w = nonlinear_phase(values, 0.5 * dt, p, self.vpot, nl)
        w = (self.U @ (self.scale * w)) / self.scale
        w = nonlinear_phase(w, 0.5 * dt, p, self.vpot, nl)
        if self.damping is not None:
            w = w * self.damping
        return w


def _outer_fraction(values: np.ndarray, grid: RadialGrid) -> float:
    dens = np.abs(values) ** 2 * grid.weights
    total = dens.sum()
    if total == 0:
        return 0.0
    return float(dens[grid.r > 0.9 * grid.r_max].sum() / total)


def evolve(
    u0: RadialField,
    params: ModelParams,
    config: StepperConfig,
    spectrum: LinearSpectrum | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Trajectory:
    grid = u0.grid
    config.validate_for(grid)
    if params.d != grid.d:
        raise ParameterError(f"model dimension {params.d} differs from grid dimension {grid.d}")
    dens = np.abs(u0.values) ** 2 * grid.weights
    total = dens.sum()
    if total > 0 and dens[grid.r > grid.r_max / 2].sum() > 1e-6 * total:
        raise ConfigurationError("initial data has more than 1e-6 of its mass beyond r_max/2")
    if spectrum is None:
        pot = eval_potential(params.potential, grid) if config.fold_potential else None
        spectrum = build_operator(grid, pot)
    stepper = Stepper(params, spectrum, config)

    n_steps = config.n_steps
    stride = int(config.record_every)
    n_rec = n_steps // stride + 1
    times = np.empty(n_rec)
    values = np.empty((n_rec, grid.n), dtype=complex)
    times[0], values[0] = 0.0, u0.values
    cur = u0.values.astype(complex)
    k_rec = 1
    wall = False
    started = _time.monotonic()
    for step in range(1, n_steps + 1):
        nxt = stepper.step(cur)
        if not np.all(np.isfinite(nxt)):
            last = Trajectory(params, grid, config, times[:k_rec].copy(), values[:k_rec].copy(), wall)
            raise BlowUpError(f"non-finite samples at step {step} (t={step * config.dt:g})", last_good=last)
        cur = nxt
        if step % stride == 0:
            times[k_rec] = step * config.dt
            values[k_rec] = cur
            k_rec += 1
            if not wall and config.sponge is None and _outer_fraction(cur, grid) > 0.01:
                wall = True
                warnings.warn(
                    f"more than 1% of the mass is in the outer 10% of the grid at t={step * config.dt:g}",
                    WallContactWarning,
                    stacklevel=2,
                )
            if progress is not None:
                progress(step, n_steps)
    log.debug("evolve: %d steps in %.2fs", n_steps, _time.monotonic() - started)
    return Trajectory(params, grid, config, times[:k_rec], values[:k_rec], wall)


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros_like(times)
    h = np.diff(times)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def duhamel_residual(traj: Trajectory, t: float, spectrum: LinearSpectrum) -> float:
    """H-norm of u(t) - e^{itD}u0 + i int_0^t e^{i(t-s)D} F(u(s)) ds.

    ``F = |u|^{p-1}u + V u`` and the time integral uses the trapezoid
    rule on recorded snapshots.
    """
    if not spectrum.potential_is_zero:
        raise ParameterError("Duhamel check uses the free propagator")
    k = traj.index_of(t)
    if k == 0:
        return 0.0
    grid = traj.grid
    params = traj.params
    vpot = _potential_for(params, grid)
    S, lam = spectrum.eigenvectors, spectrum.eigenvalues
    ts = traj.times[: k + 1]
    wts = _trapezoid_weights(ts)
    u = traj.values[: k + 1]
    forcing = np.zeros_like(u)
    if params.nonlinear:
        forcing += np.abs(u) ** (params.p - 1) * u
    if vpot is not None:
        forcing += vpot * u
    coeff_f = (S.T @ (grid.to_v[:, None] * forcing.T))
    tk = ts[-1]
    phases = np.exp(-1j * np.outer(lam, tk - ts))
    integral = (phases * coeff_f) @ wts
    c0 = S.T @ (grid.to_v * u[0])
    lin = np.exp(-1j * tk * lam) * c0
    resid_c = S.T @ (grid.to_v * u[-1]) - lin + 1j * integral
    return h1_norm(spectrum.synthesize(resid_c))
