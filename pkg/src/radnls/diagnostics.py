"""Conserved quantities, virial machinery, Morawetz, Hardy and tail analysis."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DataError, DegenerateInputError, ParameterError
from .grid import (
    ModelParams,
    RadialField,
    eval_potential,
    eval_potential_derivative,
    radial_derivative,
)
from .operators import centrifugal_constant

__all__ = [
    "TailDominanceWarning",
    "VirialWeight",
    "VirialReport",
    "TailProfile",
    "TailFit",
    "ConservationSeries",
    "mass",
    "gradient_energy",
    "energy",
    "conservation_series",
    "virial_flux",
    "virial_rhs",
    "virial_identity_check",
    "virial_primitive_check",
    "morawetz_density",
    "morawetz_accumulate",
    "morawetz_series",
    "hardy_check",
    "weighted_moment",
    "cauchy_schwarz_moment",
    "tail_profile",
    "decay_exponent_fit",
    "virial_energy_coercivity",
]


class TailDominanceWarning(RuntimeWarning):
    """The outermost 10% of the domain carries more than 1% of a moment."""


def _checked(u: RadialField) -> np.ndarray:
    if not np.all(np.isfinite(u.values)):
        raise DataError("non-finite samples")
    return u.values


def mass(u: RadialField) -> float:
    return float(np.dot(u.grid.weights, np.abs(_checked(u)) ** 2))


def gradient_energy(u: RadialField) -> float:
    """Discrete Dirichlet form for integral |grad u|^2 dx.

    This is <u, -Delta_h u> for the same stencil the propagators use, so it
    is exactly the kinetic part conserved by the semi-discrete flow.
    """
    grid = u.grid
    v = grid.to_v * _checked(u)
    dv = np.diff(np.concatenate(([0.0], v, [0.0])))
    kin = np.sum(np.abs(dv) ** 2) / grid.dr**2
    cd = centrifugal_constant(grid.d)
    if cd:
        kin += cd * np.sum(np.abs(v) ** 2 / grid.r**2)
    return float(kin)


def energy(u: RadialField, params: ModelParams) -> float:
    """1/2 int |grad u|^2 + 1/2 int V |u|^2 + 1/(p+1) int |u|^{p+1}."""
    grid = u.grid
    vals = _checked(u)
    dens = np.abs(vals) ** 2
    total = 0.5 * gradient_energy(u)
    if not params.potential.is_zero:
        total += 0.5 * float(np.dot(grid.weights, params.potential(grid.r) * dens))
    if params.nonlinear:
        total += float(np.dot(grid.weights, dens ** (0.5 * (params.p + 1)))) / (params.p + 1)
    return total


@dataclass(frozen=True)
class ConservationSeries:
    times: np.ndarray
    mass: np.ndarray
    energy: np.ndarray

    @property
    def mass_drift(self) -> float:
        m0 = self.mass[0]
        return float(np.max(np.abs(self.mass - m0)) / m0) if m0 else float(np.max(np.abs(self.mass)))

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(1.0, abs(e0)))


def conservation_series(traj) -> ConservationSeries:
    m = np.array([mass(traj.field_at(i)) for i in range(len(traj))])
    e = np.array([energy(traj.field_at(i), traj.params) for i in range(len(traj))])
    return ConservationSeries(np.array(traj.times), m, e)


# ---------------------------------------------------------------- weights


def _smoothstep_poly(R: float) -> Polynomial:
    """Septic step in r: 0 at R, 1 at 2R, first three derivatives vanish at both ends."""
    x = Polynomial([-1.0, 1.0 / R])
    return -20 * x**7 + 70 * x**6 - 84 * x**5 + 35 * x**4


TRUNCATION_STYLES = ("none", "convex_linear", "compact")


@dataclass(frozen=True, eq=False)
class VirialWeight:
    """Radial weight a(r) for the virial identity.

    ``kind`` is one of ``abs``, ``quadratic``, ``quartic``, ``custom``.  With
    ``style='convex_linear'`` the second derivative is smoothly switched off
    on ``[R, 2R]`` so that ``a`` stays convex and is linear beyond ``2R``.
    With ``style='compact'`` the first derivative is switched off instead,
    so ``a`` is constant beyond ``2R`` and the weight never sees the wall.
    Custom weights pass callables ``a, da, d2a[, d3a, d4a]``.
    """

    kind: str
    R: float | None = None
    style: str = "none"
    custom: dict[str, Callable] | None = None
    _pieces: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in ("abs", "quadratic", "quartic", "custom"):
            raise ParameterError(f"unknown weight kind {self.kind!r}")
        if self.style not in TRUNCATION_STYLES:
            raise ParameterError(f"unknown truncation style {self.style!r}")
        if self.style != "none":
            if self.kind not in ("quadratic", "quartic"):
                raise ParameterError("truncation applies to quadratic/quartic weights")
            if self.R is None or not self.R > 0:
                raise ParameterError("truncation radius R must be positive")
            object.__setattr__(self, "_pieces", self._build_pieces())
        if self.kind == "custom":
            if not self.custom or not all(k in self.custom for k in ("a", "da", "d2a")):
                raise ParameterError("custom weight needs callables a, da, d2a")

    @classmethod
    def truncated(cls, kind: str, R: float, style: str = "convex_linear") -> "VirialWeight":
        return cls(kind, R=R, style=style)

    def _build_pieces(self):
        R = float(self.R)
        if self.kind == "quadratic":
            a_in = Polynomial([0.0, 0.0, 1.0])
        else:
            a_in = Polynomial([0.0, 0.0, 0.0, 0.0, 1.0])
        step = _smoothstep_poly(R)
        if self.style == "convex_linear":
            d2_mid = a_in.deriv(2) * (1 - step)
            d1_mid = d2_mid.integ(lbnd=R, k=a_in.deriv(1)(R))
        else:
            d1_mid = a_in.deriv(1) * (1 - step)
        a_mid = d1_mid.integ(lbnd=R, k=a_in(R))
        slope, val = d1_mid(2 * R), a_mid(2 * R)
        a_out = Polynomial([val - slope * 2 * R, slope])
        return (a_in, a_mid, a_out)

    @property
    def is_truncated(self) -> bool:
        return self.style != "none"

    def derivatives(self, r: np.ndarray, order: int = 4) -> list[np.ndarray]:
        """[a, a', a'', a''', a''''] up to ``order`` evaluated at ``r``."""
        r = np.asarray(r, dtype=float)
        if self.kind == "custom":
            names = ["a", "da", "d2a", "d3a", "d4a"][: order + 1]
            missing = [k for k in names if k not in self.custom]
            if missing:
                raise ParameterError(f"custom weight lacks derivative(s) {missing}")
            return [np.asarray(self.custom[k](r), dtype=float) * np.ones_like(r) for k in names]
        if self.kind == "abs":
            out = [r.copy(), np.ones_like(r)] + [np.zeros_like(r)] * 3
            return out[: order + 1]
        if not self.is_truncated:
            poly = Polynomial([0, 0, 1.0]) if self.kind == "quadratic" else Polynomial([0, 0, 0, 0, 1.0])
            return [poly.deriv(k)(r) if k else poly(r) for k in range(order + 1)]
        R = float(self.R)
        regions = [r < R, (r >= R) & (r < 2 * R), r >= 2 * R]
        out = []
        for k in range(order + 1):
            vals = np.zeros_like(r)
            for mask, poly in zip(regions, self._pieces):
                if np.any(mask):
                    vals[mask] = (poly.deriv(k) if k else poly)(r[mask])
            out.append(vals)
        return out

    def laplacian(self, r: np.ndarray, d: int) -> np.ndarray:
        if self.kind == "quadratic" and not self.is_truncated:
            return np.full_like(np.asarray(r, dtype=float), 2.0 * d)
        if self.kind == "quartic" and not self.is_truncated:
            return 4.0 * (d + 2) * np.asarray(r, dtype=float) ** 2
        _, a1, a2 = self.derivatives(r, order=2)
        return a2 + (d - 1) * a1 / r

    def bilaplacian(self, r: np.ndarray, d: int) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "quadratic" and not self.is_truncated:
            return np.zeros_like(r)
        if self.kind == "quartic" and not self.is_truncated:
            return np.full_like(r, 8.0 * d * (d + 2))
        if self.kind == "abs":
            return -(d - 1) * (d - 3) / r**3
        return self.bilaplacian_general(r, d)

    def bilaplacian_general(self, r: np.ndarray, d: int) -> np.ndarray:
        """Radial bi-Laplacian from a', a'', a''', a'''' (no closed-form shortcut)."""
        _, a1, a2, a3, a4 = self.derivatives(r, order=4)
        return a4 + 2 * (d - 1) * a3 / r + (d - 1) * (d - 3) * (a2 / r**2 - a1 / r**3)


@dataclass
class VirialReport:
    weight: VirialWeight
    window: tuple[float, float]
    times: np.ndarray = field(repr=False)
    flux: np.ndarray = field(repr=False)
    lhs_rate: np.ndarray = field(repr=False)
    rhs_terms: dict[str, np.ndarray] = field(repr=False)
    residual: float = 0.0

    @property
    def rhs(self) -> np.ndarray:
        return sum(self.rhs_terms.values())

    @property
    def residual_series(self) -> np.ndarray:
        return np.abs(self.lhs_rate - self.rhs)

    @property
    def relative_residual(self) -> float:
        """sup_t |residual| / sup_t |rhs|."""
        scale = float(np.max(np.abs(self.rhs)))
        return self.residual / scale if scale else self.residual


def virial_flux(u: RadialField, w: VirialWeight) -> float:
    """M_a(u) = int a'(r) Im(conj(u) u_r) dx."""
    vals = _checked(u)
    ur = radial_derivative(u).values
    a1 = w.derivatives(u.grid.r, order=1)[1]
    return float(np.dot(u.grid.weights, a1 * np.imag(np.conj(vals) * ur)))


def virial_rhs(u: RadialField, w: VirialWeight, params: ModelParams) -> dict[str, float]:
    """Hessian, pressure, bi-Laplacian and potential terms of the virial identity."""
    grid = u.grid
    r, wts = grid.r, grid.weights
    vals = _checked(u)
    dens = np.abs(vals) ** 2
    ur = radial_derivative(u).values
    derivs = w.derivatives(r, order=2)
    a1, a2 = derivs[1], derivs[2]
    hess = 2.0 * float(np.dot(wts, a2 * np.abs(ur) ** 2))
    if params.nonlinear:
        p = params.p
        press = (p - 1) / (p + 1) * float(np.dot(wts, dens ** (0.5 * (p + 1)) * w.laplacian(r, grid.d)))
    else:
        press = 0.0
    bilap = -0.5 * float(np.dot(wts, dens * w.bilaplacian(r, grid.d)))
    if params.potential.is_zero:
        pot = 0.0
    else:
        dV = eval_potential_derivative(params.potential, grid).values.real
        pot = -float(np.dot(wts, a1 * dV * dens))
    return {"hessian": hess, "pressure": press, "bilaplacian": bilap, "potential": pot}


def _time_derivative(times: np.ndarray, series: np.ndarray) -> np.ndarray:
    return np.gradient(series, times, edge_order=2)


def virial_identity_check(traj, w: VirialWeight) -> VirialReport:
    if len(traj) < 3:
        raise ParameterError("virial check needs at least 3 snapshots")
    times = np.asarray(traj.times, dtype=float)
    flux = np.empty(len(traj))
    terms = {k: np.empty(len(traj)) for k in ("hessian", "pressure", "bilaplacian", "potential")}
    for i in range(len(traj)):
        u = traj.field_at(i)
        flux[i] = virial_flux(u, w)
        for k, val in virial_rhs(u, w, traj.params).items():
            terms[k][i] = val
    rate = _time_derivative(times, flux)
    rhs = sum(terms.values())
    residual = float(np.max(np.abs(rate - rhs)))
    return VirialReport(w, (float(times[0]), float(times[-1])), times, flux, rate, terms, residual)


def virial_primitive_check(traj, w: VirialWeight) -> float:
    """sup_t | d/dt (1/2) int a |u|^2 - int a' Im(conj(u) u_r) |."""
    if len(traj) < 3:
        raise ParameterError("primitive check needs at least 3 snapshots")
    times = np.asarray(traj.times, dtype=float)
    a0 = w.derivatives(traj.grid.r, order=0)[0]
    half_moment = 0.5 * (np.abs(traj.values) ** 2 * traj.grid.weights) @ a0
    flux = np.array([virial_flux(traj.field_at(i), w) for i in range(len(traj))])
    return float(np.max(np.abs(_time_derivative(times, half_moment) - flux)))


def morawetz_density(u: RadialField, params: ModelParams) -> float:
    """int |u|^{p+1}/|x| + |u|^2/|x|^3 dx (the angular term vanishes for radial u)."""
    r = u.grid.r
    dens = np.abs(_checked(u)) ** 2
    integrand = dens / r**3
    if params.nonlinear:
        integrand = integrand + dens ** (0.5 * (params.p + 1)) / r
    return float(np.dot(u.grid.weights, integrand))


def morawetz_series(traj, params: ModelParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative trapezoid time integral of the Morawetz density at each snapshot."""
    params = params or traj.params
    times = np.asarray(traj.times, dtype=float)
    dens = np.array([morawetz_density(traj.field_at(i), params) for i in range(len(traj))])
    cum = np.zeros_like(times)
    if len(times) > 1:
        cum[1:] = np.cumsum(0.5 * np.diff(times) * (dens[1:] + dens[:-1]))
    return times, cum


def morawetz_accumulate(traj, params: ModelParams | None = None) -> float:
    params = params or traj.params
    if not params.potential.is_zero:
        warnings.warn("Morawetz boundedness is only expected for V = 0", RuntimeWarning, stacklevel=2)
    return float(morawetz_series(traj, params)[1][-1])


def hardy_check(f: RadialField, beta: float) -> tuple[float, float]:
    """(((d+beta)/2)^2 int |f|^2 |x|^beta,  int |f_r|^2 |x|^{beta+2})."""
    grid = f.grid
    r = grid.r
    vals = _checked(f)
    fr = radial_derivative(f).values
    const = ((grid.d + beta) / 2.0) ** 2
    lhs = const * float(np.dot(grid.weights, np.abs(vals) ** 2 * r**beta))
    rhs = float(np.dot(grid.weights, np.abs(fr) ** 2 * r ** (beta + 2)))
    return lhs, rhs


def _warn_tail(integrand: np.ndarray, f: RadialField, what: str) -> None:
    total = float(np.sum(integrand))
    outer = float(np.sum(integrand[f.grid.r > 0.9 * f.grid.r_max]))
    if total > 0 and outer > 0.01 * total:
        warnings.warn(f"{what}: outer 10% of the domain carries {outer / total:.1%}", TailDominanceWarning, stacklevel=3)


def weighted_moment(u: RadialField, k: int) -> float:
    """int |u|^2 |x|^k dx."""
    if k < 0:
        raise ParameterError("moment order must be >= 0")
    integrand = u.grid.weights * np.abs(_checked(u)) ** 2 * u.grid.r**k
    _warn_tail(integrand, u, f"moment k={k}")
    return float(np.sum(integrand))


def cauchy_schwarz_moment(u: RadialField, j: float) -> float:
    """int |u| |u_r| |x|^j dx."""
    vals = _checked(u)
    ur = radial_derivative(u).values
    integrand = u.grid.weights * np.abs(vals) * np.abs(ur) * u.grid.r**j
    _warn_tail(integrand, u, f"mixed moment j={j}")
    return float(np.sum(integrand))


# ---------------------------------------------------------------- tails


@dataclass(frozen=True)
class TailProfile:
    d: int
    radii: np.ndarray
    mass_tail: np.ndarray
    grad_tail: np.ndarray


@dataclass(frozen=True)
class TailFit:
    slope: float
    constant: float
    max_ratio: float
    grad_slope: float
    grad_max_ratio: float


def _tail_integral(r: np.ndarray, g: np.ndarray, r_max: float, radii: np.ndarray) -> np.ndarray:
    """int_R^{r_max} of the piecewise-linear interpolant of g (g(0)=g(r_max)=0)."""
    nodes = np.concatenate(([0.0], r, [r_max]))
    vals = np.concatenate(([0.0], g, [0.0]))
    cells = 0.5 * np.diff(nodes) * (vals[1:] + vals[:-1])
    tail_from_node = np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
    idx = np.clip(np.searchsorted(nodes, radii, side="right") - 1, 0, len(nodes) - 2)
    x0, x1 = nodes[idx], nodes[idx + 1]
    g0, g1 = vals[idx], vals[idx + 1]
    gR = g0 + (g1 - g0) * (radii - x0) / (x1 - x0)
    return tail_from_node[idx + 1] + 0.5 * (x1 - radii) * (gR + g1)


def tail_profile(u: RadialField, radii) -> TailProfile:
    grid = u.grid
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii.size == 0 or radii[0] <= 0 or radii[-1] >= grid.r_max:
        raise ParameterError(f"tail radii must lie in (0, {grid.r_max})")
    vals = _checked(u)
    dens = grid.sigma * grid.r ** (grid.d - 1)
    m = _tail_integral(grid.r, dens * np.abs(vals) ** 2, grid.r_max, radii)
    ur = radial_derivative(u).values
    g = _tail_integral(grid.r, dens * np.abs(ur) ** 2, grid.r_max, radii)
    # enforce exact monotonicity against roundoff
    m = np.maximum(np.minimum.accumulate(m), 0.0)
    g = np.maximum(np.minimum.accumulate(g), 0.0)
    return TailProfile(grid.d, radii, m, g)


def decay_exponent_fit(profile: TailProfile, window: tuple[float, float] | None = None) -> TailFit:
    """Log-log slope of the tail mass plus sup_R R^{d-4} M(R) and sup_R R^{d-2} G(R)."""
    R, M, G = profile.radii, profile.mass_tail, profile.grad_tail
    sel = np.ones_like(R, dtype=bool) if window is None else (R >= window[0]) & (R <= window[1])
    if not np.any(M > 0):
        raise DegenerateInputError("tail mass underflowed everywhere")
    use = sel & (M > 0)
    if use.sum() < 4:
        raise DegenerateInputError("need at least 4 radii with positive tail mass")
    lr = np.log(R[use])
    slope, icpt = np.polyfit(lr, np.log(M[use]), 1)
    guse = sel & (G > 0)
    gslope = float(np.polyfit(np.log(R[guse]), np.log(G[guse]), 1)[0]) if guse.sum() >= 2 else -math.inf
    d = profile.d
    return TailFit(
        float(slope),
        float(math.exp(icpt)),
        float(np.max(R[sel] ** (d - 4) * M[sel])),
        gslope,
        float(np.max(R[sel] ** (d - 2) * G[sel])),
    )


def virial_energy_coercivity(traj) -> dict[str, float]:
    """Fit c in 4 int|grad u|^2 + 2d(p-1)/(p+1) int |u|^{p+1} >= c E(u) (V = 0 runs).

    Returns the fitted c (minimum over snapshots of the ratio), the
    time-averaged ratio and the pointwise lower bound min(8, 2d(p-1)).
    """
    params = traj.params
    if not params.potential.is_zero:
        raise ParameterError("coercivity fit is for V = 0 runs")
    d, p = params.d, params.p
    ratios = []
    combos, energies = [], []
    for i in range(len(traj)):
        u = traj.field_at(i)
        kin = gradient_energy(u)
        pot = float(np.dot(u.grid.weights, np.abs(u.values) ** (p + 1))) if params.nonlinear else 0.0
        combo = 4 * kin + 2 * d * (p - 1) / (p + 1) * pot
        e = 0.5 * kin + pot / (p + 1)
        combos.append(combo)
        energies.append(e)
        if e > 0:
            ratios.append(combo / e)
    if not ratios:
        raise DegenerateInputError("zero energy along the trajectory")
    t = np.asarray(traj.times, dtype=float)
    if len(t) > 1:
        avg = float(np.trapezoid(combos, t) / max(np.trapezoid(energies, t), 1e-300))
    else:
        avg = combos[0] / energies[0]
    return {"c": float(min(ratios)), "time_averaged": avg, "bound": float(min(8.0, 2 * d * (p - 1)))}
