"""Radial grid, quadrature, differentiation and the model/potential layer.

A spherically symmetric function on R^d is sampled at the interior nodes
``r_j = j*dr`` (``j = 1..n``) of a uniform grid on ``[0, r_max]``.  The
origin is handled by even parity, the outer wall is Dirichlet.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .errors import DataError, ParameterError

__all__ = [
    "RadialGrid",
    "RadialField",
    "PotentialSpec",
    "ModelParams",
    "sphere_area",
    "make_grid",
    "integrate",
    "radial_derivative",
    "h1_norm",
    "h1_inner",
    "eval_potential",
    "eval_potential_derivative",
    "exponent_window",
    "OutsideWindowWarning",
]


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1}, 2 pi^{d/2} / Gamma(d/2)."""
    return float(np.exp(math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d)))


@dataclass(frozen=True)
class RadialGrid:
    d: int
    n: int
    r_max: float

    @property
    def dr(self) -> float:
        return self.r_max / (self.n + 1)

    @cached_property
    def r(self) -> np.ndarray:
        nodes = self.dr * np.arange(1, self.n + 1, dtype=float)
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def sigma(self) -> float:
        return sphere_area(self.d)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights for ``integral f dx`` (end values are zero)."""
        w = self.sigma * self.dr * self.r ** (self.d - 1)
        w.setflags(write=False)
        return w

    @cached_property
    def to_v(self) -> np.ndarray:
        """Scaling u -> v with ``sum |v|^2 == integral |u|^2 dx``."""
        s = np.sqrt(self.weights)
        s.setflags(write=False)
        return s

    def checksum(self) -> str:
        return f"d={self.d};n={self.n};r_max={self.r_max!r}"

    def field(self, values) -> "RadialField":
        return RadialField(self, values)

    def zeros(self) -> "RadialField":
        return RadialField(self, np.zeros(self.n, dtype=complex))


@dataclass(frozen=True, eq=False)
class RadialField:
    """Complex samples of a radial profile on a grid."""

    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.dtype.kind not in "fc":
            vals = vals.astype(float)
        vals = np.array(vals, dtype=complex if vals.dtype.kind == "c" else float)
        if vals.shape != (self.grid.n,):
            raise DataError(f"field has shape {vals.shape}, grid expects ({self.grid.n},)")
        if not np.all(np.isfinite(vals)):
            raise DataError("field contains non-finite samples")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    def with_values(self, values) -> "RadialField":
        return RadialField(self.grid, values)

    def conj(self) -> "RadialField":
        return self.with_values(np.conj(self.values))

    def abs2(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def is_real(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.imag(self.values)) <= tol))

    def _check(self, other: "RadialField") -> None:
        if other.grid != self.grid:
            raise ParameterError("fields live on different grids")

    def __add__(self, other: "RadialField") -> "RadialField":
        self._check(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "RadialField") -> "RadialField":
        self._check(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar) -> "RadialField":
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "RadialField":
        return self.with_values(-self.values)


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "zero"
    v0: float = 0.0
    r0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "bump"):
            raise ParameterError(f"unknown potential kind {self.kind!r}; use 'zero' or 'bump'")
        if self.kind == "bump" and not self.r0 > 0:
            raise ParameterError(f"bump support radius must be positive, got r0={self.r0}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.v0 == 0.0

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r)
        s2 = (r / self.r0) ** 2
        out = np.zeros_like(r)
        inside = s2 < 1.0
        out[inside] = self.v0 * np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        return out

    def derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r)
        s = r / self.r0
        out = np.zeros_like(r)
        inside = s * s < 1.0
        si = s[inside]
        out[inside] = self(r[inside]) * (-2.0 * si / (self.r0 * (1.0 - si * si) ** 2))
        return out


class OutsideWindowWarning(UserWarning):
    """Exponent outside the mass-supercritical, energy-subcritical window (non-strict mode)."""


def exponent_window(d: int) -> tuple[float, float]:
    """Open interval of mass-supercritical, energy-subcritical exponents."""
    upper = math.inf if d <= 2 else 1.0 + 4.0 / (d - 2)
    return 1.0 + 4.0 / d, upper


@dataclass(frozen=True)
class ModelParams:
    d: int
    p: float
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    nonlinear: bool = True
    strict: bool = True

    def __post_init__(self):
        if self.d < 3:
            raise ParameterError(f"dimension must be >= 3, got d={self.d}")
        if not self.p > 1:
            raise ParameterError(f"p must exceed 1, got p={self.p}")
        lo, hi = exponent_window(self.d)
        if not lo < self.p < hi:
            msg = f"p={self.p} outside the admissible interval ({lo:.6g}, {hi:.6g}) for d={self.d}"
            if self.strict:
                raise ParameterError(msg)
            warnings.warn(msg, OutsideWindowWarning, stacklevel=3)
        if self.d < 5:
            warnings.warn(f"d={self.d} < 5: outside the dimensions the theory covers", stacklevel=3)
        elif self.d < 11:
            warnings.warn(
                f"d={self.d} < 11: the global-attractor theorem needs d >= 11; results are probes",
                stacklevel=3,
            )

    def linear(self) -> "ModelParams":
        """Same model with the power nonlinearity switched off."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ModelParams(self.d, self.p, self.potential, nonlinear=False, strict=self.strict)

    def without_potential(self) -> "ModelParams":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ModelParams(self.d, self.p, PotentialSpec(), self.nonlinear, self.strict)

    def with_potential(self, potential: PotentialSpec) -> "ModelParams":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ModelParams(self.d, self.p, potential, self.nonlinear, self.strict)


def make_grid(d: int, n: int, r_max: float) -> RadialGrid:
    errors = []
    if int(d) != d or d < 3:
        errors.append(f"d must be an integer >= 3 (got {d})")
    if int(n) != n or n < 16:
        errors.append(f"n must be an integer >= 16 (got {n})")
    if not (np.isfinite(r_max) and r_max > 0):
        errors.append(f"r_max must be positive (got {r_max})")
    if errors:
        raise ParameterError("; ".join(errors))
    return RadialGrid(int(d), int(n), float(r_max))


def _values(f) -> np.ndarray:
    vals = f.values if isinstance(f, RadialField) else np.asarray(f)
    if not np.all(np.isfinite(vals)):
        raise DataError("non-finite samples")
    return vals


def integrate(f: RadialField):
    """Trapezoid approximation of the integral of ``f`` over R^d.

    Returns a real number for real input and a complex number otherwise.
    """
    vals = _values(f)
    total = np.dot(f.grid.weights, vals)
    if np.iscomplexobj(total):
        return complex(total)
    return float(total)


def _derivative_array(vals: np.ndarray, dr: float) -> np.ndarray:
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - vals[:-2]) / (2.0 * dr)
    # even profile through r_1, r_2: f = a + b r^2
    out[0] = 2.0 * (vals[1] - vals[0]) / (3.0 * dr)
    out[-1] = -vals[-2] / (2.0 * dr)
    return out


def radial_derivative(f: RadialField) -> RadialField:
    """Second-order centred d/dr; even parity at the origin, zero beyond r_max."""
    vals = _values(f)
    return f.with_values(_derivative_array(vals, f.grid.dr))


def h1_inner(f: RadialField, g: RadialField) -> complex:
    """<f, g>_H = integral f conj(g) + f_r conj(g_r)."""
    if f.grid != g.grid:
        raise ParameterError("fields live on different grids")
    fv, gv = _values(f), _values(g)
    dr = f.grid.dr
    w = f.grid.weights
    return complex(
        np.dot(w, fv * np.conj(gv))
        + np.dot(w, _derivative_array(fv, dr) * np.conj(_derivative_array(gv, dr)))
    )


def h1_norm(f: RadialField) -> float:
    vals = _values(f)
    w = f.grid.weights
    df = _derivative_array(vals, f.grid.dr)
    return float(np.sqrt(np.dot(w, np.abs(vals) ** 2) + np.dot(w, np.abs(df) ** 2)))


def eval_potential(spec: PotentialSpec, grid: RadialGrid) -> RadialField:
    if spec.kind == "bump" and not spec.r0 > 0:
        raise ParameterError("bump support radius must be positive")
    return RadialField(grid, spec(grid.r))


def eval_potential_derivative(spec: PotentialSpec, grid: RadialGrid) -> RadialField:
    return RadialField(grid, spec.derivative(grid.r))
