"""Nonlinear bound states, their frequency branch and tail bounds.

Sign convention (shared with :mod:`radnls.dynamics`): a bound state solves

    -Delta Q + V Q + |Q|^{p-1} Q = E Q

and evolves as ``exp(-i E t) Q``.  Trapped ground states have ``E`` in
``(lambda_1, 0)``; the other common convention uses ``-E``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.special

from .diagnostics import energy, mass, tail_profile
from .errors import (
    BracketingError,
    DataError,
    DegenerateInputWarning,
    ParameterError,
    SolverError,
)
from .grid import ModelParams, PotentialSpec, RadialField, RadialGrid, h1_inner, h1_norm
from .operators import LinearSpectrum, resolvent_apply

__all__ = [
    "BoundState",
    "BranchPoint",
    "Branch",
    "TailBoundReport",
    "linear_ground_state",
    "equation_residual",
    "petviashvili_solve",
    "shoot_solve",
    "richardson_profile",
    "gauge_distance",
    "tail_bound_check",
    "continue_branch",
]

IMAG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BoundState:
    """A real profile ``Q`` with frequency ``E`` and its equation defect.

    ``residual`` is the H-norm of the discrete defect on ``profile.grid``.
    For Petviashvili states it is below ``tol``; for shooting states the
    profile solves the continuum ODE and the defect measures grid error.
    """

    profile: RadialField
    frequency: float
    residual: float
    params: ModelParams | None = None
    tol: float = math.nan
    iterations: int = 0
    method: str = "petviashvili"

    def __post_init__(self):
        vals = self.profile.values
        if np.iscomplexobj(vals):
            if np.max(np.abs(vals.imag), initial=0.0) > IMAG_TOL:
                raise DataError("bound-state profile must be real")
            object.__setattr__(self, "profile", self.profile.with_values(vals.real))

    @property
    def amplitude(self) -> float:
        return float(self.profile.values[0])

    @property
    def phase_frequency(self) -> float:
        """omega in ``u = e^{i omega t} Q``, i.e. the convention ``-omega Q + Delta Q = |Q|^{p-1} Q + V Q``."""
        return -self.frequency

    @property
    def grid(self) -> RadialGrid:
        return self.profile.grid

    def h1_norm(self) -> float:
        return h1_norm(self.profile)

    def is_ground_state(self, tol: float = 1e-8) -> bool:
        vals = self.profile.values
        return bool(np.min(vals) >= -tol * np.max(np.abs(vals)))


def linear_ground_state(spectrum: LinearSpectrum) -> tuple[float, RadialField]:
    """Smallest eigenpair of -Delta + V, eigenfunction positive at the origin, unit L^2 norm."""
    lam = float(spectrum.eigenvalues[0])
    e1 = np.array(spectrum.eigenfunction(0).values.real)
    if e1[0] < 0:
        e1 = -e1
    return lam, RadialField(spectrum.grid, e1)


def _nonlinearity(q: np.ndarray, p: float, nonlinear: bool) -> np.ndarray:
    if not nonlinear:
        return np.zeros_like(q)
    return np.abs(q) ** (p - 1) * q


def equation_residual(q: RadialField, E: float, spectrum: LinearSpectrum, params: ModelParams) -> float:
    """H-norm of ``(-Delta + V - E) Q + |Q|^{p-1} Q`` by direct stencil application."""
    _check_folded(spectrum, params)
    lin = spectrum.apply(q, -E).values
    defect = lin + _nonlinearity(q.values, params.p, params.nonlinear)
    return h1_norm(q.with_values(defect))


def _check_folded(spectrum: LinearSpectrum, params: ModelParams) -> None:
    if spectrum.grid.d != params.d:
        raise ParameterError("spectrum and model have different dimensions")
    if not params.potential.is_zero and spectrum.potential_is_zero:
        raise ParameterError("bound-state solvers need a spectrum built with the potential")


def _weighted_dot(grid: RadialGrid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(grid.weights, a * b))


def bifurcation_seed(spectrum: LinearSpectrum, E: float, p: float) -> RadialField:
    """``a e1`` with ``a`` chosen so the Petviashvili factor is 1 at the seed."""
    lam, e1 = linear_ground_state(spectrum)
    grid = spectrum.grid
    if not E > lam:
        raise ParameterError(f"E={E} must lie above lambda_1={lam} for a defocusing bound state")
    moment = _weighted_dot(grid, np.ones(grid.n), np.abs(e1.values) ** (p + 1))
    a = ((E - lam) / moment) ** (1.0 / (p - 1))
    return e1 * a


def petviashvili_solve(
    params: ModelParams,
    spectrum: LinearSpectrum,
    E_target: float,
    seed: RadialField | None = None,
    tol: float = 1e-8,
    max_iter: int = 3000,
    damping: float = 0.5,
    step_tol: float = 1e-13,
) -> BoundState:
    """Stabilised fixed point of ``Q = (-Delta + V - E)^{-1}(-|Q|^{p-1} Q)``.

    Each sweep rescales the resolvent image by ``gamma^kappa`` with
    ``gamma = <L Q, Q> / <N(Q), Q>``, ``kappa = p/(p-1)``, and mixes it with
    the previous iterate (``damping`` is the weight of the new image).  The
    mixing keeps the iteration contractive further along the branch, where
    the plain scheme starts to oscillate with period two.
    """
    _check_folded(spectrum, params)
    if not params.nonlinear:
        raise ParameterError("the nonlinear bound-state problem needs nonlinear=True")
    if not E_target < 0:
        raise ParameterError(f"E={E_target} must be below the essential spectrum (E < 0)")
    if not 0 < damping <= 1:
        raise ParameterError("damping must lie in (0, 1]")
    grid = spectrum.grid
    p = params.p
    kappa = p / (p - 1)
    if seed is None:
        seed = bifurcation_seed(spectrum, E_target, p)
    q = np.array(seed.values.real, dtype=float)
    if seed.grid != grid:
        raise ParameterError("seed lives on a different grid")
    if not q[0] > 0:
        raise ParameterError("seed must be positive at the origin")
    norm_q = math.sqrt(_weighted_dot(grid, q, q))
    it = 0
    for it in range(1, max_iter + 1):
        nq = -np.abs(q) ** (p - 1) * q
        lq = spectrum.apply(RadialField(grid, q), -E_target).values
        den = _weighted_dot(grid, nq, q)
        gamma = _weighted_dot(grid, lq, q) / den if den else math.nan
        if not gamma > 0:
            raise SolverError(
                f"Petviashvili factor gamma={gamma:.3e} is not positive; the seed is in the wrong basin",
                iterations=it,
            )
        image = resolvent_apply(spectrum, -E_target, RadialField(grid, nq)).values.real
        new = (1.0 - damping) * q + damping * gamma**kappa * image
        norm_new = math.sqrt(_weighted_dot(grid, new, new))
        change = math.sqrt(_weighted_dot(grid, new - q, new - q)) / max(norm_new, 1e-300)
        q, norm_q = new, norm_new
        if norm_q == 0.0:
            raise SolverError("iteration collapsed to zero", iterations=it)
        if change < step_tol:
            break
        if it % 25 == 0 and equation_residual(RadialField(grid, q), E_target, spectrum, params) <= 0.1 * tol:
            break
    profile = RadialField(grid, q)
    res = equation_residual(profile, E_target, spectrum, params)
    if not res <= tol:
        raise SolverError(
            f"Petviashvili stopped after {it} iterations with residual {res:.3e} > tol {tol:.1e}",
            residual=res,
            iterations=it,
        )
    return BoundState(profile, float(E_target), res, params, tol, it, "petviashvili")


# ------------------------------------------------------------------ shooting


def _scalar_potential(spec: PotentialSpec):
    if spec.is_zero:
        return lambda r: 0.0
    v0, r0 = spec.v0, spec.r0

    def pot(r: float) -> float:
        s2 = (r / r0) ** 2
        return v0 * math.exp(1.0 - 1.0 / (1.0 - s2)) if s2 < 1.0 else 0.0

    return pot


def _support_radius(spec: PotentialSpec) -> float:
    return 0.0 if spec.is_zero else spec.r0


class _Shooter:
    """Integrate Q'' + (d-1) Q'/r = (V - E) Q + |Q|^{p-1} Q from near the origin."""

    R_START = 1e-5

    def __init__(self, params: ModelParams, E: float, r_end: float, rtol: float):
        self.d, self.p, self.E = params.d, params.p, E
        self.kappa = math.sqrt(-E)
        self.pot = _scalar_potential(params.potential)
        self.r_end = r_end
        self.rtol = rtol

    def rhs(self, r, y):
        q, dq = y
        return [dq, (self.pot(r) - self.E) * q + abs(q) ** (self.p - 1) * q - (self.d - 1) / r * dq]

    def shoot(self, q0: float):
        d, p, eps = self.d, self.p, self.R_START
        curv = ((self.pot(0.0) - self.E) * q0 + abs(q0) ** (p - 1) * q0) / d
        y0 = [q0 + 0.5 * curv * eps**2, curv * eps]

        def crossing(r, y):
            return y[0]

        def turning(r, y):
            return y[1]

        def runaway(r, y):
            return abs(y[0]) - 1e6 * abs(q0)

        crossing.terminal = True
        turning.terminal = True
        turning.direction = 1
        runaway.terminal = True
        with np.errstate(over="ignore", invalid="ignore"):
            return scipy.integrate.solve_ivp(
                self.rhs,
                (eps, self.r_end),
                y0,
                method="RK45",
                rtol=self.rtol,
                atol=1e-16 * abs(q0),
                events=(crossing, turning, runaway),
                dense_output=True,
            )

    def classify(self, sol) -> int:
        """-1: the shot crosses zero (too small); +1: it turns up or runs away (too large)."""
        if sol.t_events[0].size:
            return -1
        if sol.status == -1 or sol.t_events[1].size or sol.t_events[2].size:
            return 1
        q, dq = sol.y[:, -1]
        return 1 if dq + self.kappa * q > 0 else -1


def shoot_solve(
    params: ModelParams,
    E_ours: float,
    amplitude_bracket: tuple[float, float],
    spectrum: LinearSpectrum,
    tol: float = 1e-15,
    rtol: float = 1e-12,
) -> BoundState:
    """Ground state by bisection on ``Q(0)`` between undershooting and overshooting shots.

    The decaying solution is followed out to where the two bracketing shots
    separate; beyond that point (and past the potential support) the exact
    linear tail ``r^{-nu} K_nu(sqrt(-E) r)``, ``nu = (d-2)/2``, is attached.
    The profile is sampled on ``spectrum.grid``.
    """
    _check_folded(spectrum, params)
    if not E_ours < 0:
        raise ParameterError(f"E={E_ours} must be negative")
    lo, hi = (float(a) for a in amplitude_bracket)
    if not 0 < lo < hi:
        raise ParameterError("amplitude bracket must satisfy 0 < lo < hi")
    grid = spectrum.grid
    shooter = _Shooter(params, E_ours, grid.r_max, rtol)
    c_lo, c_hi = shooter.classify(shooter.shoot(lo)), shooter.classify(shooter.shoot(hi))
    if c_lo == c_hi:
        raise BracketingError(
            f"both ends of [{lo:g}, {hi:g}] classify as {'overshoot' if c_lo > 0 else 'undershoot'}"
        )
    sign_lo = c_lo
    iterations = 0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        iterations += 1
        if shooter.classify(shooter.shoot(mid)) == sign_lo:
            lo = mid
        else:
            hi = mid
    s_lo, s_hi = shooter.shoot(lo), shooter.shoot(hi)
    r_end = min(s_lo.t[-1], s_hi.t[-1])
    fine = np.linspace(shooter.R_START, r_end, 20001)
    q_lo = s_lo.sol(fine)[0]
    q_hi = s_hi.sol(fine)[0]
    apart = np.abs(q_lo - q_hi) > 1e-3 * np.abs(q_lo)
    r_cut = float(fine[np.argmax(apart)]) if apart.any() else float(r_end)
    r_cut = min(r_cut, float(r_end))

    r = grid.r
    inner = r <= r_cut
    values = np.zeros(grid.n)
    values[inner] = 0.5 * (s_lo.sol(r[inner])[0] + s_hi.sol(r[inner])[0])
    support = _support_radius(params.potential)
    if r_cut > support and np.any(~inner):
        nu = 0.5 * (params.d - 2)
        k = shooter.kappa
        q_cut = 0.5 * (s_lo.sol(r_cut)[0] + s_hi.sol(r_cut)[0])

        def tail(x):
            return x ** (-nu) * scipy.special.kve(nu, k * x) * np.exp(-k * x)

        values[~inner] = q_cut * tail(r[~inner]) / tail(r_cut)
    profile = RadialField(grid, values)
    res = equation_residual(profile, E_ours, spectrum, params)
    return BoundState(profile, float(E_ours), res, params, tol, iterations, "shooting")


def richardson_profile(coarse: BoundState, fine: BoundState) -> RadialField:
    """Second-order extrapolation ``(4 Q_fine - Q_coarse)/3`` on the coarse nodes.

    ``fine`` must live on the nested grid with ``2n+1`` nodes and the same
    ``r_max``, so that every coarse node is also a fine node.
    """
    gc, gf = coarse.grid, fine.grid
    if gf.n != 2 * gc.n + 1 or gf.r_max != gc.r_max or gf.d != gc.d:
        raise ParameterError("fine grid must have 2n+1 nodes on the same interval")
    if coarse.frequency != fine.frequency:
        raise ParameterError("states have different frequencies")
    qf = fine.profile.values[1::2]
    return RadialField(gc, (4.0 * qf - coarse.profile.values) / 3.0)


def gauge_distance(u: RadialField, q: RadialField) -> tuple[float, float]:
    """``min_theta ||u - e^{i theta} q||_H`` and the minimising phase ``arg <u, q>_H``."""
    inner = h1_inner(u, q)
    theta = float(np.angle(inner)) if inner != 0 else 0.0
    diff = u.values - np.exp(1j * theta) * q.values
    return h1_norm(u.with_values(diff)), theta


# ------------------------------------------------------------------ tails


@dataclass(frozen=True)
class TailBoundReport:
    """Suprema over the resolvable window and whether the outer half respects them.

    Each bound ``sup_R R^k T(R)`` is judged finite when its sup over the
    outer half of the window (log scale) does not exceed the inner-half
    sup by more than ``slack``.
    """

    mass_constant: float
    pointwise_constant: float
    grad_constant: float
    mass_ok: bool
    pointwise_ok: bool
    grad_ok: bool
    window: tuple[float, float]
    underflow: bool = False

    @property
    def passed(self) -> bool:
        return self.mass_ok and self.pointwise_ok and self.grad_ok


def _split_sup(r: np.ndarray, g: np.ndarray, slack: float) -> tuple[float, bool]:
    mid = math.sqrt(r[0] * r[-1])
    inner, outer = g[r <= mid], g[r > mid]
    c = float(np.max(g))
    if inner.size == 0 or outer.size == 0:
        return c, True
    return c, bool(np.max(outer) <= (1.0 + slack) * np.max(inner))


def tail_bound_check(
    q: BoundState | RadialField,
    r_min: float | None = None,
    r_hi: float | None = None,
    slack: float = 0.05,
    num: int = 64,
    floor: float = 1e-13,
) -> TailBoundReport:
    """Check the three polynomial tail bounds on a bound-state profile.

    Bounds: ``R^{d-4} int_{|x|>R}|Q|^2``, ``r^{d-2}|Q(r)|`` and
    ``R^{d-2} int_{|x|>R}|grad Q|^2``.  The window starts at ``r_min``
    (default: the potential support, or 10 grid steps) and ends at ``r_hi``
    (default ``0.9 r_max``) or where ``|Q|`` falls below ``floor * max|Q|``.
    A constant is accepted when its sup over the outer (geometric) half of
    the window exceeds the inner-half sup by at most ``slack``.
    """
    profile = q.profile if isinstance(q, BoundState) else q
    grid = profile.grid
    d = grid.d
    if r_min is None:
        support = 0.0
        if isinstance(q, BoundState) and q.params is not None:
            support = _support_radius(q.params.potential)
        r_min = max(support, 10 * grid.dr)
    amp = np.abs(profile.values)
    peak = float(np.max(amp))
    if peak == 0.0:
        raise ParameterError("zero profile has no tail to bound")
    r_hi = 0.9 * grid.r_max if r_hi is None else min(float(r_hi), grid.r_max)
    resolved = amp >= floor * peak
    underflow = False
    beyond = (grid.r > r_min) & ~resolved
    if np.any(beyond):
        first = float(grid.r[beyond][0])
        if first < r_hi:
            underflow = True
            r_hi = first
            warnings.warn(
                f"profile underflows at r={first:.4g}; bounds use [{r_min:.4g}, {r_hi:.4g}] only",
                DegenerateInputWarning,
                stacklevel=2,
            )
    if not r_hi > r_min * 1.5:
        raise ParameterError(f"tail window [{r_min:.4g}, {r_hi:.4g}] is too short")
    radii = np.geomspace(r_min, r_hi, num)
    prof = tail_profile(profile, radii)
    m_const, m_ok = _split_sup(radii, radii ** (d - 4) * prof.mass_tail, slack)
    g_const, g_ok = _split_sup(radii, radii ** (d - 2) * prof.grad_tail, slack)
    sel = (grid.r >= r_min) & (grid.r <= r_hi)
    p_const, p_ok = _split_sup(grid.r[sel], grid.r[sel] ** (d - 2) * amp[sel], slack)
    return TailBoundReport(m_const, p_const, g_const, m_ok, p_ok, g_ok, (float(r_min), float(r_hi)), underflow)


# ------------------------------------------------------------------ branch


@dataclass(frozen=True, eq=False)
class BranchPoint:
    amplitude: float
    state: BoundState
    mass: float
    energy: float
    jump: float = 0.0  # H-distance to the previous point


class Branch(list):
    """List of branch points; ``failure_index`` marks where continuation stopped."""

    def __init__(self, points=(), failure_index: int | None = None, failure: str = ""):
        super().__init__(points)
        self.failure_index = failure_index
        self.failure = failure

    @property
    def complete(self) -> bool:
        return self.failure_index is None

    def is_continuous(self, step: float, factor: float = 10.0) -> bool:
        return all(pt.jump < factor * step for pt in self[1:])


def continue_branch(
    params: ModelParams,
    spectrum: LinearSpectrum,
    E_range: tuple[float, float],
    steps: int,
    tol: float = 1e-8,
    **solver_kw,
) -> Branch:
    """Sweep E from ``E_range[0]`` to ``E_range[1]``, seeding each solve with the last profile.

    Continuation stops (without raising) at the first solver failure or
    when the profile changes sign, which means the ground-state branch has
    ended; the returned branch records the index and reason.
    """
    _check_folded(spectrum, params)
    lam, _ = linear_ground_state(spectrum)
    if not lam < 0:
        raise ParameterError(f"lambda_1={lam:.4g} >= 0: the potential binds nothing")
    steps = int(steps)
    if steps < 0:
        raise ParameterError("steps must be non-negative")
    if steps == 0:
        return Branch()
    energies = np.linspace(E_range[0], E_range[1], steps)
    points: list[BranchPoint] = []
    seed = None
    for i, E in enumerate(energies):
        try:
            st = petviashvili_solve(params, spectrum, float(E), seed=seed, tol=tol, **solver_kw)
        except (SolverError, ParameterError) as exc:
            return Branch(points, i, str(exc))
        if not st.is_ground_state():
            return Branch(points, i, f"profile changes sign at E={E:.6g}; the ground-state branch ended")
        jump = h1_norm(st.profile - points[-1].state.profile) if points else 0.0
        points.append(BranchPoint(st.amplitude, st, mass(st.profile), energy(st.profile, params), jump))
        seed = st.profile
    return Branch(points)
