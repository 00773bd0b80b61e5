import numpy as np
import pytest

from radnls.boundstates import petviashvili_solve
from radnls.diagnostics import conservation_series, energy, mass
from radnls.dynamics import (
    Sponge,
    StepperConfig,
    WallContactWarning,
    duhamel_residual,
    evolve,
    sponge_apply,
    sponge_profile,
    strang_step,
)
from radnls.errors import ConfigurationError, ParameterError
from radnls.grid import PotentialSpec, eval_potential, h1_norm, make_grid
from radnls.operators import build_operator, free_propagate

from conftest import gaussian_field, model

WELL = PotentialSpec("bump", -50.0, 2.0)


@pytest.fixture(scope="module")
def free():
    return build_operator(make_grid(5, 512, 20.0))


@pytest.fixture(scope="module")
def bound_state():
    grid = make_grid(5, 255, 8.0)
    params = model(5, 2.0, WELL)
    folded = build_operator(grid, eval_potential(WELL, grid))
    return params, petviashvili_solve(params, folded, -30.0, tol=1e-9), build_operator(grid)


def test_zero_is_fixed_point(free):
    params = model(5, 2.0, PotentialSpec("bump", -10.0, 2.0))
    out = strang_step(free.grid.zeros(), 0.01, params, free)
    assert np.all(out.values == 0)


def test_linear_mode_matches_free_flow(free):
    params = model(5, 2.0).linear()
    u = gaussian_field(free.grid, 1.0, 1.5)
    out = strang_step(u, 0.05, params, free)
    ref = free_propagate(free, u, 0.05)
    assert np.max(np.abs(out.values - ref.values)) < 1e-12


def test_stationary_state_local_error_is_third_order(bound_state):
    params, st, free = bound_state
    Q, E = st.profile, st.frequency
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        out = strang_step(Q, dt, params, free)
        errs.append(h1_norm(out - Q * np.exp(-1j * E * dt)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 2.7)


def test_folded_and_unfolded_potential_agree_to_second_order(bound_state):
    params, st, free = bound_state
    grid = free.grid
    folded = build_operator(grid, eval_potential(WELL, grid))
    u = gaussian_field(grid, 2.0, 1.0)
    gaps = []
    for dt in (4e-3, 2e-3):
        n = int(round(0.04 / dt))
        a, b = u, u
        for _ in range(n):
            a = strang_step(a, dt, params, free)
            b = strang_step(b, dt, params, folded, fold_potential=True)
        gaps.append(h1_norm(a - b))
    assert gaps[0] / gaps[1] > 3.5


def test_step_rejects_wrong_spectrum(bound_state):
    params, st, free = bound_state
    with pytest.raises(ParameterError):
        strang_step(st.profile, 0.01, params, free, fold_potential=True)


def test_evolve_zero_horizon_single_snapshot(free):
    u0 = gaussian_field(free.grid)
    traj = evolve(u0, model(5, 2.0), StepperConfig(1e-3, 0.0), free)
    assert len(traj) == 1 and traj.times[0] == 0.0
    assert np.array_equal(traj.values[0], u0.values)


def test_conservation_small_gaussian():
    spec = build_operator(make_grid(5, 1024, 40.0))
    params = model(5, 2.0)
    u0 = gaussian_field(spec.grid, 0.5)
    traj = evolve(u0, params, StepperConfig(1e-3, 5.0, record_every=100), spec)
    cons = conservation_series(traj)
    assert cons.mass_drift < 1e-12
    assert cons.energy_drift < 1e-6
    assert np.all(np.diff(traj.times) > 0)


def test_energy_drift_is_second_order(free):
    params = model(5, 2.0)
    u0 = gaussian_field(free.grid, 3.0)
    drifts = []
    for dt in (0.01, 0.005, 0.0025):
        traj = evolve(u0, params, StepperConfig(dt, 1.0, record_every=int(round(0.1 / dt))), free)
        drifts.append(conservation_series(traj).energy_drift)
    orders = np.log2(np.array(drifts[:-1]) / np.array(drifts[1:]))
    assert np.all(orders >= 1.8)


def test_gauge_covariance(free):
    params = model(5, 2.0, PotentialSpec("bump", -10.0, 2.0))
    u0 = gaussian_field(free.grid, 1.5)
    cfg = StepperConfig(0.01, 0.5, record_every=10)
    a = evolve(u0, params, cfg, free)
    b = evolve(u0 * np.exp(0.9j), params, cfg, free)
    assert np.max(np.abs(b.values - np.exp(0.9j) * a.values)) < 1e-12


def test_time_reversal(free):
    params = model(5, 2.0, PotentialSpec("bump", -10.0, 2.0))
    u0 = gaussian_field(free.grid, 1.5) * np.exp(0.3j)
    cfg = StepperConfig(0.01, 0.5, record_every=50)
    fwd = evolve(u0, params, cfg, free).field_at(-1)
    back = evolve(fwd.conj(), params, cfg, free).field_at(-1).conj()
    assert h1_norm(back - u0) / h1_norm(u0) < 1e-9


def test_duhamel_linear_and_origin(free):
    params = model(5, 2.0).linear()
    traj = evolve(gaussian_field(free.grid), params, StepperConfig(0.01, 0.5, record_every=5), free)
    assert duhamel_residual(traj, 0.0, free) == 0.0
    assert duhamel_residual(traj, 0.5, free) <= 1e-10
    with pytest.raises(ParameterError):
        duhamel_residual(traj, 0.123, free)


def test_duhamel_residual_second_order(free):
    params = model(5, 2.0, PotentialSpec("bump", -10.0, 2.0))
    u0 = gaussian_field(free.grid, 2.0)
    res = []
    for dt in (0.01, 0.005, 0.0025):
        traj = evolve(u0, params, StepperConfig(dt, 0.5), free)
        res.append(duhamel_residual(traj, 0.5, free))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 1.8)


def test_sponge_properties(free):
    grid = free.grid
    u_in = gaussian_field(grid)
    assert np.array_equal(sponge_apply(u_in, Sponge(4.0, 0.0), 0.1).values, u_in.values)
    inner = grid.field(np.where(grid.r < 10.0, np.exp(-grid.r**2), 0.0))
    assert np.array_equal(sponge_apply(inner, Sponge(4.0, 5.0), 0.1).values, inner.values)
    wide = grid.field(np.exp(-0.5 * ((grid.r - 17.0) / 1.0) ** 2))
    assert mass(sponge_apply(wide, Sponge(4.0, 5.0), 0.1)) < mass(wide)
    s = sponge_profile(grid, Sponge(4.0, 5.0))
    assert np.all(s[grid.r <= 16.0] == 0) and s[-1] > 0.99 and np.all(np.diff(s) >= 0)


def test_config_validation(free):
    with pytest.raises(ParameterError):
        StepperConfig(0.0, 1.0)
    with pytest.raises(ParameterError):
        StepperConfig(0.1, -1.0)
    with pytest.raises(ParameterError):
        StepperConfig(0.1, 1.0, sponge=Sponge(6.0, 1.0)).validate_for(free.grid)
    with pytest.raises(ParameterError):
        StepperConfig(0.3, 1.0).validate_for(free.grid)


def test_evolve_rejects_wide_data(free):
    far = free.grid.field(np.exp(-((free.grid.r - 14.0) ** 2)))
    with pytest.raises(ConfigurationError):
        evolve(far, model(5, 2.0), StepperConfig(0.01, 0.1), free)


def test_wall_contact_warning():
    spec = build_operator(make_grid(5, 128, 8.0))
    u0 = gaussian_field(spec.grid, 0.5, 0.5)
    with pytest.warns(WallContactWarning):
        traj = evolve(u0, model(5, 2.0), StepperConfig(0.01, 5.0, record_every=10), spec)
    assert traj.wall_contact


def test_progress_callback_is_monotone(free):
    seen = []
    evolve(gaussian_field(free.grid), model(5, 2.0), StepperConfig(0.01, 0.2, record_every=2), free,
           progress=lambda k, n: seen.append(k))
    assert seen == sorted(seen) and seen[-1] == 20


def test_energy_is_gauge_invariant(free):
    params = model(5, 2.0, PotentialSpec("bump", -10.0, 2.0))
    u = gaussian_field(free.grid, 1.2) * np.exp(0.4j * free.grid.r)
    assert energy(u * np.exp(2.1j), params) == pytest.approx(energy(u, params), rel=1e-13)
