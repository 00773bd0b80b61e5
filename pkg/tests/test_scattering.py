import math

import numpy as np
import pytest

from radnls.boundstates import BoundState, continue_branch, petviashvili_solve
from radnls.dynamics import Sponge, StepperConfig, Trajectory, evolve
from radnls.errors import ConfigurationError, ParameterError
from radnls.grid import PotentialSpec, eval_potential, h1_inner, h1_norm, make_grid
from radnls.operators import build_operator
from radnls.scattering import (
    WORKERS_ENV,
    AttractorLibrary,
    amplitude_sweep,
    attractor_distance,
    extract_scattering_state,
    resolution_report,
    worker_count,
)

from conftest import gaussian_field, model

WELL = PotentialSpec("bump", -50.0, 2.0)
PARAMS = model(5, 2.0, WELL)


@pytest.fixture(scope="module")
def setup():
    grid = make_grid(5, 255, 10.0)
    folded = build_operator(grid, eval_potential(WELL, grid))
    br = continue_branch(PARAMS, folded, (-31.0, -24.0), 3, tol=1e-8)
    lib = AttractorLibrary.from_branch(br, grid, PARAMS, source="test")
    return grid, build_operator(grid), lib


def test_linear_run_has_constant_candidates():
    spec = build_operator(make_grid(5, 512, 30.0))
    traj = evolve(gaussian_field(spec.grid), model(5, 2.0).linear(), StepperConfig(0.01, 2.0, record_every=50), spec)
    rec = extract_scattering_state(traj, spec, [0.5, 1.0, 2.0])
    assert np.max(rec.defects) < 1e-9
    assert np.allclose(rec.defects, rec.defects.T)
    assert rec.u_plus is rec.candidates[-1]
    assert h1_norm(rec.u_plus - traj.field_at(0)) < 1e-9
    # isometry of the backward free flow in v-coordinates
    u = traj.at(2.0)
    assert np.linalg.norm(spec.to_v(rec.u_plus)) == pytest.approx(np.linalg.norm(spec.to_v(u)), rel=1e-12)


def test_zero_trajectory_scatters_to_zero():
    spec = build_operator(make_grid(5, 64, 10.0))
    traj = evolve(spec.grid.zeros(), model(5, 2.0), StepperConfig(0.1, 1.0, record_every=5), spec)
    rec = extract_scattering_state(traj, spec, [0.5, 1.0])
    assert np.all(rec.u_plus.values == 0)


def test_extraction_guards(setup):
    grid, free, lib = setup
    traj = evolve(gaussian_field(grid, 0.1), PARAMS, StepperConfig(0.01, 0.2, record_every=5,
                                                                   sponge=Sponge(2.0, 1.0)), free)
    with pytest.raises(ConfigurationError):
        extract_scattering_state(traj, free, [0.1])
    folded = build_operator(grid, eval_potential(WELL, grid))
    with pytest.raises(ParameterError):
        extract_scattering_state(traj, folded, [0.1])
    plain = evolve(gaussian_field(grid, 0.1), PARAMS, StepperConfig(0.01, 0.2, record_every=5), free)
    with pytest.raises(ParameterError):
        extract_scattering_state(plain, free, [0.123])


def test_library_layout(setup):
    grid, _, lib = setup
    assert len(lib) == 4
    assert np.all(lib.profile(0).values == 0)
    assert lib.profile(1) is lib.states[0].profile
    other = make_grid(5, 128, 10.0)
    with pytest.raises(ParameterError):
        AttractorLibrary(other, lib.states)


def test_distance_to_member_and_zero(setup):
    grid, _, lib = setup
    q = lib.profile(2)
    dist, idx, phase = attractor_distance(q * np.exp(1j * math.pi / 3), lib)
    assert dist < 1e-12 and idx == 2 and phase == pytest.approx(math.pi / 3, abs=1e-12)
    assert attractor_distance(grid.zeros(), lib) == (0.0, 0, 0.0)
    v = gaussian_field(grid, 0.3)
    assert attractor_distance(v, lib)[0] <= h1_norm(v)


def test_phase_is_locally_optimal(setup):
    grid, _, lib = setup
    v = lib.profile(1) * np.exp(0.4j) + gaussian_field(grid, 0.2) * 1j
    dist, idx, phase = attractor_distance(v, lib)
    q = lib.profile(idx)
    for dth in (-1e-3, 1e-3):
        assert h1_norm(v - q * np.exp(1j * (phase + dth))) >= dist


def test_orthogonal_perturbation(setup):
    grid, _, lib = setup
    q = lib.profile(1)
    single = AttractorLibrary(grid, (lib.states[0],))
    p = gaussian_field(grid, 1.0, 3.0) * np.exp(0.2j * grid.r)
    # H-Gram-Schmidt against q (complex inner product)
    p = p - q * (h1_inner(p, q) / h1_inner(q, q))
    assert abs(h1_inner(p, q)) < 1e-10 * h1_norm(p) * h1_norm(q)
    eps = 1e-3
    dist, idx, _ = attractor_distance(q + p * eps, single)
    assert idx == 1
    assert dist == pytest.approx(eps * h1_norm(p), abs=1e-8)


def test_gauge_invariance_and_lipschitz(setup, rng):
    grid, _, lib = setup
    for _ in range(5):
        v = grid.field((rng.normal() + 1j * rng.normal()) * np.exp(-grid.r**2) * 3 + lib.profile(2).values)
        w = v + grid.field(0.1 * rng.normal() * np.exp(-0.5 * grid.r**2))
        d_v = attractor_distance(v, lib)[0]
        assert attractor_distance(v * np.exp(2.2j), lib)[0] == pytest.approx(d_v, rel=1e-12, abs=1e-14)
        assert abs(d_v - attractor_distance(w, lib)[0]) <= h1_norm(v - w) + 1e-12


def test_resolution_of_exact_bound_state(setup):
    grid, free, lib = setup
    q = lib.states[1]
    traj = evolve(q.profile, PARAMS, StepperConfig(1e-3, 2.0, record_every=10), free)
    rep = resolution_report(traj, free, lib, 1.5)
    scale = q.h1_norm()
    assert h1_norm(rep.u_plus) < 0.05 * scale
    assert np.max(rep.distance) < 0.05 * scale
    assert np.all(rep.best_index == 2)
    assert not rep.lower_bound_only


def test_resolution_of_free_gaussian_decays():
    spec = build_operator(make_grid(5, 1536, 90.0))
    lib = AttractorLibrary(spec.grid)
    params = model(5, 2.0)
    u0 = gaussian_field(spec.grid, 0.5)
    traj = evolve(u0, params, StepperConfig(5e-3, 10.0, record_every=20), spec)
    rep = resolution_report(traj, spec, lib, 5.0)
    assert np.max(rep.remainder_norm) < 1e-2 * h1_norm(u0)
    assert rep.remainder_norm[-1] < rep.remainder_norm[0]
    assert np.all(rep.best_index == 0)


def test_resolution_rejects_bad_window(setup):
    grid, free, lib = setup
    traj = evolve(gaussian_field(grid, 0.1), PARAMS, StepperConfig(0.01, 0.1), free)
    with pytest.raises(ParameterError):
        resolution_report(traj, free, lib, 0.0)


def test_sweep_zero_row_and_single_amplitude(setup):
    grid, free, lib = setup
    profile = gaussian_field(grid)
    cfg = StepperConfig(2e-3, 1.0, record_every=10)
    table, trajs = amplitude_sweep(PARAMS, free, lib, [0.0, 0.5], 0.4, profile, cfg, tail_window=0.2, workers=1)
    zero = table.row(0.0)
    assert (zero.h1_initial, zero.h1_remainder_final, zero.attractor_distance_final, zero.settled) == (0.0, 0.0, 0.0, True)
    assert len(trajs) == 2 and trajs[1].times[-1] == pytest.approx(0.4)
    rep = resolution_report(trajs[1], free, lib, 0.2)
    assert table.row(0.5).h1_remainder_final == rep.final_remainder
    with pytest.raises(ParameterError):
        table.row(3.0)


def test_sweep_parallel_matches_serial(setup):
    grid, free, lib = setup
    profile = gaussian_field(grid)
    cfg = StepperConfig(2e-3, 0.2, record_every=10, sponge=Sponge(2.0, 2.0))
    serial, _ = amplitude_sweep(PARAMS, free, lib, [0.5, 1.0], 0.2, profile, cfg, workers=1)
    par, _ = amplitude_sweep(PARAMS, free, lib, [0.5, 1.0], 0.2, profile, cfg, workers=2)
    assert serial == par
    assert serial.lower_bound_only


def test_sweep_validation(setup):
    grid, free, lib = setup
    cfg = StepperConfig(2e-3, 0.2)
    with pytest.raises(ParameterError):
        amplitude_sweep(PARAMS, free, lib, [1.0, 0.5], 0.2, gaussian_field(grid), cfg)
    with pytest.raises(ParameterError):
        amplitude_sweep(PARAMS, free, lib, [-1.0], 0.2, gaussian_field(grid), cfg)


def test_saturation_slope_uses_settled_rows():
    from radnls.scattering import SweepRow, SweepTable

    rows = (SweepRow(1.0, 1.0, 2.0, 0.1, True), SweepRow(2.0, 2.0, 2.0 * 2**0.5, 0.1, True),
            SweepRow(4.0, 4.0, 100.0, 0.1, False))
    table = SweepTable(rows)
    assert table.saturation_slope() == pytest.approx(0.5)
    assert table.remainder_ratio(2.0, 1.0) == pytest.approx(2**0.5)


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ConfigurationError):
        worker_count()
    monkeypatch.setenv(WORKERS_ENV, "0")
    with pytest.raises(ConfigurationError):
        worker_count()
