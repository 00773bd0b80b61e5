"""Experiment orchestration: dispatch by kind, write outputs, record the manifest."""

from __future__ import annotations

import datetime as _dt
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .boundstates import (
    continue_branch,
    linear_ground_state,
    petviashvili_solve,
    shoot_solve,
    tail_bound_check,
)
from .config import ExperimentConfig
from .diagnostics import (
    VirialWeight,
    conservation_series,
    hardy_check,
    tail_profile,
    virial_identity_check,
    virial_primitive_check,
)
from .dynamics import StepperConfig, evolve
from .errors import ConsistencyError, RadNLSError
from .grid import ModelParams, RadialField, RadialGrid, eval_potential, h1_norm, make_grid
from .io import (
    RunManifest,
    ensure_dir,
    write_csv,
    write_diagnostics,
    write_library,
    write_profile,
    write_resolution,
    write_sweep,
    write_tail_profile,
    write_trajectory,
)
from .operators import angular_envelope_slope, angular_phase_integral, build_operator, dispersive_decay_probe
from .scattering import AttractorLibrary, amplitude_sweep, resolution_report

__all__ = ["run_experiment", "emit_plots", "gaussian", "run_battery", "Check"]

log = logging.getLogger(__name__)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def gaussian(grid: RadialGrid, amplitude: float = 1.0, width: float = 1.0) -> RadialField:
    return RadialField(grid, (amplitude * np.exp(-0.5 * (grid.r / width) ** 2)).astype(complex))


def _operator_checksum(spectrum) -> str:
    return hashlib.sha256(np.ascontiguousarray(spectrum.eigenvalues).tobytes()).hexdigest()[:16]


def _weight(cfg: ExperimentConfig) -> VirialWeight:
    R = cfg.get("diagnostics.R") or 0.375 * cfg.grid.r_max
    style = cfg.get("diagnostics.style")
    if style == "none":
        return VirialWeight(cfg.get("diagnostics.weight"))
    return VirialWeight.truncated(cfg.get("diagnostics.weight"), R, style)


def _initial(cfg: ExperimentConfig, grid: RadialGrid | None = None) -> RadialField:
    return gaussian(grid or cfg.grid, cfg.get("initial.amplitude"), cfg.get("initial.width"))


def _folded_spectrum(cfg: ExperimentConfig, grid: RadialGrid | None = None):
    grid = grid or cfg.grid
    return build_operator(grid, eval_potential(cfg.params.potential, grid))


# ---------------------------------------------------------------- verify battery


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


def _virial_pair(params: ModelParams, grid: RadialGrid, stepper: StepperConfig, u_fn, weight: VirialWeight):
    """Residuals at base and jointly refined (dr/2, dt/2, same record stride) resolution."""
    out = []
    for g, dt in ((grid, stepper.dt), (make_grid(grid.d, 2 * grid.n + 1, grid.r_max), 0.5 * stepper.dt)):
        cfg = StepperConfig(dt, stepper.t_end, stepper.record_every)
        traj = evolve(u_fn(g), params, cfg)
        rep = virial_identity_check(traj, weight)
        out.append((traj, rep, virial_primitive_check(traj, weight)))
    return out


def random_smooth_field(grid: RadialGrid, rng: np.random.Generator, terms: int = 4) -> RadialField:
    """Sum of a few Gaussian shells with random centres, widths and amplitudes."""
    vals = np.zeros(grid.n)
    for _ in range(terms):
        c = rng.uniform(0.0, 0.3 * grid.r_max)
        w = rng.uniform(0.3, 0.1 * grid.r_max)
        vals += rng.normal() * np.exp(-0.5 * ((grid.r - c) / w) ** 2)
    return RadialField(grid, vals)


def run_battery(cfg: ExperimentConfig, quick: bool = False, out_dir: Path | None = None) -> tuple[list[Check], list[Path]]:
    """Conservation, virial (with refinement), Hardy, dispersive and stationary-phase checks."""
    checks: list[Check] = []
    files: list[Path] = []
    params, grid, st = cfg.params, cfg.grid, cfg.stepper
    if quick:
        grid = make_grid(grid.d, max(128, grid.n // 4), grid.r_max)
        st = StepperConfig(st.dt, min(st.t_end, 1.0), st.record_every)
    u0 = _initial(cfg, grid)
    weight = _weight(cfg)

    log.info("verify: conservation and virial on n=%d, T=%g", grid.n, st.t_end)
    pair = _virial_pair(params, grid, st, lambda g: _initial(cfg, g), weight)
    traj, rep, prim = pair[0]
    cons = conservation_series(traj)
    checks.append(Check("mass_drift", cons.mass_drift, 1e-10, cons.mass_drift < 1e-10))
    checks.append(Check("energy_drift", cons.energy_drift, 1e-5, cons.energy_drift < 1e-5))
    checks.append(Check("virial_relative_residual", rep.relative_residual, 1e-3, rep.relative_residual < 1e-3))
    ratio = rep.residual / pair[1][1].residual if pair[1][1].residual else math.inf
    checks.append(Check("virial_refinement_ratio", ratio, 3.5, ratio >= 3.5))
    pratio = prim / pair[1][2] if pair[1][2] else math.inf
    order = math.log2(pratio) if pratio > 0 else -math.inf
    checks.append(Check("primitive_order", order, 1.8, order >= 1.8))
    if out_dir is not None:
        files.append(write_diagnostics(out_dir / "diagnostics.csv", traj, weight))

    log.info("verify: Hardy inequality")
    rng = np.random.default_rng(cfg.seed)
    hgrid = make_grid(grid.d, 512 if quick else 2048, 20.0)
    worst = math.inf
    for beta in (0.0, 2.0):
        for _ in range(100):
            lhs, rhs = hardy_check(random_smooth_field(hgrid, rng), beta)
            worst = min(worst, rhs / lhs if lhs > 0 else math.inf)
    checks.append(Check("hardy_min_ratio", worst, 1 - 1e-6, worst >= 1 - 1e-6))

    log.info("verify: dispersive decay")
    d = grid.d
    n_disp, r_disp = (1024, 160.0) if quick else (4096, 550.0)
    dgrid = make_grid(d, n_disp, r_disp)
    t_hi = r_disp / 11.0
    fit = dispersive_decay_probe(build_operator(dgrid), gaussian(dgrid), np.geomspace(0.2 * t_hi, t_hi, 12))
    rel = abs(fit.slope + d / 2) / (d / 2)
    checks.append(Check("dispersive_slope_rel_error", rel, 0.05, rel < 0.05, f"slope={fit.slope:.4f}"))

    log.info("verify: stationary phase")
    z_hi = 1e3 if quick else 1e4
    slope, _, centres, env = angular_envelope_slope(d, 1e2, z_hi)
    target = -(d - 1) / 2
    srel = abs(slope - target) / abs(target)
    checks.append(Check("stationary_phase_slope_rel_error", srel, 0.10, srel < 0.10, f"slope={slope:.4f}"))
    i0 = abs(angular_phase_integral(d, 0.0))
    checks.append(Check("stationary_phase_bounded", float(np.max(env) / i0), 1.0, bool(np.max(env) <= i0)))
    return checks, files


# ---------------------------------------------------------------- kinds


def _run_simulate(cfg, man: RunManifest, out: Path):
    grid = cfg.grid
    spectrum = _folded_spectrum(cfg) if cfg.stepper.fold_potential else build_operator(grid)
    man.checksums["operator"] = _operator_checksum(spectrum)
    traj = evolve(_initial(cfg), cfg.params, cfg.stepper, spectrum, progress=_progress_logger(cfg.stepper.n_steps))
    man.add_file(write_trajectory(out / "trajectory.csv", traj), "trajectory")
    if len(traj) >= 3:
        man.add_file(write_diagnostics(out / "diagnostics.csv", traj, _weight(cfg)), "diagnostics")
        if cfg.stepper.sponge is None:
            cons = conservation_series(traj)
            man.add_check("mass_drift", cons.mass_drift, 1e-10, cons.mass_drift < 1e-10)
            man.add_check("energy_drift", cons.energy_drift, 1e-5, cons.energy_drift < 1e-5)
            rep = virial_identity_check(traj, _weight(cfg))
            man.add_check("virial_relative_residual", rep.relative_residual, 1e-3, rep.relative_residual < 1e-3)


def _run_boundstate(cfg, man: RunManifest, out: Path):
    spectrum = _folded_spectrum(cfg)
    man.checksums["operator"] = _operator_checksum(spectrum)
    E = cfg.get("boundstate.E")
    st = petviashvili_solve(
        cfg.params, spectrum, E, tol=cfg.get("boundstate.tol"),
        max_iter=cfg.get("boundstate.max_iter"), damping=cfg.get("boundstate.damping"),
    )
    man.add_file(write_profile(out / "boundstate.csv", st.profile, "Q"), "profile")
    man.add_check("residual", st.residual, st.tol, st.residual <= st.tol)
    man.add_check("ground_state", float(np.min(st.profile.values)), 0.0, st.is_ground_state(),
                  "minimum of the profile; sign changes mean an excited state")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = tail_bound_check(st)
    radii = np.geomspace(rep.window[0], rep.window[1], 64)
    man.add_file(write_tail_profile(out / "tail.csv", tail_profile(st.profile, radii)), "tail")
    man.add_check("tail_bounds", float(rep.passed), 1.0, rep.passed,
                  f"mass {rep.mass_constant:.4g}, pointwise {rep.pointwise_constant:.4g}, grad {rep.grad_constant:.4g}")
    if cfg.get("boundstate.shoot"):
        sh = shoot_solve(cfg.params, E, tuple(cfg.get("boundstate.bracket")), spectrum)
        man.add_file(write_profile(out / "boundstate_shooting.csv", sh.profile, "Q"), "profile")
        rel = h1_norm(sh.profile - st.profile) / st.h1_norm()
        # the discrete state carries an O(dr^2) grid error relative to the ODE solution
        gap_tol = 50.0 * cfg.grid.dr**2
        man.add_check("shooting_h1_gap", rel, gap_tol, rel < gap_tol)


def _branch(cfg, spectrum):
    lam, _ = linear_ground_state(spectrum)
    E0 = cfg.get("branch.E_start") or lam + 0.01 * abs(lam)
    return continue_branch(cfg.params, spectrum, (E0, cfg.get("branch.E_stop")), cfg.get("branch.steps"),
                           tol=cfg.get("branch.tol"))


def _run_branch(cfg, man: RunManifest, out: Path):
    spectrum = _folded_spectrum(cfg)
    man.checksums["operator"] = _operator_checksum(spectrum)
    br = _branch(cfg, spectrum)
    lib = AttractorLibrary.from_branch(br, cfg.grid, cfg.params, failure=br.failure)
    for p in write_library(out / "library", lib):
        man.add_file(p, "library")
    rows = [(pt.state.frequency, pt.amplitude, pt.mass, pt.energy, pt.state.residual, pt.jump) for pt in br]
    man.add_file(write_csv(out / "branch.csv", ["E", "amplitude", "mass", "energy", "residual", "jump"], rows), "branch")
    man.add_check("branch_points", len(br), 1, len(br) >= 1, br.failure)
    if len(br) >= 2:
        step = abs(br[1].state.frequency - br[0].state.frequency)
        man.add_check("branch_continuity", max(pt.jump for pt in br) / step, 10.0, br.is_continuous(step))
    return br, lib


def _library(cfg, man, out):
    spectrum = _folded_spectrum(cfg)
    br = _branch(cfg, spectrum)
    lib = AttractorLibrary.from_branch(br, cfg.grid, cfg.params, failure=br.failure)
    for p in write_library(out / "library", lib):
        man.add_file(p, "library")
    return lib


def _run_probe(cfg, man: RunManifest, out: Path):
    lib = _library(cfg, man, out)
    free = build_operator(cfg.grid)
    man.checksums["operator"] = _operator_checksum(free)
    traj = evolve(_initial(cfg), cfg.params, cfg.stepper, free, progress=_progress_logger(cfg.stepper.n_steps))
    man.add_file(write_trajectory(out / "trajectory.csv", traj), "trajectory")
    window = cfg.get("probe.tail_window") or 0.5 * cfg.stepper.t_end
    rep = resolution_report(traj, free, lib, window)
    man.add_file(write_resolution(out / "resolution.csv", rep), "resolution")
    man.add_check("settled", float(rep.settled()), 1.0, rep.settled(),
                  "lower bounds only (sponge)" if rep.lower_bound_only else "")


def _run_sweep(cfg, man: RunManifest, out: Path):
    lib = _library(cfg, man, out)
    free = build_operator(cfg.grid)
    man.checksums["operator"] = _operator_checksum(free)
    amps = cfg.get("sweep.amplitudes")
    profile = gaussian(cfg.grid, 1.0, cfg.get("initial.width"))
    window = cfg.get("probe.tail_window") or None
    table, trajs = amplitude_sweep(cfg.params, free, lib, amps, cfg.stepper.t_end, profile, cfg.stepper, window)
    for a, traj in zip(amps, trajs):
        man.add_file(write_trajectory(out / f"trajectory_A{a:g}.csv", traj), "trajectory")
    man.add_file(write_sweep(out / "sweep.csv", table), "sweep")
    settled = all(r.settled for r in table.rows)
    man.add_check("all_settled", float(settled), 1.0, settled)
    slope = table.saturation_slope()
    if not math.isnan(slope):
        man.add_check("saturation_slope", slope, 1.0, slope < 1.0, "final remainder vs amplitude (log-log)")


def _run_verify(cfg, man: RunManifest, out: Path, quick: bool):
    checks, files = run_battery(cfg, quick, out)
    for f in files:
        man.add_file(f, "diagnostics")
    rows = [(c.name, c.value, c.threshold, c.passed, c.note) for c in checks]
    man.add_file(write_csv(out / "verify_summary.csv", ["check", "value", "threshold", "passed", "note"], rows), "summary")
    for c in checks:
        man.add_check(c.name, c.value, c.threshold, c.passed, c.note)


def _progress_logger(total: int):
    marks = {max(1, total * k // 10) for k in range(1, 11)}

    def report(step: int, n: int):
        if step in marks:
            log.info("step %d / %d", step, n)

    return report


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, quick: bool | None = None) -> RunManifest:
    """Run ``cfg`` and write every output plus ``manifest.json`` into ``out_dir``.

    Module errors are re-raised after a partial manifest has been written.
    """
    out_dir = out_dir or cfg.get("experiment.out")
    if not out_dir:
        raise ConsistencyError("no output directory given")
    out = ensure_dir(Path(out_dir))
    quick = cfg.get("verify.quick") if quick is None else quick
    echo = cfg.echo()
    echo["experiment.out"] = str(out)
    man = RunManifest(config=echo, version=__version__, started=_now(), out_dir=str(out))
    man.checksums["grid"] = cfg.grid.checksum()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            if cfg.kind == "simulate":
                _run_simulate(cfg, man, out)
            elif cfg.kind == "boundstate":
                _run_boundstate(cfg, man, out)
            elif cfg.kind == "branch":
                _run_branch(cfg, man, out)
            elif cfg.kind == "probe-attractor":
                _run_probe(cfg, man, out)
            elif cfg.kind == "sweep":
                _run_sweep(cfg, man, out)
            elif cfg.kind == "verify":
                _run_verify(cfg, man, out, bool(quick))
        man.status = "ok"
    except RadNLSError as exc:
        man.status = "error"
        man.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        man.finished = _now()
        man.write()
    return man


# ---------------------------------------------------------------- plots

_PLOT_HEAD = "set datafile separator ','\nset key autotitle columnhead\n"


def _script_for(entry, man: RunManifest) -> str | None:
    name = entry.path
    if entry.kind == "diagnostics":
        return (
            _PLOT_HEAD
            + "set xlabel 't'\nset ylabel 'relative drift'\nset logscale y\n"
            + f"stats '{name}' using 2 nooutput name 'M'\nstats '{name}' using 3 nooutput name 'E'\n"
            + f"plot '{name}' using 1:(abs($2/M_min - 1)) with lines title 'mass drift', \\\n"
            + f"     '{name}' using 1:(abs($3 - E_min)/(abs(E_min) > 1 ? abs(E_min) : 1)) with lines title 'energy drift'\n"
        )
    if entry.kind == "tail":
        d = int(man.config.get("model.d", 5))
        return (
            _PLOT_HEAD
            + "set logscale xy\nset xlabel 'R'\nset ylabel 'tail mass'\n"
            + f"stats '{name}' using 1:2 nooutput name 'T'\n"
            + f"plot '{name}' using 1:2 with linespoints title 'M(R)', \\\n"
            + f"     T_max_y * (x / T_min_x)**({4 - d}) with lines dashtype 2 title 'R^({4 - d}) reference'\n"
        )
    if entry.kind == "sweep":
        return (
            _PLOT_HEAD
            + "set logscale xy\nset xlabel 'amplitude A'\nset ylabel 'H norm'\n"
            + f"plot '{name}' using 1:2 with linespoints title 'initial', \\\n"
            + f"     '{name}' using 1:3 with linespoints title 'final remainder'\n"
        )
    if entry.kind == "resolution":
        return (
            _PLOT_HEAD + "set xlabel 't'\n"
            + f"plot '{name}' using 1:2 with lines title 'remainder', '{name}' using 1:3 with lines title 'distance to library'\n"
        )
    if entry.kind == "branch":
        return _PLOT_HEAD + "set xlabel 'E'\nset ylabel 'mass'\n" + f"plot '{name}' using 1:3 with linespoints\n"
    if entry.kind in ("profile", "library") and name.endswith(".csv"):
        return _PLOT_HEAD + "set xlabel 'r'\n" + f"plot '{name}' using 1:2 with lines\n"
    if entry.kind == "summary":
        return _PLOT_HEAD + "set style data histogram\n" + f"plot '{name}' using 4:xtic(1) title 'passed'\n"
    return None


def emit_plots(man: RunManifest) -> list[Path]:
    """Write one gnuplot script per CSV series and register the scripts in the manifest.

    Data paths inside the scripts are relative to the output directory, so
    run them from there (``gnuplot -p plots/<name>.gp``).
    """
    root = Path(man.out_dir)
    scripts = []
    for entry in list(man.files):
        if not entry.path.endswith(".csv"):
            continue
        if not (root / entry.path).is_file():
            raise ConsistencyError(f"manifest lists {entry.path} but the file is missing")
        body = _script_for(entry, man)
        if body is None:
            continue
        target = root / "plots" / (entry.path.replace("/", "_")[:-4] + ".gp")
        target.parent.mkdir(exist_ok=True)
        target.write_text(body, encoding="utf-8")
        scripts.append(target)
    for s in scripts:
        man.add_file(s, "plot")
    if scripts:
        man.write()
    return scripts
