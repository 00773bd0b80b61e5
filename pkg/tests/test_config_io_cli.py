"""Configuration parsing, file formats, manifests, plot scripts and the CLI."""

import json

import numpy as np
import pytest

from radnls.cli import main
from radnls.config import SCHEMA, ConfigError, parse_config, schema_table
from radnls.errors import ConsistencyError
from radnls.io import (
    MANIFEST_NAME,
    RunManifest,
    fmt,
    read_csv,
    read_library,
    read_trajectory,
    write_csv,
    write_library,
    write_trajectory,
)
from radnls.runner import emit_plots, run_experiment

SIM = """\
model.d = 5
model.p = 2.0
model.potential = bump
model.v0 = -10
model.r0 = 2
grid.n = 128
grid.r_max = 20
stepper.dt = 0.002
stepper.t_end = 0.1
stepper.record_every = 5
initial.width = 2
experiment.kind = simulate
"""

SWEEP = """\
model.d = 5
model.p = 2.0
model.potential = bump
model.v0 = -50
model.r0 = 2
grid.n = 128
grid.r_max = 20
stepper.dt = 0.002
stepper.t_end = 0.2
stepper.record_every = 5
stepper.sponge_width = 4
stepper.sponge_strength = 5
initial.width = 2
experiment.kind = sweep
branch.E_stop = -25
branch.steps = 2
sweep.amplitudes = 0.5, 1, 2
"""

BOUND = """\
model.d = 5
model.p = 2.0
model.potential = bump
model.v0 = -50
model.r0 = 2
grid.n = 128
grid.r_max = 8
experiment.kind = boundstate
boundstate.E = -28
boundstate.tol = 1e-8
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_minimal_config_fills_defaults():
    cfg = parse_config(SIM)
    assert cfg.kind == "simulate"
    assert cfg.grid.n == 128 and cfg.grid.r_max == 20.0
    assert cfg.get("diagnostics.weight") == "quadratic"
    assert cfg.get("experiment.seed") == 0
    assert cfg.stepper.sponge is None
    assert set(cfg.echo()) == {k for k, spec in SCHEMA.items() if spec.default is not None or spec.required == SCHEMA['model.d'].required}


def test_schema_table_lists_every_key():
    table = schema_table()
    for key in SCHEMA:
        assert f"\n{key} |" in table
    assert "model.d | int | required" in table


def test_exponent_window_error_cites_interval_and_line():
    text = SIM.replace("model.d = 5", "model.d = 11").replace("model.p = 2.0", "model.p = 3.0")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errs = info.value.errors
    hit = [(ln, msg) for ln, msg in errs if msg.startswith("model.p")]
    assert len(hit) == 1
    assert hit[0][0] == 2
    assert "(1.363636364, 1.444444444)" in hit[0][1]


def test_empty_config_reports_all_required_keys():
    with pytest.raises(ConfigError) as info:
        parse_config("")
    msgs = " ".join(m for _, m in info.value.errors)
    for key in ("model.d", "model.p", "grid.n", "grid.r_max", "experiment.kind"):
        assert f"'{key}'" in msgs


def test_kind_specific_required_keys():
    with pytest.raises(ConfigError) as info:
        parse_config(BOUND.replace("boundstate.E = -28\n", ""))
    assert any("'boundstate.E'" in m for _, m in info.value.errors)
    with pytest.raises(ConfigError) as info:
        parse_config(SWEEP.replace("sweep.amplitudes = 0.5, 1, 2\n", ""))
    assert any("'sweep.amplitudes'" in m for _, m in info.value.errors)


def test_unknown_duplicate_and_bad_values_all_reported():
    text = SIM + "grid.n = 64\nmodel.colour = red\nstepper.dt = fast\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    lines = {ln for ln, _ in info.value.errors}
    assert {13, 14, 15} <= lines
    msgs = " ".join(m for _, m in info.value.errors)
    assert "duplicate" in msgs and "unknown key" in msgs


def test_every_error_in_one_pass():
    text = SIM.replace("grid.n = 128", "grid.n = 4").replace("stepper.dt = 0.002", "stepper.dt = -1")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    keys = {m.split(":")[0] for _, m in info.value.errors}
    assert {"grid.n", "stepper.dt"} <= keys


def test_unbound_potential_rejected_for_boundstate_kinds():
    with pytest.raises(ConfigError, match="binding bump"):
        parse_config(BOUND.replace("model.v0 = -50", "model.v0 = 5"))


def test_fmt_round_trips_doubles(rng):
    xs = np.concatenate([rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200), [0.0, -0.0, 1e-310]])
    assert all(float(fmt(x)) == x for x in xs)
    assert fmt(np.inf) == "inf" and fmt(np.nan) == "nan"


def test_csv_round_trip(tmp_path, rng):
    data = rng.standard_normal((7, 3))
    path = write_csv(tmp_path / "a.csv", ["x", "y", "z"], data)
    header, back = read_csv(path)
    assert header == ["x", "y", "z"]
    np.testing.assert_array_equal(back, data)


def test_trajectory_round_trip(tmp_path):
    cfg = parse_config(SIM)
    man = run_experiment(cfg, tmp_path / "out")
    traj = read_trajectory(tmp_path / "out" / "trajectory.csv")
    assert traj.grid == cfg.grid
    assert traj.params == cfg.params
    assert len(traj) == 11
    path = write_trajectory(tmp_path / "again.csv", traj)
    assert path.read_bytes() == (tmp_path / "out" / "trajectory.csv").read_bytes()
    assert man.status == "ok"


def test_library_round_trip(tmp_path):
    man = run_experiment(parse_config(SWEEP), tmp_path / "out")
    lib = read_library(tmp_path / "out" / "library")
    assert len(lib.states) == 2
    paths = write_library(tmp_path / "copy", lib)
    again = read_library(tmp_path / "copy")
    for a, b in zip(lib.states, again.states):
        np.testing.assert_array_equal(a.profile.values, b.profile.values)
        assert a.frequency == b.frequency
    assert len(paths) == 3
    assert man.status == "ok"


def test_runs_are_byte_identical(tmp_path):
    cfg = parse_config(SIM)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("trajectory.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma, mb = RunManifest.load(tmp_path / "a"), RunManifest.load(tmp_path / "b")
    assert [f.sha256 for f in ma.files] == [f.sha256 for f in mb.files]


def test_manifest_lists_every_file_and_verifies(tmp_path):
    out = tmp_path / "out"
    run_experiment(parse_config(SIM), out)
    man = RunManifest.load(out)
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != MANIFEST_NAME}
    assert {f.path for f in man.files} == on_disk
    assert man.config["grid.n"] == 128
    assert man.checksums["grid"]
    assert man.status == "ok" and man.finished
    man.verify()


def test_manifest_detects_tampering(tmp_path):
    out = tmp_path / "out"
    run_experiment(parse_config(SIM), out)
    traj = out / "trajectory.csv"
    traj.write_text(traj.read_text().replace("e-", "E-", 1))
    with pytest.raises(ConsistencyError, match="hash"):
        RunManifest.load(out).verify()


def test_manifest_detects_extra_file(tmp_path):
    out = tmp_path / "out"
    run_experiment(parse_config(SIM), out)
    (out / "stray.txt").write_text("x")
    with pytest.raises(ConsistencyError, match="stray.txt"):
        RunManifest.load(out).verify()


def test_zero_length_run_writes_one_snapshot(tmp_path):
    cfg = parse_config(SIM.replace("stepper.t_end = 0.1", "stepper.t_end = 0"))
    man = run_experiment(cfg, tmp_path / "out")
    traj = read_trajectory(tmp_path / "out" / "trajectory.csv")
    assert len(traj) == 1 and traj.times[0] == 0.0
    assert man.status == "ok"


def test_sweep_outputs(tmp_path):
    out = tmp_path / "out"
    man = run_experiment(parse_config(SWEEP), out)
    names = {f.path for f in man.files}
    assert {"trajectory_A0.5.csv", "trajectory_A1.csv", "trajectory_A2.csv", "sweep.csv"} <= names
    assert sum(n.startswith("trajectory_") for n in names) == 3
    header, table = read_csv(out / "sweep.csv")
    assert header[0] == "amplitude" and table.shape[0] == 3
    np.testing.assert_array_equal(table[:, 0], [0.5, 1.0, 2.0])
    man.verify()


def test_boundstate_run_and_tail_plot(tmp_path):
    out = tmp_path / "out"
    man = run_experiment(parse_config(BOUND), out)
    assert (out / "boundstate.csv").is_file() and (out / "tail.csv").is_file()
    scripts = emit_plots(man)
    assert scripts
    tail = [s for s in scripts if s.name == "tail.gp"]
    assert len(tail) == 1
    assert "R^(-1) reference" in tail[0].read_text()
    RunManifest.load(out).verify()


def test_plots_empty_manifest_and_missing_file(tmp_path):
    empty = RunManifest(config={}, version="0", started="", out_dir=str(tmp_path))
    assert emit_plots(empty) == []
    out = tmp_path / "out"
    man = run_experiment(parse_config(SIM), out)
    (out / "trajectory.csv").unlink()
    with pytest.raises(ConsistencyError, match="missing"):
        emit_plots(man)


def test_cli_fails_fast_on_bad_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SIM.replace("model.p = 2.0", "model.p = 9"))
    out = tmp_path / "never"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "line 2" in capsys.readouterr().err


def test_cli_kind_mismatch(tmp_path):
    cfg = write_cfg(tmp_path, SIM)
    out = tmp_path / "never"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_cli_missing_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_cli_simulate_with_plots(tmp_path, capsys):
    fine = SIM.replace("grid.n = 128", "grid.n = 1024").replace("stepper.dt = 0.002", "stepper.dt = 0.001")
    fine = fine.replace("stepper.t_end = 0.1", "stepper.t_end = 0.5")
    cfg = write_cfg(tmp_path, fine)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--plots"]) == 0
    man = RunManifest.load(out)
    assert man.ok
    assert any(f.kind == "plot" for f in man.files)
    man.verify()
    text = capsys.readouterr().out
    assert "PASS mass_drift" in text and "manifest.json" in text


def test_cli_failed_check_exit_code(tmp_path, capsys):
    # too coarse for the virial residual threshold: the run completes but a check fails
    cfg = write_cfg(tmp_path, SIM)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 1
    assert "FAIL virial_relative_residual" in capsys.readouterr().out
    assert not RunManifest.load(tmp_path / "out").ok


def test_cli_run_failure_exit_code(tmp_path):
    # E above the bottom of the spectrum: no bound state, the solver refuses
    cfg = write_cfg(tmp_path, BOUND.replace("boundstate.E = -28", "boundstate.E = -1"))
    out = tmp_path / "out"
    assert main(["boundstate", "--config", str(cfg), "--out", str(out)]) == 3
    man = json.loads((out / MANIFEST_NAME).read_text())
    assert man["status"] == "error" and man["error"]


def test_cli_keys(capsys):
    assert main(["keys"]) == 0
    assert "sweep.amplitudes" in capsys.readouterr().out
