"""File formats and the run manifest.

All numbers are written as fixed 17-significant-digit decimals, which
round-trip IEEE doubles exactly, and no data file carries a timestamp, so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .boundstates import BoundState
from .diagnostics import TailProfile, VirialWeight, conservation_series, virial_identity_check
from .dynamics import Sponge, StepperConfig, Trajectory
from .errors import ConsistencyError, DataError
from .grid import ModelParams, PotentialSpec, RadialField, RadialGrid
from .scattering import AttractorLibrary, ResolutionReport, SweepTable

__all__ = [
    "fmt",
    "write_csv",
    "read_csv",
    "trajectory_header",
    "write_trajectory",
    "read_trajectory",
    "write_diagnostics",
    "write_profile",
    "write_tail_profile",
    "write_library",
    "read_library",
    "write_sweep",
    "write_resolution",
    "sha256_file",
    "FileEntry",
    "RunManifest",
    "MANIFEST_NAME",
]

MANIFEST_NAME = "manifest.json"


def fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.16e}"


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return fmt(x)


def write_csv(path: Path, header: list[str], rows) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: Path, comment: str = "#") -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith(comment)]
    if not lines:
        raise DataError(f"{path}: empty CSV")
    header = lines[0].split(",")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


# ---------------------------------------------------------------- params


def params_dict(params: ModelParams) -> dict:
    return {
        "d": params.d,
        "p": params.p,
        "potential": asdict(params.potential),
        "nonlinear": params.nonlinear,
        "strict": params.strict,
    }


def params_from_dict(raw: dict) -> ModelParams:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ModelParams(
            int(raw["d"]), float(raw["p"]), PotentialSpec(**raw["potential"]), bool(raw["nonlinear"]), bool(raw["strict"])
        )


def grid_dict(grid: RadialGrid) -> dict:
    return {"d": grid.d, "n": grid.n, "r_max": grid.r_max}


def config_dict(cfg: StepperConfig) -> dict:
    return {
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "record_every": cfg.record_every,
        "sponge": None if cfg.sponge is None else asdict(cfg.sponge),
        "fold_potential": cfg.fold_potential,
    }


def config_from_dict(raw: dict) -> StepperConfig:
    sponge = None if raw["sponge"] is None else Sponge(**raw["sponge"])
    return StepperConfig(float(raw["dt"]), float(raw["t_end"]), int(raw["record_every"]), sponge, bool(raw["fold_potential"]))


# ---------------------------------------------------------------- trajectories


def trajectory_header(traj: Trajectory) -> dict:
    return {
        "format": "radnls-trajectory/1",
        "params": params_dict(traj.params),
        "config": config_dict(traj.config),
        "grid": grid_dict(traj.grid),
        "wall_contact": bool(traj.wall_contact),
    }


def write_trajectory(path: Path, traj: Trajectory) -> Path:
    """One file: a ``#``-prefixed JSON header line, then CSV ``t, re_1, im_1, ...``."""
    path = Path(path)
    n = traj.grid.n
    cols = ["t"] + [f"{part}_{j}" for j in range(1, n + 1) for part in ("re", "im")]
    lines = ["# " + json.dumps(trajectory_header(traj), sort_keys=True), ",".join(cols)]
    for t, row in zip(traj.times, traj.values):
        inter = np.empty(2 * n)
        inter[0::2], inter[1::2] = row.real, row.imag
        lines.append(",".join([fmt(t)] + [fmt(x) for x in inter]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trajectory(path: Path) -> Trajectory:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# "):
        raise DataError(f"{path}: missing JSON header line")
    head = json.loads(text[0][2:])
    g = head["grid"]
    grid = RadialGrid(int(g["d"]), int(g["n"]), float(g["r_max"]))
    rows = np.array([[float(c) for c in ln.split(",")] for ln in text[2:]], dtype=float).reshape(-1, 1 + 2 * grid.n)
    values = rows[:, 1::2] + 1j * rows[:, 2::2]
    return Trajectory(
        params_from_dict(head["params"]), grid, config_from_dict(head["config"]), rows[:, 0], values, head["wall_contact"]
    )


DIAGNOSTIC_COLUMNS = [
    "t", "mass", "energy", "flux", "rhs_hessian", "rhs_pressure", "rhs_bilap", "rhs_potential", "residual",
]


def write_diagnostics(path: Path, traj: Trajectory, weight: VirialWeight) -> Path:
    cons = conservation_series(traj)
    if len(traj) >= 3:
        rep = virial_identity_check(traj, weight)
        terms = rep.rhs_terms
        cols = [rep.flux, terms["hessian"], terms["pressure"], terms["bilaplacian"], terms["potential"], rep.residual_series]
    else:
        cols = [np.full(len(traj), np.nan)] * 6
    rows = zip(traj.times, cons.mass, cons.energy, *cols)
    return write_csv(path, DIAGNOSTIC_COLUMNS, rows)


def write_profile(path: Path, f: RadialField, name: str = "value") -> Path:
    vals = f.values
    if np.iscomplexobj(vals):
        return write_csv(path, ["r", f"{name}_re", f"{name}_im"], zip(f.grid.r, vals.real, vals.imag))
    return write_csv(path, ["r", name], zip(f.grid.r, vals))


def write_tail_profile(path: Path, prof: TailProfile) -> Path:
    return write_csv(path, ["R", "mass_tail", "grad_tail"], zip(prof.radii, prof.mass_tail, prof.grad_tail))


# ---------------------------------------------------------------- library


def write_library(directory: Path, lib: AttractorLibrary) -> list[Path]:
    """JSON manifest plus one profile CSV per bound state; returns all paths written."""
    from .diagnostics import energy, mass

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for k, st in enumerate(lib.states, start=1):
        name = f"state_{k:03d}.csv"
        written.append(write_profile(directory / name, st.profile, "Q"))
        params = st.params or lib.params
        entries.append(
            {
                "index": k,
                "file": name,
                "E": st.frequency,
                "mass": mass(st.profile),
                "energy": energy(st.profile, params) if params is not None else None,
                "residual": st.residual,
                "amplitude": st.amplitude,
                "method": st.method,
            }
        )
    meta = {
        "format": "radnls-library/1",
        "grid": grid_dict(lib.grid),
        "params": params_dict(lib.params) if lib.params is not None else None,
        "E": [e["E"] for e in entries],
        "states": entries,
        "provenance": lib.provenance,
    }
    path = directory / "library.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [path] + written


def read_library(directory: Path) -> AttractorLibrary:
    directory = Path(directory)
    meta = json.loads((directory / "library.json").read_text(encoding="utf-8"))
    g = meta["grid"]
    grid = RadialGrid(int(g["d"]), int(g["n"]), float(g["r_max"]))
    params = params_from_dict(meta["params"]) if meta["params"] is not None else None
    states = []
    for e in meta["states"]:
        _, data = read_csv(directory / e["file"])
        prof = RadialField(grid, data[:, 1])
        states.append(BoundState(prof, float(e["E"]), float(e["residual"]), params, method=e.get("method", "")))
    return AttractorLibrary(grid, tuple(states), params, meta.get("provenance", {}))


SWEEP_COLUMNS = ["amplitude", "h1_initial", "h1_remainder_final", "attractor_distance_final", "settled_flag"]


def write_sweep(path: Path, table: SweepTable) -> Path:
    rows = [
        (r.amplitude, r.h1_initial, r.h1_remainder_final, r.attractor_distance_final, bool(r.settled))
        for r in table.rows
    ]
    return write_csv(path, SWEEP_COLUMNS, rows)


def write_resolution(path: Path, rep: ResolutionReport) -> Path:
    return write_csv(
        path,
        ["t", "remainder_h1", "attractor_distance", "best_index"],
        zip(rep.times, rep.remainder_norm, rep.distance, rep.best_index),
    )


# ---------------------------------------------------------------- manifest


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class FileEntry:
    path: str  # relative to the output directory, '/'-separated
    bytes: int
    sha256: str
    kind: str = "data"


@dataclass
class RunManifest:
    config: dict
    version: str
    started: str
    finished: str = ""
    checksums: dict = field(default_factory=dict)
    files: list[FileEntry] = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    status: str = "running"
    error: str = ""
    out_dir: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok" and all(c["passed"] for c in self.checks.values())

    def add_file(self, path: Path, kind: str = "data") -> FileEntry:
        path = Path(path)
        rel = path.resolve().relative_to(Path(self.out_dir).resolve()).as_posix()
        entry = FileEntry(rel, path.stat().st_size, sha256_file(path), kind)
        self.files = [f for f in self.files if f.path != rel] + [entry]
        return entry

    def add_check(self, name: str, value: float, threshold: float, passed: bool, note: str = "") -> None:
        self.checks[name] = {"value": float(value), "threshold": float(threshold), "passed": bool(passed), "note": note}

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("out_dir")
        return out

    def write(self) -> Path:
        path = Path(self.out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, out_dir: Path) -> "RunManifest":
        raw = json.loads((Path(out_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
        raw["files"] = [FileEntry(**f) for f in raw["files"]]
        return cls(out_dir=str(out_dir), **raw)

    def verify(self) -> None:
        """Re-hash every listed file and check the directory holds nothing else."""
        root = Path(self.out_dir)
        listed = {f.path for f in self.files}
        on_disk = {
            p.relative_to(root).as_posix()
            for p in root.rglob("*")
            if p.is_file() and p.name != MANIFEST_NAME
        }
        if listed != on_disk:
            extra, missing = sorted(on_disk - listed), sorted(listed - on_disk)
            raise ConsistencyError(f"manifest mismatch: unlisted {extra}, missing {missing}")
        for f in self.files:
            p = root / f.path
            if p.stat().st_size != f.bytes or sha256_file(p) != f.sha256:
                raise ConsistencyError(f"{f.path}: size or hash differs from the manifest")


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
