"""Flat ``section.key = value`` experiment configuration.

One assignment per line; ``#`` starts a comment.  Every problem found
(unknown key, bad type, violated constraint, missing required key) is
collected with its line number before anything is reported.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .dynamics import Sponge, StepperConfig
from .errors import ConfigurationError, RadNLSError
from .grid import ModelParams, PotentialSpec, RadialGrid, exponent_window, make_grid

__all__ = ["KINDS", "SCHEMA", "ConfigError", "ExperimentConfig", "parse_config", "load_config", "schema_table"]

KINDS = ("simulate", "boundstate", "branch", "verify", "probe-attractor", "sweep")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    x = float(raw.strip())
    if not math.isfinite(x):
        raise ValueError(f"expected a finite number, got {raw!r}")
    return x


def _parse_floats(raw: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
    return tuple(_parse_float(p) for p in parts)


def _parse_str(raw: str) -> str:
    return raw.strip().strip('"').strip("'")


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str
    required: tuple[str, ...] = ()  # kinds for which the key has no default

    @property
    def type_name(self) -> str:
        return {
            _parse_bool: "bool",
            _parse_int: "int",
            _parse_float: "float",
            _parse_floats: "float list",
            _parse_str: "string",
        }[self.parse]


ALL = KINDS
SCHEMA: dict[str, Key] = {
    "model.d": Key(_parse_int, None, "spatial dimension (>= 3)", ALL),
    "model.p": Key(_parse_float, None, "power of the defocusing nonlinearity", ALL),
    "model.potential": Key(_parse_str, "zero", "'zero' or 'bump'"),
    "model.v0": Key(_parse_float, 0.0, "bump depth (negative binds)"),
    "model.r0": Key(_parse_float, 1.0, "bump support radius"),
    "model.strict": Key(_parse_bool, True, "reject p outside (1+4/d, 1+4/(d-2))"),
    "grid.n": Key(_parse_int, None, "interior nodes", ALL),
    "grid.r_max": Key(_parse_float, None, "outer (Dirichlet) radius", ALL),
    "stepper.dt": Key(_parse_float, 1e-3, "time step"),
    "stepper.t_end": Key(_parse_float, 1.0, "final time"),
    "stepper.record_every": Key(_parse_int, 10, "steps between recorded snapshots"),
    "stepper.sponge_width": Key(_parse_float, 0.0, "absorbing layer width (0 = none)"),
    "stepper.sponge_strength": Key(_parse_float, 0.0, "absorbing layer damping rate"),
    "stepper.fold_potential": Key(_parse_bool, False, "put V in the linear propagator"),
    "experiment.kind": Key(_parse_str, None, "one of " + ", ".join(KINDS), ALL),
    "experiment.seed": Key(_parse_int, 0, "seed for randomized batteries"),
    "experiment.out": Key(_parse_str, "", "output directory (the --out flag wins)"),
    "initial.amplitude": Key(_parse_float, 1.0, "Gaussian amplitude A in A exp(-r^2/(2 w^2))"),
    "initial.width": Key(_parse_float, 1.0, "Gaussian width w"),
    "diagnostics.weight": Key(_parse_str, "quadratic", "virial weight: quadratic, quartic or abs"),
    "diagnostics.R": Key(_parse_float, 0.0, "virial truncation radius (0 = 3 r_max / 8)"),
    "diagnostics.style": Key(_parse_str, "compact", "truncation: none, convex_linear or compact"),
    "boundstate.E": Key(_parse_float, None, "frequency E (< 0)", ("boundstate",)),
    "boundstate.tol": Key(_parse_float, 1e-8, "residual tolerance"),
    "boundstate.max_iter": Key(_parse_int, 3000, "iteration cap"),
    "boundstate.damping": Key(_parse_float, 0.5, "weight of the new Petviashvili image"),
    "boundstate.shoot": Key(_parse_bool, False, "also solve by shooting and compare"),
    "boundstate.bracket": Key(_parse_floats, (0.01, 100.0), "shooting amplitude bracket lo, hi"),
    "branch.E_start": Key(_parse_float, 0.0, "first E (0 = just above lambda_1)"),
    "branch.E_stop": Key(_parse_float, None, "last E", ("branch", "probe-attractor", "sweep")),
    "branch.steps": Key(_parse_int, 10, "number of branch points"),
    "branch.tol": Key(_parse_float, 1e-7, "residual tolerance along the branch"),
    "probe.tail_window": Key(_parse_float, 0.0, "u_+ extraction window (0 = t_end / 2)"),
    "sweep.amplitudes": Key(_parse_floats, None, "ascending amplitudes", ("sweep",)),
    "verify.quick": Key(_parse_bool, False, "reduced resolutions (the --quick flag wins)"),
}


def schema_table() -> str:
    """Documentation table: key, type, default, meaning."""
    lines = ["key | type | default | meaning", "--- | --- | --- | ---"]
    for name, k in SCHEMA.items():
        default = "required" if k.default is None else repr(k.default)
        lines.append(f"{name} | {k.type_name} | {default} | {k.doc}")
    return "\n".join(lines)


class ConfigError(ConfigurationError):
    """All problems found in a configuration text, each with its line number."""

    def __init__(self, errors: list[tuple[int | None, str]]):
        self.errors = errors
        body = "\n".join(f"  line {ln}: {msg}" if ln else f"  {msg}" for ln, msg in errors)
        super().__init__(f"{len(errors)} configuration error(s):\n{body}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    params: ModelParams
    grid: RadialGrid
    stepper: StepperConfig
    values: dict[str, Any] = field(repr=False)
    lines: dict[str, int] = field(default_factory=dict, repr=False)

    def get(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["experiment.seed"])

    def echo(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}


def _tokenize(text: str):
    seen: dict[str, int] = {}
    raw: dict[str, tuple[int, str]] = {}
    errors: list[tuple[int | None, str]] = []
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append((ln, f"expected 'section.key = value', got {body!r}"))
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            errors.append((ln, f"unknown key {key!r}"))
            continue
        if key in seen:
            errors.append((ln, f"duplicate key {key!r} (first set on line {seen[key]})"))
            continue
        seen[key] = ln
        raw[key] = (ln, value)
    return raw, errors


def parse_config(text: str) -> ExperimentConfig:
    raw, errors = _tokenize(text)
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for key, (ln, value) in raw.items():
        try:
            values[key] = SCHEMA[key].parse(value)
            lines[key] = ln
        except ValueError as exc:
            errors.append((ln, f"{key}: {exc}"))

    kind = values.get("experiment.kind")
    if kind is not None and kind not in KINDS:
        errors.append((lines.get("experiment.kind"), f"experiment.kind must be one of {', '.join(KINDS)}, got {kind!r}"))
        kind = None
    for key, spec in SCHEMA.items():
        if key in values or key in raw:
            continue
        if spec.default is None:
            needed = kind is None and spec.required == ALL or kind is not None and kind in spec.required
            if needed:
                errors.append((None, f"missing required key {key!r} ({spec.doc})"))
        else:
            values[key] = spec.default

    def line(key):
        return lines.get(key)

    def check(cond: bool, key: str, msg: str):
        if not cond:
            errors.append((line(key), f"{key}: {msg}"))

    # constraints owned by the model and grid layers, each tied to its line
    d, p = values.get("model.d"), values.get("model.p")
    if d is not None:
        check(d >= 3, "model.d", f"dimension must be >= 3, got {d}")
    if d is not None and p is not None and d >= 3:
        lo, hi = exponent_window(d)
        if values.get("model.strict", True):
            check(
                lo < p < hi,
                "model.p",
                f"p={p} outside the admissible interval ({lo:.10g}, {hi:.10g}) for d={d}",
            )
        else:
            check(p > 1, "model.p", f"p must exceed 1, got {p}")
    if "model.potential" in values:
        check(values["model.potential"] in ("zero", "bump"), "model.potential", "must be 'zero' or 'bump'")
    if values.get("model.potential") == "bump":
        check(values.get("model.r0", 1.0) > 0, "model.r0", "bump support radius must be positive")
    n, r_max = values.get("grid.n"), values.get("grid.r_max")
    if n is not None:
        check(n >= 16, "grid.n", f"need at least 16 nodes, got {n}")
    if r_max is not None:
        check(r_max > 0, "grid.r_max", f"must be positive, got {r_max}")
    check(values["stepper.dt"] > 0, "stepper.dt", "must be positive")
    check(values["stepper.t_end"] >= 0, "stepper.t_end", "must be non-negative")
    check(values["stepper.record_every"] >= 1, "stepper.record_every", "must be >= 1")
    check(values["stepper.sponge_width"] >= 0, "stepper.sponge_width", "must be non-negative")
    check(values["stepper.sponge_strength"] >= 0, "stepper.sponge_strength", "must be non-negative")
    if values["stepper.dt"] > 0:
        steps = values["stepper.t_end"] / values["stepper.dt"]
        check(abs(steps - round(steps)) < 1e-9 * max(1.0, steps), "stepper.t_end", "must be a multiple of stepper.dt")
    if r_max is not None and values["stepper.sponge_width"] > 0:
        check(values["stepper.sponge_width"] < r_max / 4, "stepper.sponge_width", f"must be below r_max/4 = {r_max / 4:g}")
    check(values["diagnostics.weight"] in ("quadratic", "quartic", "abs"), "diagnostics.weight", "must be quadratic, quartic or abs")
    check(values["diagnostics.style"] in ("none", "convex_linear", "compact"), "diagnostics.style", "unknown truncation style")
    check(values["initial.width"] > 0, "initial.width", "must be positive")
    if "boundstate.E" in values:
        check(values["boundstate.E"] < 0, "boundstate.E", "must be negative")
    check(values["boundstate.tol"] > 0, "boundstate.tol", "must be positive")
    check(0 < values["boundstate.damping"] <= 1, "boundstate.damping", "must lie in (0, 1]")
    br = values["boundstate.bracket"]
    check(len(br) == 2 and 0 < br[0] < br[1], "boundstate.bracket", "need two amplitudes 0 < lo < hi")
    check(values["branch.steps"] >= 0, "branch.steps", "must be non-negative")
    if "sweep.amplitudes" in values:
        amps = values["sweep.amplitudes"]
        check(len(amps) >= 1, "sweep.amplitudes", "need at least one amplitude")
        check(all(a >= 0 for a in amps), "sweep.amplitudes", "must be non-negative")
        check(all(b >= a for a, b in zip(amps, amps[1:])), "sweep.amplitudes", "must be ascending")
    if kind in ("branch", "probe-attractor", "sweep", "boundstate"):
        check(values.get("model.potential") == "bump" and values.get("model.v0", 0.0) < 0,
              "model.potential", f"kind {kind!r} needs a binding bump potential (v0 < 0)")

    if errors:
        raise ConfigError(sorted(errors, key=lambda e: (e[0] is None, e[0] or 0)))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            potential = PotentialSpec(values["model.potential"], values["model.v0"], values["model.r0"])
            params = ModelParams(values["model.d"], values["model.p"], potential, strict=values["model.strict"])
        grid = make_grid(values["model.d"], values["grid.n"], values["grid.r_max"])
        sponge = None
        if values["stepper.sponge_width"] > 0:
            sponge = Sponge(values["stepper.sponge_width"], values["stepper.sponge_strength"])
        stepper = StepperConfig(
            values["stepper.dt"], values["stepper.t_end"], values["stepper.record_every"], sponge,
            values["stepper.fold_potential"],
        )
        stepper.validate_for(grid)
    except RadNLSError as exc:
        raise ConfigError([(None, str(exc))]) from exc
    return ExperimentConfig(kind, params, grid, stepper, values, lines)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([(None, f"cannot read {path}: {exc}")]) from exc
    return parse_config(text)
