import configparser
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np

from . import config as defaults
from .config import SolverSettings, VerifySettings
from .convex_geometry import Ball, Box, HalfspaceIntersection, ObstacleFamily, SeparationWitness
from .errors import ObstacleProblemError, ParseError, ValidationError
from .grid_operator import CoefficientField, SpatialGrid
from .penalized_solver import Driver, ScenarioSpec, validated_ladder
from .provenance import sha256

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"


class Key(NamedTuple):
    kind: str  # str | choice | int | float | bool | ints | floats | matrix
    default: str
    choices: Tuple[str, ...] = ()


def _listed(values) -> str:
    return ", ".join(repr(v) for v in values)


SCHEMA: Dict[str, Dict[str, Key]] = {
    "scenario": {
        "name": Key("str", "custom"),
        "preset": Key("str", ""),
        "seed": Key("int", str(defaults.SEED)),
    },
    "domain": {
        "lengths": Key("floats", "1.0"),
        "cells": Key("ints", "32"),
    },
    "time": {
        "horizon": Key("float", "1.0"),
        "steps": Key("int", "32"),
    },
    "system": {
        "components": Key("int", "1"),
    },
    "coefficient": {
        "kind": Key("choice", "constant", ("constant", "piecewise", "rotating")),
        "value": Key("matrix", "1.0"),
        "left": Key("float", "1.0"),
        "right": Key("float", "1.0"),
        "interface": Key("float", "0.5"),
        "major": Key("float", "2.0"),
        "minor": Key("float", "1.0"),
        "frequency": Key("float", "1.0"),
    },
    "driver": {
        "kind": Key("choice", "zero", ("zero", "linear", "clipped")),
        "coupling": Key("matrix", ""),
        "source": Key("floats", ""),
        "cubic": Key("float", "0.0"),
        "clip": Key("float", "1.0"),
        "gradient_weight": Key("float", "0.0"),
    },
    "terminal": {
        "kind": Key("choice", "zero", ("zero", "sine", "parabola", "constant", "box_center")),
        "amplitude": Key("float", "0.0"),
        "direction": Key("floats", ""),
    },
    "obstacle": {
        "kind": Key("choice", "ball", ("ball", "growing_ball", "moving_box", "lower_box", "halfspace")),
        "center": Key("floats", ""),
        "radius": Key("float", "1.0"),
        "growth": Key("float", "0.0"),
        "half_width": Key("float", "1.0"),
        "amplitude": Key("float", "0.0"),
        "frequency": Key("float", "1.0"),
        "signs": Key("floats", ""),
        "lower_amplitude": Key("float", "0.0"),
        "lower_shift": Key("float", "1.0"),
        "ceiling": Key("float", "1.0"),
        "normals": Key("matrix", ""),
        "offsets": Key("floats", ""),
        "drift": Key("floats", ""),
        "bound": Key("float", "0.0"),  # 0 derives R_D from the shape
    },
    "witness": {
        "kind": Key("choice", "none", ("none", "zero", "constant", "box_center")),
        "epsilon": Key("float", "0.5"),
        "value": Key("floats", ""),
    },
    "solver": {
        "ladder": Key("ints", _listed(defaults.LADDER)),
        "solve_penalty": Key("float", "0.0"),  # 0 solves at the finest rung
        "theta": Key("float", repr(defaults.THETA)),
        "tol_picard": Key("float", repr(defaults.TOL_PICARD)),
        "tol_res": Key("float", repr(defaults.TOL_RES)),
        "picard_max_iter": Key("int", str(defaults.PICARD_MAX_ITER)),
        "picard_relaxation": Key("float", repr(defaults.PICARD_RELAXATION)),
        "penalty_jacobian": Key("bool", "true" if defaults.PENALTY_JACOBIAN else "false"),
        "max_retries": Key("int", str(defaults.MAX_RETRIES)),
        "linear_solver": Key("choice", defaults.LINEAR_SOLVER, ("auto", "direct", "cg")),
        "cg_tol": Key("float", repr(defaults.CG_TOL)),
        "cg_iter_factor": Key("int", str(defaults.CG_ITER_FACTOR)),
        "tol_feas_factor": Key("float", repr(defaults.TOL_FEAS_FACTOR)),
        "tol_min": Key("float", repr(defaults.TOL_MIN)),
        "tol_vi": Key("float", repr(defaults.TOL_VI)),
        "decay_slack": Key("float", repr(defaults.DECAY_SLACK)),
        "feasibility_slack": Key("float", repr(defaults.FEASIBILITY_SLACK)),
        "bound_factor": Key("float", repr(defaults.BOUND_FACTOR)),
        "witness_residual_tol": Key("float", repr(defaults.WITNESS_RESIDUAL_TOL)),
        "dykstra_sweep_factor": Key("int", str(defaults.DYKSTRA_SWEEP_FACTOR)),
        "dykstra_tol": Key("float", repr(defaults.DYKSTRA_TOL)),
        "direction_factor": Key("int", str(defaults.DIRECTION_FACTOR)),
        "lipschitz_probes": Key("int", str(defaults.LIPSCHITZ_PROBES)),
        "perturbation": Key("float", repr(defaults.PERTURBATION)),
    },
    "verify": {
        "oracle": Key("choice", "none", ("none", "heat", "psor")),
        "mc_paths": Key("int", str(defaults.MC_PATHS)),
        "mc_dt": Key("float", repr(defaults.MC_DT)),
        "mc_nodes": Key("int", str(defaults.MC_NODES)),
        "mc_chunk": Key("int", str(defaults.MC_CHUNK)),
        "c_disc": Key("float", repr(defaults.C_DISC)),
        "se_fraction": Key("float", repr(defaults.SE_FRACTION)),
        "psor_omega": Key("float", repr(defaults.PSOR_OMEGA)),
        "psor_tol": Key("float", repr(defaults.PSOR_TOL)),
        "psor_max_iter": Key("int", str(defaults.PSOR_MAX_ITER)),
        "psor_gap": Key("float", repr(defaults.PSOR_GAP)),
        "heat_constant": Key("float", repr(defaults.HEAT_CONSTANT)),
        "unconstrained_tol": Key("float", repr(defaults.UNCONSTRAINED_TOL)),
    },
}

# keys of [solver] / [verify] that are harness choices rather than settings fields
HARNESS_KEYS = {"solver": ("solve_penalty",), "verify": ("oracle",)}

BUILTINS: Dict[str, str] = {
    "trivial_ball": """
[scenario]
name = trivial_ball

[domain]
lengths = 1.0, 1.0
cells = 16

[time]
horizon = 1.0
steps = 8

[system]
components = 2

[obstacle]
kind = ball
radius = 1.0

[witness]
kind = zero
epsilon = 0.5

[verify]
mc_paths = 2000
mc_nodes = 4
""",
    "heat_manufactured": """
[scenario]
name = heat_manufactured

[domain]
lengths = 3.141592653589793
cells = 32

[time]
horizon = 1.0
steps = 64

[terminal]
kind = sine
amplitude = 1.0

[obstacle]
kind = ball
radius = 2.0

[witness]
kind = zero
epsilon = 0.5

[verify]
oracle = heat
""",
    "psor_compare": """
[scenario]
name = psor_compare

[domain]
lengths = 1.0
cells = 32

[time]
horizon = 0.5
steps = 16

[terminal]
kind = parabola
amplitude = 0.25

[obstacle]
kind = lower_box
lower_amplitude = 0.25
lower_shift = 0.05
ceiling = 2.0

[witness]
kind = constant
epsilon = 0.5
value = 1.0

[verify]
oracle = psor
""",
    "growing_ball": """
[scenario]
name = growing_ball

[domain]
lengths = 1.0
cells = 32

[time]
horizon = 1.0
steps = 32

[driver]
kind = zero
source = 2.0

[terminal]
kind = sine
amplitude = 0.9

[obstacle]
kind = growing_ball
radius = 1.0
growth = 1.0

[witness]
kind = zero
epsilon = 0.5
""",
    "moving_box_example2": """
[scenario]
name = moving_box_example2

[domain]
lengths = 1.0, 1.0
cells = 16

[time]
horizon = 1.0
steps = 16

[system]
components = 2

[driver]
kind = zero
source = 3.0, -3.0

[terminal]
kind = box_center

[obstacle]
kind = moving_box
half_width = 1.0
amplitude = 0.5
frequency = 1.0

[witness]
kind = box_center
epsilon = 0.5
""",
    "coupled_two_component": """
[scenario]
name = coupled_two_component

[domain]
lengths = 1.0
cells = 24

[time]
horizon = 0.5
steps = 16

[system]
components = 2

[driver]
kind = linear
coupling = 0.0, 2.0; -2.0, 0.0
source = 1.5, 1.0

[terminal]
kind = sine
amplitude = 0.9
direction = 1.0, 0.0

[obstacle]
kind = ball
radius = 1.0

[witness]
kind = zero
epsilon = 0.5
""",
}


def _items(text: str, sep: str):
    return [part.strip() for part in text.split(sep) if part.strip()]


def _finite(value: float) -> float:
    if not np.isfinite(value):
        raise ValueError("value is not finite")
    return value


def _coerce(section: str, name: str, key: Key, text: str) -> Any:
    text = text.strip()
    try:
        if key.kind == "str":
            return text
        if key.kind == "choice":
            if text not in key.choices:
                raise ValueError(f"expected one of {', '.join(key.choices)}")
            return text
        if key.kind == "int":
            return int(text)
        if key.kind == "float":
            return _finite(float(text))
        if key.kind == "bool":
            states = configparser.ConfigParser.BOOLEAN_STATES
            if text.lower() not in states:
                raise ValueError("expected true or false")
            return states[text.lower()]
        if key.kind == "ints":
            return tuple(int(v) for v in _items(text, ","))
        if key.kind == "floats":
            return tuple(_finite(float(v)) for v in _items(text, ","))
        rows = tuple(tuple(_finite(float(v)) for v in _items(row, ",")) for row in _items(text, ";"))
        if len({len(row) for row in rows}) > 1:
            raise ValueError("matrix rows differ in length")
        return rows
    except ValueError as exc:
        raise ValidationError(f"{section}.{name}", f"cannot read {text!r} as {key.kind}: {exc}") from exc


def _format(key: Key, value: Any) -> str:
    if key.kind in ("str", "choice"):
        return value
    if key.kind == "bool":
        return "true" if value else "false"
    if key.kind in ("int", "float"):
        return repr(value)
    if key.kind in ("ints", "floats"):
        return _listed(value)
    return "; ".join(_listed(row) for row in value)


def _defaults() -> Dict[str, Dict[str, Any]]:
    return {
        section: {name: _coerce(section, name, key, key.default) for name, key in keys.items()}
        for section, keys in SCHEMA.items()
    }


@dataclass(frozen=True)
class ScenarioConfig:
    """Typed values for every schema key; defaults are materialised."""

    values: Dict[str, Dict[str, Any]]
    source: str = "<text>"

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    @property
    def name(self) -> str:
        return self.values["scenario"]["name"]

    @property
    def seed(self) -> int:
        return self.values["scenario"]["seed"]

    def to_text(self) -> str:
        """Canonical INI text; parsing it gives back the same values."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            lines.extend(f"{name} = {_format(key, self.values[section][name])}".rstrip() for name, key in keys.items())
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return sha256(self.to_text().encode())

    def settings(self) -> SolverSettings:
        values = {k: v for k, v in self.values["solver"].items() if k not in HARNESS_KEYS["solver"]}
        return SolverSettings(**values)

    def verify_settings(self) -> VerifySettings:
        values = {k: v for k, v in self.values["verify"].items() if k not in HARNESS_KEYS["verify"]}
        return VerifySettings(**values)

    def solve_penalty(self) -> float:
        return self.values["solver"]["solve_penalty"] or float(self.values["solver"]["ladder"][-1])

    def with_value(self, section: str, name: str, text) -> "ScenarioConfig":
        """Copy with one key replaced, read from its text form."""
        if name not in SCHEMA.get(section, {}):
            raise ValidationError(f"{section}.{name}", "unknown key")
        values = {s: dict(v) for s, v in self.values.items()}
        values[section][name] = _coerce(section, name, SCHEMA[section][name], str(text))
        return ScenarioConfig(values, self.source)


def _error_line(exc: configparser.Error) -> Optional[int]:
    line = getattr(exc, "lineno", None)
    if line is None and getattr(exc, "errors", None):
        line = exc.errors[0][0]
    return line


def config_from_text(text: str, source: str = "<text>") -> ScenarioConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None, empty_lines_in_values=False)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        message = getattr(exc, "message", str(exc)).splitlines()[0]
        raise ParseError(message, _error_line(exc)) from exc
    if parser.defaults():
        raise ValidationError(parser.default_section, "a DEFAULT section is not allowed")
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValidationError(section, "unknown section")
        for name in parser[section]:
            if name not in SCHEMA[section]:
                raise ValidationError(f"{section}.{name}", "unknown key")

    preset = parser.get("scenario", "preset", fallback="").strip()
    if preset:
        if preset not in BUILTINS:
            raise ValidationError("scenario.preset", f"unknown preset {preset!r}")
        base = builtin_config(preset).values
    else:
        base = _defaults()
    values = {section: dict(keys) for section, keys in base.items()}
    for section in parser.sections():
        for name, raw in parser[section].items():
            values[section][name] = _coerce(section, name, SCHEMA[section][name], raw)
    return ScenarioConfig(values, source)


def builtin_config(name: str) -> ScenarioConfig:
    if name not in BUILTINS:
        raise ValidationError("scenario", f"no built-in scenario {name!r} (have {', '.join(BUILTINS)})")
    return config_from_text(BUILTINS[name], BUILTIN_PREFIX + name)


def parse_config(path) -> ScenarioConfig:
    """Reads a scenario file, or a built-in scenario given as ``builtin:<name>``."""
    where = str(path)
    if where.startswith(BUILTIN_PREFIX):
        return builtin_config(where[len(BUILTIN_PREFIX):])
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {where}: {exc.strerror or exc}") from exc
    return config_from_text(text, where)


@contextmanager
def _section(name: str):
    # semantic failures while building one section surface as ValidationError(section)
    try:
        yield
    except ValidationError:
        raise
    except (ValueError, ObstacleProblemError) as exc:
        raise ValidationError(name, str(exc)) from exc


def _vector(values, m: int, what: str, fill: float = 0.0) -> np.ndarray:
    if not values:
        return np.full(m, fill)
    out = np.asarray(values, dtype=float)
    if out.size == 1:
        return np.full(m, out[0])
    if out.shape != (m,):
        raise ValueError(f"{what} needs 1 or {m} entries, got {out.size}")
    return out


def bump(lengths, points: np.ndarray) -> np.ndarray:
    """prod sin(pi x_i / l_i), zero on the boundary."""
    return np.prod(np.sin(np.pi * points / np.asarray(lengths)), axis=-1)


def parabola(lengths, points: np.ndarray) -> np.ndarray:
    """prod 4 x_i (l_i - x_i) / l_i^2, zero on the boundary and one at the centre."""
    lengths = np.asarray(lengths)
    return np.prod(4.0 * points * (lengths - points) / lengths**2, axis=-1)


def laplace_eigenvalue(lengths) -> float:
    """-Delta eigenvalue of the bump function."""
    return float(np.sum((np.pi / np.asarray(lengths)) ** 2))


@dataclass(frozen=True)
class MovingBox:
    """Box [c - w, c + w] around c_i(t, x) = s_i A cos(pi omega t) bump(x)."""

    lengths: Tuple[float, ...]
    amplitude: float
    frequency: float
    half_width: float
    signs: np.ndarray

    def center(self, t: float, points: np.ndarray) -> np.ndarray:
        shape = self.amplitude * np.cos(np.pi * self.frequency * t) * bump(self.lengths, points)
        return shape[:, None] * self.signs

    def rate(self, t: float, points: np.ndarray) -> np.ndarray:
        shape = -np.pi * self.frequency * self.amplitude * np.sin(np.pi * self.frequency * t) * bump(self.lengths, points)
        return shape[:, None] * self.signs


def _moving_box(values, m: int, grid: SpatialGrid) -> MovingBox:
    o = values["obstacle"]
    if o["kind"] != "moving_box":
        raise ValueError("box_center data need a moving_box obstacle")
    if o["half_width"] <= 0:
        raise ValueError("moving box needs a positive half_width")
    alternating = np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
    signs = alternating if not o["signs"] else _vector(o["signs"], m, "signs")
    return MovingBox(grid.lengths, o["amplitude"], o["frequency"], o["half_width"], signs)


def isotropic_constant(c, d: int) -> Optional[float]:
    if c["kind"] != "constant":
        return None
    value = np.array(c["value"], dtype=float)
    if value.shape == (1, 1):
        return float(value[0, 0])
    if np.allclose(value, value[0, 0] * np.eye(d)):
        return float(value[0, 0])
    return None


def _grid(v) -> SpatialGrid:
    lengths = v["domain"]["lengths"]
    cells = v["domain"]["cells"]
    if len(cells) == 1:
        cells = cells * len(lengths)
    return SpatialGrid(lengths, cells)


def _coefficient(c, d: int) -> CoefficientField:
    if c["kind"] == "piecewise":
        return CoefficientField.piecewise(c["left"], c["right"], c["interface"], dim=d)
    if c["kind"] == "rotating":
        if d != 2:
            raise ValueError("rotating anisotropy needs a 2-d domain")
        return CoefficientField.rotating(c["major"], c["minor"], c["frequency"])
    value = np.array(c["value"], dtype=float)
    if value.shape not in ((1, 1), (d, d)):
        raise ValueError(f"constant coefficient must be a scalar or a {d}x{d} matrix")
    return CoefficientField.constant(value, dim=d)


def _driver(dv, m: int) -> Driver:
    source = _vector(dv["source"], m, "source")
    coupling = np.zeros((m, m)) if not dv["coupling"] else np.array(dv["coupling"], dtype=float)
    if coupling.shape != (m, m):
        raise ValueError(f"coupling must be {m}x{m}")
    if dv["kind"] == "zero":
        if np.any(coupling):
            raise ValueError("a zero driver takes no coupling")
        return Driver.zero(m, source)
    if dv["kind"] == "linear":
        return Driver.linear(coupling, source)
    return Driver.clipped(coupling, source, dv["cubic"], dv["clip"], dv["gradient_weight"])


def _obstacle(v, m: int, grid: SpatialGrid, horizon: float, settings: SolverSettings) -> ObstacleFamily:
    o = v["obstacle"]
    kind = o["kind"]
    if kind in ("ball", "growing_ball"):
        if kind == "ball" and o["growth"]:
            raise ValueError("only growing_ball takes a growth rate")
        center = _vector(o["center"], m, "center")
        radius, growth = o["radius"], o["growth"]

        def evaluate(t, points):
            return Ball(np.broadcast_to(center, (len(points), m)), radius + growth * t)

        natural = float(np.linalg.norm(center)) + max(radius, radius + growth * horizon)
    elif kind == "moving_box":
        box = _moving_box(v, m, grid)

        def evaluate(t, points):
            c = box.center(t, points)
            return Box(c - box.half_width, c + box.half_width)

        natural = float(np.linalg.norm(np.abs(box.signs) * (abs(box.amplitude) + box.half_width)))
    elif kind == "lower_box":
        lengths = grid.lengths

        def evaluate(t, points):
            lower = o["lower_amplitude"] * parabola(lengths, points) - o["lower_shift"]
            return Box(lower[:, None] * np.ones(m), np.full((len(points), m), o["ceiling"]))

        natural = float(np.sqrt(m) * max(abs(o["ceiling"]), abs(o["lower_amplitude"]) + abs(o["lower_shift"])))
    else:
        if not o["normals"]:
            raise ValueError("halfspace obstacle needs normals")
        base = HalfspaceIntersection.from_constraints(
            np.array(o["normals"]), np.array(o["offsets"]),
            sweep_factor=settings.dykstra_sweep_factor, tol=settings.dykstra_tol,
        )
        if base.dim != m:
            raise ValueError(f"halfspace normals live in R^{base.dim}, system has m={m}")
        drift = _vector(o["drift"], m, "drift")

        def evaluate(t, points):
            return base.translated(np.broadcast_to(drift * t, (len(points), m)))

        natural = float(base.bounding_radius()) + float(np.linalg.norm(drift)) * horizon

    family = ObstacleFamily(evaluate, o["bound"] or natural, kind)
    for t in (0.0, horizon):
        family.evaluate(t, grid.points)
    return family


def _terminal(v, m: int, grid: SpatialGrid, horizon: float) -> np.ndarray:
    tv = v["terminal"]
    kind = tv["kind"]
    if kind == "box_center":
        values = _moving_box(v, m, grid).center(horizon, grid.points)
    else:
        direction = _vector(tv["direction"], m, "direction", fill=1.0)
        shapes = {
            "zero": lambda: np.zeros(grid.size),
            "sine": lambda: bump(grid.lengths, grid.points),
            "parabola": lambda: parabola(grid.lengths, grid.points),
            "constant": lambda: np.ones(grid.size),
        }
        values = tv["amplitude"] * shapes[kind]()[:, None] * direction
    values[grid.boundary] = 0.0
    return values


def _witness(v, m: int, grid: SpatialGrid, times: np.ndarray) -> Optional[SeparationWitness]:
    wv = v["witness"]
    kind = wv["kind"]
    if kind == "none":
        return None
    shape = (len(times), grid.size, m)
    source = np.zeros(shape)
    if kind == "zero":
        values = np.zeros(shape)
    elif kind == "constant":
        values = np.broadcast_to(_vector(wv["value"], m, "value"), shape).copy()
    else:
        box = _moving_box(v, m, grid)
        kappa = isotropic_constant(v["coefficient"], grid.dim)
        if kappa is None:
            raise ValueError("box_center witness needs a constant isotropic coefficient")
        lam = laplace_eigenvalue(grid.lengths)
        values = np.stack([box.center(t, grid.points) for t in times])
        values[:, grid.boundary] = 0.0
        # f* = -(d/dt + L) u* with L bump = -(kappa / 2) lam bump
        source = np.stack([-box.rate(t, grid.points) for t in times]) + 0.5 * kappa * lam * values
    return SeparationWitness(wv["epsilon"], values, values[-1].copy(), source)


def _check_oracle(v, m: int, driver: Driver) -> None:
    if v["verify"]["oracle"] != "psor":
        return
    if m != 1 or v["obstacle"]["kind"] not in ("lower_box", "moving_box") or driver.depends_on_solution:
        raise ValidationError(
            "verify.oracle", "the projected SOR oracle needs m = 1, a box obstacle and a driver independent of u"
        )


def build_scenario(config: ScenarioConfig, validate: bool = True) -> ScenarioSpec:
    """Turns a parsed configuration into a checked ScenarioSpec."""
    v = config.values
    m = v["system"]["components"]
    with _section("solver"):
        settings = config.settings()
        validated_ladder(settings.ladder)
    with _section("system"):
        if m < 1:
            raise ValueError("need at least one component")
    with _section("domain"):
        grid = _grid(v)
    with _section("time"):
        horizon, steps = v["time"]["horizon"], v["time"]["steps"]
        if horizon <= 0 or steps < 1:
            raise ValueError("need a positive horizon and at least one step")
    times = np.linspace(0.0, horizon, steps + 1)
    with _section("coefficient"):
        coefficient = _coefficient(v["coefficient"], grid.dim)
        coefficient.check(0.0, grid.points)
    with _section("driver"):
        driver = _driver(v["driver"], m)
    with _section("obstacle"):
        obstacle = _obstacle(v, m, grid, horizon, settings)
    with _section("terminal"):
        terminal = _terminal(v, m, grid, horizon)
    with _section("witness"):
        witness = _witness(v, m, grid, times)
    _check_oracle(v, m, driver)

    spec = ScenarioSpec(
        config.name, grid, horizon, steps, m, terminal, driver, coefficient, obstacle,
        witness, settings, config.seed,
    )
    if validate:
        spec.validate()
    logger.info(
        "Built scenario %s: d=%d, m=%d, %d nodes, %d steps", spec.name, grid.dim, m, grid.size, steps
    )
    return spec
