import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import EmitError, ParseError
from .grid_operator import SpatialGrid
from .penalized_solver import ConvergenceReport, RungDiagnostics
from .provenance import document_hash
from .stochastic_verifier import FKCheck

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv")
RESULT_FILE = "result.json"
MANIFEST_FILE = "manifest.json"
VOLATILE_KEYS = ("wall_time",)  # left out of result hashes
LAYOUT = "rows time-major, nodes row-major (last axis fastest)"

REPORT_COLUMNS = list(RungDiagnostics.__dataclass_fields__) + ["energy"]
FK_COLUMNS = ["node", "time", "component", "value", "standard_error", "paths", "grid_value", "band", "passed"]
CHECK_COLUMNS = ["name", "passed", "value", "limit"]


def check(passed, value=None, limit=None) -> dict:
    """One named acceptance check: outcome plus the number compared and its limit."""
    return {
        "passed": bool(passed),
        "value": None if value is None else float(value),
        "limit": None if limit is None else float(limit),
    }


def _array(values) -> Optional[list]:
    return None if values is None else np.asarray(values, dtype=float).tolist()


@dataclass(eq=False)
class RunResult:
    scenario: str
    subcommand: str
    config_text: str
    provenance: dict
    grid: dict  # lengths, cells, components
    times: Optional[np.ndarray] = None
    solution: Optional[np.ndarray] = None  # (steps + 1, nodes, m)
    density: Optional[np.ndarray] = None
    penalty: Optional[float] = None
    report: Optional[ConvergenceReport] = None
    fk: List[FKCheck] = field(default_factory=list)
    checks: Dict[str, dict] = field(default_factory=dict)
    diagnostics: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def spatial_grid(self) -> SpatialGrid:
        return SpatialGrid(tuple(self.grid["lengths"]), tuple(self.grid["cells"]))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "subcommand": self.subcommand,
            "config_text": self.config_text,
            "provenance": self.provenance,
            "grid": self.grid,
            "times": _array(self.times),
            "solution": _array(self.solution),
            "density": _array(self.density),
            "penalty": self.penalty,
            "report": None if self.report is None else self.report.to_dict(),
            "fk": [c.to_dict() for c in self.fk],
            "checks": self.checks,
            "diagnostics": self.diagnostics,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunResult":
        def array(key):
            return None if data.get(key) is None else np.asarray(data[key], dtype=float)

        return cls(
            scenario=data["scenario"],
            subcommand=data["subcommand"],
            config_text=data["config_text"],
            provenance=data["provenance"],
            grid=data["grid"],
            times=array("times"),
            solution=array("solution"),
            density=array("density"),
            penalty=data.get("penalty"),
            report=None if data.get("report") is None else ConvergenceReport.from_dict(data["report"]),
            fk=[FKCheck.from_dict(row) for row in data.get("fk", [])],
            checks=data.get("checks", {}),
            diagnostics=data.get("diagnostics", {}),
        )

    def result_hash(self) -> str:
        """SHA-256 of the JSON document without wall-clock fields."""
        return document_hash(_without_volatile(self.to_dict()))


def _without_volatile(document):
    if isinstance(document, dict):
        return {k: _without_volatile(v) for k, v in document.items() if k not in VOLATILE_KEYS}
    if isinstance(document, list):
        return [_without_volatile(v) for v in document]
    return document


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def _write_table(path: str, notes: List[str], header: List[str], rows) -> str:
    with open(path, "w", newline="") as f:
        for note in notes:
            f.write(f"# {note}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_cell(v) for v in row] for row in rows)
    return path


def _field_rows(result: RunResult, values: Optional[np.ndarray], points: np.ndarray):
    if values is None:
        return
    for k, t in enumerate(result.times):
        for node, point in enumerate(points):
            yield [k, t, node, *point, *values[k, node]]


def _write_csv(result: RunResult, out_dir: str) -> List[str]:
    grid = result.spatial_grid()
    points = grid.points
    m = result.grid["components"]
    where = f"grid lengths {list(grid.lengths)}, cells {list(grid.cells)}; {LAYOUT}"
    coords = [f"x_{i}" for i in range(grid.dim)]
    written = [
        _write_table(
            os.path.join(out_dir, "solution.csv"),
            [f"{result.scenario}: solution u_n at penalty {result.penalty}", where,
             "units: t and x in model units, u in units of the terminal data"],
            ["step", "time", "node", *coords, *[f"u_{i}" for i in range(m)]],
            _field_rows(result, result.solution, points),
        ),
        _write_table(
            os.path.join(out_dir, "density.csv"),
            [f"{result.scenario}: reaction density -n (u_n - Pi_D(u_n))", where,
             "units: per unit volume and time; mass = rho * node volume * dt (left-point)"],
            ["step", "time", "node", *coords, *[f"rho_{i}" for i in range(m)]],
            _field_rows(result, result.density, points),
        ),
    ]
    rows = [] if result.report is None else result.report.rows
    written.append(_write_table(
        os.path.join(out_dir, "report.csv"),
        [f"{result.scenario}: one row per penalization rung, coarse to fine",
         "units: norms over space-time in model units; wall_time in seconds"],
        REPORT_COLUMNS,
        ([row.to_dict()[c] for c in REPORT_COLUMNS] for row in rows),
    ))
    written.append(_write_table(
        os.path.join(out_dir, "fk.csv"),
        [f"{result.scenario}: Monte Carlo estimates against grid values"],
        FK_COLUMNS,
        ([c.to_dict()[k] for k in FK_COLUMNS] for c in result.fk),
    ))
    written.append(_write_table(
        os.path.join(out_dir, "checks.csv"),
        [f"{result.scenario}/{result.subcommand}: acceptance checks"],
        CHECK_COLUMNS,
        ([name, c["passed"], c["value"], c["limit"]] for name, c in result.checks.items()),
    ))
    manifest = {k: v for k, v in result.to_dict().items() if k not in ("times", "solution", "density")}
    manifest["files"] = [os.path.basename(p) for p in written]
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
    written.append(path)
    return written


def emit(result: RunResult, out_dir: str, fmt: str = "json") -> List[str]:
    """Writes result.json, plus per-field CSV tables and a manifest for ``fmt='csv'``."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r} (choose from {', '.join(FORMATS)})")
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, RESULT_FILE)
        with open(path, "w") as f:
            json.dump(result.to_dict(), f, sort_keys=True)
        written = [path]
        if fmt == "csv":
            written += _write_csv(result, out_dir)
    except OSError as exc:
        raise EmitError(f"cannot write results to {out_dir}: {exc}") from exc
    logger.info("Wrote %d files to %s", len(written), out_dir)
    return written


def read_result(path: str) -> RunResult:
    """Loads a result.json (or the directory holding one)."""
    if os.path.isdir(path):
        path = os.path.join(path, RESULT_FILE)
    try:
        with open(path) as f:
            document = json.load(f)
    except OSError as exc:
        raise ParseError(f"cannot read result {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"result {path} is not valid JSON: {exc.msg}", exc.lineno) from exc
    except ValueError as exc:
        raise ParseError(f"result {path} is not valid JSON: {exc}") from exc
    try:
        return RunResult.from_dict(document)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"result {path} is missing or has malformed fields: {exc}") from exc
