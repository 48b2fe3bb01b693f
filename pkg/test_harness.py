import csv
import json
import os

import pytest

from parabolic_vi.config import SolverSettings, VerifySettings
from parabolic_vi.errors import EmitError, ParseError, PicardDiverged, ScenarioFailure, ValidationError
from parabolic_vi.harness import run
from parabolic_vi.main import main
from parabolic_vi.psor import psor_solve
from parabolic_vi.scenarios import (
    BUILTINS,
    HARNESS_KEYS,
    SCHEMA,
    build_scenario,
    builtin_config,
    config_from_text,
    parse_config,
)
from parabolic_vi.storage import RESULT_FILE, emit, read_result


def small_ladder(name):
    return builtin_config(name).with_value("solver", "ladder", "16, 64, 256")


@pytest.fixture(scope="module")
def trivial_solve():
    return run(builtin_config("trivial_ball"), "solve")


@pytest.fixture(scope="module")
def trivial_ladder():
    return run(small_ladder("trivial_ball"), "ladder")


def data_lines(path):
    with open(path) as f:
        return [line for line in f if not line.startswith("#")]


# configuration

@pytest.mark.parametrize("section, settings", [("solver", SolverSettings), ("verify", VerifySettings)])
def test_every_setting_has_a_schema_key(section, settings):
    fields = set(settings.__dataclass_fields__)
    keys = set(SCHEMA[section]) - set(HARNESS_KEYS[section])
    assert fields == keys


def test_empty_document_materialises_defaults():
    config = config_from_text("")
    assert config.settings() == SolverSettings()
    assert config.verify_settings() == VerifySettings()
    assert config["domain"]["cells"] == (32,)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_canonical_text_reads_back(name):
    config = builtin_config(name)
    again = config_from_text(config.to_text())
    assert again.values == config.values
    assert again.config_hash() == config.config_hash()


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_build(name):
    s = build_scenario(builtin_config(name))
    assert s.name == name
    assert s.terminal.shape == (s.grid.size, s.components)


def test_preset_is_overridden_key_by_key():
    config = config_from_text("[scenario]\npreset = psor_compare\n\n[time]\nsteps = 8\n")
    assert config.name == "psor_compare"
    assert config["time"]["steps"] == 8
    assert config["obstacle"]["kind"] == "lower_box"


@pytest.mark.parametrize(
    "text, line",
    [
        ("[scenario]\nname = broken\nthis line has no value\n", 3),
        ("name = orphan\n", 1),
        ("[time]\nsteps = 4\nsteps = 8\n", 3),
    ],
)
def test_syntax_errors_carry_the_line(text, line):
    with pytest.raises(ParseError) as excinfo:
        config_from_text(text)
    assert excinfo.value.line == line


@pytest.mark.parametrize(
    "text, field",
    [
        ("[mesh]\ncells = 4\n", "mesh"),
        ("[domain]\nsize = 3\n", "domain.size"),
        ("[time]\nsteps = many\n", "time.steps"),
        ("[obstacle]\nkind = sphere\n", "obstacle.kind"),
        ("[scenario]\npreset = nothing\n", "scenario.preset"),
    ],
)
def test_unknown_or_malformed_keys(text, field):
    with pytest.raises(ValidationError) as excinfo:
        config_from_text(text)
    assert excinfo.value.field == field


def test_terminal_value_outside_the_obstacle():
    config = builtin_config("heat_manufactured").with_value("terminal", "amplitude", 3.0)
    with pytest.raises(ValidationError) as excinfo:
        build_scenario(config)
    assert excinfo.value.field == "terminal"


def test_semantic_errors_name_their_section():
    config = builtin_config("trivial_ball").with_value("coefficient", "kind", "rotating")
    config = config.with_value("domain", "lengths", "1.0").with_value("system", "components", 1)
    with pytest.raises(ValidationError) as excinfo:
        build_scenario(config)
    assert excinfo.value.field == "coefficient"


def test_short_ladder_is_rejected():
    with pytest.raises(ValidationError) as excinfo:
        build_scenario(builtin_config("trivial_ball").with_value("solver", "ladder", "16, 64"))
    assert excinfo.value.field == "solver"


def test_parse_config_reads_files_and_builtins(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text("[scenario]\npreset = growing_ball\nseed = 5\n")
    config = parse_config(str(path))
    assert config.seed == 5
    assert config.source == str(path)
    assert parse_config("builtin:growing_ball").values["obstacle"] == config.values["obstacle"]
    with pytest.raises(ParseError):
        parse_config(str(tmp_path / "missing.ini"))


# runs

def test_solve_on_the_trivial_scenario_passes(trivial_solve):
    assert trivial_solve.passed
    assert {"feasibility", "minimality", "variational_inequality", "weak_formulation", "no_contact"} <= set(
        trivial_solve.checks
    )
    assert trivial_solve.penalty == 4096.0
    assert trivial_solve.provenance["config_hash"] == builtin_config("trivial_ball").config_hash()


def test_heat_oracle_check():
    result = run(builtin_config("heat_manufactured"), "solve")
    assert result.checks["heat_oracle"]["passed"]
    assert result.checks["no_contact"]["passed"]
    assert result.passed


def test_projected_sor_checks():
    result = run(builtin_config("psor_compare"), "solve")
    names = (
        "psor_gap", "density_sign", "contact_band", "reaction_support",
        "feasibility", "minimality", "variational_inequality",
    )
    for name in names:
        assert result.checks[name]["passed"], name
    assert result.checks["reaction_support"]["value"] > 0.0
    assert "no_contact" not in result.checks


def test_ladder_run_carries_report_and_geometry_checks(trivial_ladder):
    assert trivial_ladder.passed
    assert len(trivial_ladder.report.rows) == 3
    for name in ("decay", "energy_bound", "continuity", "separation", "reaction_support"):
        assert trivial_ladder.checks[name]["passed"], name


def test_mc_check_compares_every_component():
    result = run(builtin_config("trivial_ball"), "mc-check")
    assert len(result.fk) == 4 * 2
    assert result.checks["feynman_kac"]["passed"]
    assert "optional_stopping" in result.checks


def test_failures_are_wrapped_with_the_scenario():
    config = builtin_config("psor_compare").with_value("solver", "picard_max_iter", 1)
    config = config.with_value("solver", "max_retries", 0)
    with pytest.raises(ScenarioFailure) as excinfo:
        run(config, "solve")
    assert excinfo.value.scenario == "psor_compare"
    assert isinstance(excinfo.value.cause, PicardDiverged)


@pytest.mark.parametrize("name", ["heat_manufactured", "trivial_ball", "coupled_two_component"])
def test_projected_sor_oracle_mismatch_is_a_validation_error(name):
    config = builtin_config(name).with_value("verify", "oracle", "psor")
    with pytest.raises(ScenarioFailure) as excinfo:
        run(config, "solve")
    assert isinstance(excinfo.value.cause, ValidationError)
    assert excinfo.value.cause.field == "verify.oracle"


def test_projected_sor_rejects_a_ball_obstacle():
    s = build_scenario(builtin_config("heat_manufactured"))
    with pytest.raises(ValidationError) as excinfo:
        psor_solve(s)
    assert excinfo.value.field == "verify.oracle"


def test_unknown_subcommand():
    with pytest.raises(ValueError):
        run(builtin_config("trivial_ball"), "plot")


def test_same_seed_gives_the_same_hash(trivial_solve):
    again = run(builtin_config("trivial_ball"), "solve")
    assert again.result_hash() == trivial_solve.result_hash()
    reseeded = run(builtin_config("trivial_ball"), "solve", seed=99)
    assert reseeded.result_hash() != trivial_solve.result_hash()


def test_verify_reuses_a_matching_result(tmp_path, trivial_ladder):
    config = small_ladder("trivial_ball")
    emit(trivial_ladder, str(tmp_path))
    result = run(config, "verify", out_dir=str(tmp_path))
    assert result.diagnostics["reused_result"] == 1.0
    assert result.passed
    fresh = run(config.with_value("scenario", "seed", 1), "verify", out_dir=str(tmp_path))
    assert fresh.diagnostics["reused_result"] == 0.0


# emit

def test_json_result_reads_back_exactly(tmp_path, trivial_ladder):
    emit(trivial_ladder, str(tmp_path))
    loaded = read_result(str(tmp_path))
    assert loaded.to_dict() == trivial_ladder.to_dict()
    assert loaded.result_hash() == trivial_ladder.result_hash()


def test_csv_tables(tmp_path, trivial_ladder):
    written = emit(trivial_ladder, str(tmp_path), "csv")
    names = {os.path.basename(p) for p in written}
    assert names == {RESULT_FILE, "solution.csv", "density.csv", "report.csv", "fk.csv", "checks.csv", "manifest.json"}
    assert len(data_lines(tmp_path / "report.csv")) == 1 + 3
    nodes = trivial_ladder.spatial_grid().size
    assert len(data_lines(tmp_path / "solution.csv")) == 1 + len(trivial_ladder.times) * nodes
    with open(tmp_path / "manifest.json") as f:
        assert json.load(f)["checks"] == trivial_ladder.checks


def test_empty_tables_keep_their_header(tmp_path, trivial_solve):
    emit(trivial_solve, str(tmp_path), "csv")
    assert data_lines(tmp_path / "report.csv")[0].startswith("penalty,steps,")
    assert len(data_lines(tmp_path / "report.csv")) == 1
    assert len(data_lines(tmp_path / "fk.csv")) == 1


def test_csv_checks_table_parses_with_the_csv_module(tmp_path, trivial_solve):
    emit(trivial_solve, str(tmp_path), "csv")
    header, *rows = csv.reader(data_lines(tmp_path / "checks.csv"))
    assert header == ["name", "passed", "value", "limit"]
    assert [r[0] for r in rows] == list(trivial_solve.checks)
    for name, passed, value, _ in rows:
        assert passed == ("true" if trivial_solve.checks[name]["passed"] else "false")
        assert float(value) == trivial_solve.checks[name]["value"]


def test_unreadable_results_raise_parse_errors(tmp_path, trivial_solve):
    with pytest.raises(ParseError):
        read_result(str(tmp_path / "missing"))
    (tmp_path / RESULT_FILE).write_text("{\"scenario\": ")
    with pytest.raises(ParseError):
        read_result(str(tmp_path))
    (tmp_path / RESULT_FILE).write_text("{}")
    with pytest.raises(ParseError):
        read_result(str(tmp_path))


def test_unwritable_output(tmp_path, trivial_solve):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(EmitError):
        emit(trivial_solve, str(blocker))
    with pytest.raises(ValueError):
        emit(trivial_solve, str(tmp_path), "xml")


# command line

def test_cli_exit_codes(tmp_path):
    out = str(tmp_path / "run")
    assert main(["solve", "--config", "builtin:trivial_ball", "--out", out, "--format", "csv"]) == 0
    assert os.path.exists(os.path.join(out, "checks.csv"))
    assert main(["solve", "--config", str(tmp_path / "missing.ini"), "--out", out]) == 2
    assert main([]) == 2
    assert main(["serve", "--out", str(tmp_path / "empty")]) == 2


def test_cli_reports_an_oracle_mismatch(tmp_path):
    path = tmp_path / "scenario.ini"
    path.write_text("[scenario]\npreset = heat_manufactured\n\n[verify]\noracle = psor\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "run")]) == 2
