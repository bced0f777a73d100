import json

import pytest
import yaml

from jumphedge.cli import main
from jumphedge.config import PRESETS, ConfigError, build_experiment, preset, validate_config


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_builds(name):
    exp = build_experiment(preset(name))
    assert exp.seed == 20240601
    assert exp.kind == PRESETS[name]["experiment"]


def test_every_criterion_has_a_preset():
    for i in range(1, 15):
        assert PRESETS[f"acceptance-{i:02d}"]["only"] == [i]


def test_schema_errors_point_into_document():
    doc = preset("bs-overestimate")
    doc["model"]["gamma"] = "high"
    doc["n_paths"] = 1
    with pytest.raises(ConfigError) as exc:
        validate_config(doc)
    msg = str(exc.value)
    assert "/model/gamma" in msg and "/n_paths" in msg


def test_seed_is_mandatory():
    doc = preset("bs-overestimate")
    del doc["seed"]
    with pytest.raises(ConfigError):
        build_experiment(doc)


def test_seed_override_and_solved_measures():
    exp = build_experiment(preset("jump-overestimate"), seed_override=7)
    assert exp.seed == 7
    psi = [m.constants[0] for m in exp.measures]
    theta = [m.constants[1] for m in exp.measures]
    assert psi == pytest.approx([0.0, -0.2, -0.4], abs=1e-15)
    assert theta == [(0.0,), (0.2,), (0.4,)]


def test_poisson_requires_zero_rate():
    doc = preset("poisson-superhedge")
    doc["rate"] = 0.01
    with pytest.raises(ConfigError):
        build_experiment(doc)


# ---------------------------------------------------------------- CLI


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_cli_validate_example_fails_floor(tmp_path):
    out = tmp_path / "out"
    assert main(["validate", "--preset", "example-counterexample", "--out", str(out)]) == 2
    rep = json.loads((out / "report.json").read_text())
    floor = [v for v in rep["verdicts"] if v["name"] == "rho_tilde_prime_floor"][0]
    assert not floor["passed"] and floor["worst"] == pytest.approx(-2.0)
    assert (out / "checks.csv").exists()


def test_cli_price_linear_payoff(tmp_path):
    out = tmp_path / "out"
    assert main(["price", "--preset", "linear-payoff", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["price"] == pytest.approx(100.0, rel=1e-12)
    assert rep["delta_deviation_from_slope"] <= 1e-6
    assert (out / "surface.csv").exists() and (out / "plots" / "surface_slices.svg").exists()


def test_cli_hedge_bs_overestimate(tmp_path):
    out = tmp_path / "out"
    assert main(["hedge", "--preset", "bs-overestimate", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert abs(rep["mean_terminal_error"] - 3.9691) <= 3 * rep["terminal_error_stderr"]
    assert rep["passed"] and rep["schema_version"] == "1"
    assert (out / "checkpoints.csv").exists() and (out / "plots" / "band_P.svg").exists()


def test_cli_poisson_report_fields(tmp_path):
    out = tmp_path / "out"
    assert main(["poisson", "--preset", "poisson-superhedge", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert {"model", "grid", "min_gap", "mean_gap", "violation_count", "tol_sh"} <= set(rep)
    assert (out / "plots" / "gap_histogram.svg").exists()


def test_cli_robust_plots(tmp_path):
    out = tmp_path / "out"
    assert main(["robust", "--preset", "robust-good-deal", "--out", str(out)]) == 0
    names = {p.name for p in (out / "plots").iterdir()}
    assert {"candidate_prices.svg", "argmax_slice.svg", "surface_slices.svg"} <= names
    assert sum(n.startswith("band_") for n in names) == 5


def test_cli_report_is_byte_identical_across_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["hedge", "--preset", "jump-overestimate", "--out", str(a), "--threads", "1"]) == 0
    assert main(["hedge", "--preset", "jump-overestimate", "--out", str(b), "--threads", "8"]) == 0
    for f in ("report.json", "checkpoints.csv", "plots/band_P.svg", "plots/surface_slices.svg"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_cli_config_file_and_usage_errors(tmp_path, capsys):
    doc = preset("linear-payoff")
    doc["grids"]["n_x"] = 100
    doc["grids"]["pide_time_steps"] = 50
    doc["n_paths"] = 2000
    cfg = _write(tmp_path, doc)
    assert main(["price", "--config", cfg, "--out", str(tmp_path / "ok"), "--no-plots"]) == 0
    assert main(["hedge", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
    doc["payoff"] = {"kind": "call"}
    bad = _write(tmp_path, {**doc, "seed": -1}, "bad.yaml")
    assert main(["price", "--config", bad, "--out", str(tmp_path / "y")]) == 1
    assert "/seed" in capsys.readouterr().err
    assert main(["price", "--out", str(tmp_path / "z")]) == 1
    assert main(["price", "--preset", "linear-payoff", "--out", str(tmp_path / "z"), "--threads", "0"]) == 1
    assert main(["frobnicate"]) == 1


def test_cli_numerical_failure_on_escaping_paths(tmp_path):
    doc = preset("bs-overestimate")
    doc["grids"].update({"x_min": 80.0, "x_max": 125.0, "n_x": 100})
    doc["n_paths"] = 2000
    cfg = _write(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["hedge", "--config", cfg, "--out", str(out)]) == 3
    assert "numerical_failure" in json.loads((out / "report.json").read_text())


def test_cli_plots_subcommand(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["poisson", "--preset", "poisson-superhedge", "--out", str(out), "--no-plots"]) == 0
    assert not (out / "plots").exists()
    assert main(["plots", str(out / "report.json")]) == 0
    assert (out / "plots" / "gap_histogram.svg").exists()
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"kind": "poisson"}))
    assert main(["plots", str(broken)]) == 1


def test_cli_schema_and_presets(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "experiment" in schema["properties"]
    assert main(["presets"]) == 0
    assert "acceptance-suite" in capsys.readouterr().out


def test_cli_acceptance_subset(tmp_path):
    out = tmp_path / "out"
    assert main(["acceptance-suite", "--preset", "acceptance-suite", "--only", "1,4",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert [c["id"] for c in rep["criteria"]] == [1, 4]
    assert main(["acceptance-suite", "--preset", "acceptance-07", "--out", str(tmp_path / "c7")]) == 2
