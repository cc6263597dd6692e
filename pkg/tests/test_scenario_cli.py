import csv
import io
import json

import pytest

from dpp_sim.cli import main
from dpp_sim.exceptions import ScenarioError
from dpp_sim.model import Role
from dpp_sim.scenario import bundled_scenarios, load_scenario, parse_scenario, scenario_to_dict

FIGURES = [f"fig8{c}" for c in "abcdefgh"]

MINIMAL = {
    "dimensionality": 2,
    "nodes": [
        {"id": 0, "role": "passive", "position": [1, 2]},
        {"id": 1, "role": "bilateral", "position": [0.0, 0.0], "clock": {"offset_s": 1.5, "drift_ppm": 3}},
    ],
}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- scenario files ---------------------------------------------------------------


def test_bundled_scenarios_cover_every_subfigure():
    assert sorted(bundled_scenarios()) == FIGURES
    for name in FIGURES:
        sc = load_scenario(name)
        assert sc.name == name
        assert sc.system.signal_speed == pytest.approx(299_792_458.0)


def test_parse_minimal_accepts_integers_and_converts_ppm():
    sc = parse_scenario(json.dumps(MINIMAL), "mini.json")
    assert sc.system.node(1).clock.drift == pytest.approx(3e-6)
    assert sc.system.node(1).clock.offset == 1.5
    assert sc.system.role(0) is Role.PASSIVE
    assert sc.system.position(0).tolist() == [1.0, 2.0]
    assert sc.config.inter_pulse_gap == 200e-6 and sc.config.turn_gap == 1e-3


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d["nodes"][0].update(colour="red"), "nodes[0].colour"),
        (lambda d: d["nodes"][1].update(role="mirror"), "nodes[1].role"),
        (lambda d: d["nodes"][0].update(position=[1, 2, 3]), "position"),
        (lambda d: d["nodes"][1]["clock"].update(drift_ppm="fast"), "nodes[1].clock.drift_ppm"),
        (lambda d: d["nodes"][1]["clock"].update(drift_ppm=25), "drift"),
        (lambda d: d.update(protocol={"turn_gap_s": 0}), "protocol.turn_gap_s"),
        (lambda d: d.update(protocol={"p": 3}), "protocol.p"),
        (lambda d: d["nodes"][1].update(id=0), "duplicate"),
        (lambda d: d.update(dimensionality=4), "dimensionality"),
    ],
)
def test_parse_reports_field_paths(mutate, fragment):
    raw = json.loads(json.dumps(MINIMAL))
    mutate(raw)
    with pytest.raises(ScenarioError) as info:
        parse_scenario(json.dumps(raw), "bad.json")
    assert "bad.json" in str(info.value)
    assert fragment in str(info.value)


def test_parse_reports_line_and_column():
    with pytest.raises(ScenarioError) as info:
        parse_scenario('{\n  "dimensionality": 2,\n  "nodes": [,]\n}', "broken.json")
    assert str(info.value).startswith("broken.json:3:")


def test_empty_file_is_a_parse_error(tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text("")
    with pytest.raises(ScenarioError):
        load_scenario(path)
    code, _, err = run(capsys, "measure", "--scenario", str(path))
    assert code == 2
    assert "empty.json:1:1" in err


def test_seed_environment_override():
    sc = parse_scenario(json.dumps(MINIMAL), env={"DPP_SIM_SEED": "42"})
    assert sc.config.rng_seed == 42
    with pytest.raises(ScenarioError):
        parse_scenario(json.dumps(MINIMAL), env={"DPP_SIM_SEED": "-1"})
    with pytest.raises(ScenarioError):
        parse_scenario(json.dumps(MINIMAL), env={"DPP_SIM_SEED": "abc"})


def test_round_trip_through_dict():
    sc = load_scenario("fig8g")
    again = parse_scenario(json.dumps(scenario_to_dict(sc.system, sc.config, sc.p, sc.q)), "again.json")
    assert again.system == sc.system
    assert again.config == sc.config


# -- subcommands --------------------------------------------------------------------


@pytest.mark.parametrize("name", FIGURES)
def test_bundled_fixture_passes_strict_measure(capsys, name):
    code, out, _ = run(capsys, "measure", "--scenario", name, "--strict")
    assert code == 0
    assert out.startswith("cycle,kind,x,y,z,p_or_q,value_s,value_m")


def test_strict_measure_with_single_worst_case_clock(tmp_path, capsys):
    raw = json.loads(bundled_scenarios()["fig8e"].read_text())
    for node in raw["nodes"]:
        node["clock"]["drift_ppm"] = 0.0
    raw["nodes"][1]["clock"]["drift_ppm"] = 20.0
    path = tmp_path / "one_fast_clock.json"
    path.write_text(json.dumps(raw))
    assert run(capsys, "measure", "--scenario", str(path), "--strict")[0] == 0


def test_drift_above_configured_maximum_is_rejected(capsys):
    code, _, err = run(capsys, "measure", "--scenario", "fig8e", "--max-drift-ppm", "10")
    assert code == 2
    assert "exceeds max" in err


def test_simulate_fig8b_has_six_transmissions(capsys):
    code, out, _ = run(capsys, "simulate", "--scenario", "fig8b")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    tx = [r for r in rows if r["kind"] == "tx"]
    assert len(tx) == 6
    assert sorted({r["node"] for r in tx}) == ["1", "2", "3"]
    assert all(r["true_ts_s"] for r in rows)


def test_simulate_without_truth(capsys):
    _, out, _ = run(capsys, "simulate", "--scenario", "fig8b", "--no-truth")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert all(r["true_ts_s"] == "" for r in rows)


def test_measure_json(capsys):
    code, out, _ = run(capsys, "measure", "--scenario", "fig8b", "--format", "json")
    assert code == 0
    payload = json.loads(out)
    labels = {e["label"] for e in payload["cycles"][0]["mu"]}
    assert {"mu_P0B0^A0", "mu_P0B1^A0", "mu_P0B0^B1", "mu_B0B1^A0"} <= labels


def test_counts_default_table(capsys):
    code, out, _ = run(capsys, "counts")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split() == ["scheme", "setup", "signals"]
    assert any(line.startswith("DJKM") and line.endswith(" 8") for line in lines)
    assert any("m=3 t=0" in line and line.endswith(" 6") for line in lines)
    assert any(line.startswith("DPW") and line.endswith(" 3") for line in lines)
    assert any("m=1 t=1" in line and line.startswith("DPP") and line.endswith(" 4") for line in lines)


def test_counts_json_and_domain_error(capsys):
    code, out, _ = run(capsys, "counts", "--djkm", "5", "--dpw", "2", "2", "--format", "json")
    assert code == 0
    rows = {r["scheme"] + " " + r["setup"]: r["signals"] for r in json.loads(out)}
    assert rows["DJKM k=5 (n1=9 n2=5)"] == 14
    assert rows["DPW m=2 t=2"] == 12
    assert run(capsys, "counts", "--djkm", "2")[0] == 2


def test_usage_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as info:
        main(["measure"])
    assert info.value.code == 2
    assert run(capsys, "measure", "--scenario", "no-such-scenario")[0] == 2


def test_bounds_writes_reports(tmp_path, capsys):
    code, _, _ = run(capsys, "bounds", "--scenario", "fig8e", "--trials", "20", "--out", str(tmp_path), "--strict")
    assert code == 0
    report = json.loads((tmp_path / "bounds.json").read_text())
    assert set(report) == {"mu", "tdoa", "toa"}
    assert all(r["passed"] and r["trials"] == 20 for r in report.values())
    for q in ("mu", "tdoa", "toa"):
        assert (tmp_path / f"errors_{q}.csv").read_text().startswith("trial,key,abs_error_s,bound_s")


def test_solve_absolute_and_relative(capsys):
    code, out, _ = run(capsys, "solve", "--scenario", "fig8e", "--strict")
    assert code == 0
    cycle = json.loads(out)["cycles"][0]
    assert cycle["frame"] == "absolute"
    assert cycle["positions"]["0"]["error_m"] < 0.01

    code, out, _ = run(capsys, "solve", "--scenario", "fig8h", "--strict")
    assert code == 0
    cycle = json.loads(out)["cycles"][0]
    assert cycle["frame"] == "relative"
    assert cycle["procrustes_rms_m"] < 0.01
    assert cycle["gauge"]["origin"] == 0


def test_solve_csv(capsys):
    code, out, _ = run(capsys, "solve", "--scenario", "fig8g", "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"toa-frame", "tdoa"}


def test_compare_reports_ratio(capsys):
    code, out, _ = run(capsys, "compare", "--scenario", "fig8a", "--reference-tof-s", "16.678e-9")
    assert code == 0
    report = json.loads(out)
    ref = report["errors"][0]
    assert ref["pair"] == "reference"
    assert ref["djkm_estimate_s"] == pytest.approx(4e-8)
    assert ref["ratio"] > 1e4
    assert report["counts"]["DJKM"] == 8 and report["counts"]["DPP"] == 6


@pytest.mark.parametrize(
    "argv",
    [
        ("simulate", "--scenario", "fig8c"),
        ("measure", "--scenario", "fig8d", "--format", "json"),
        ("bounds", "--scenario", "fig8a", "--trials", "5"),
        ("solve", "--scenario", "fig8g"),
        ("compare", "--scenario", "fig8f", "--format", "csv"),
    ],
)
def test_outputs_are_byte_identical(capsys, argv):
    _, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv)
    assert first == second
    assert first


def test_seed_flag_changes_jittered_output(tmp_path, capsys):
    raw = json.loads(bundled_scenarios()["fig8b"].read_text())
    raw["noise"]["timestamp_jitter_sd_s"] = 1e-10
    path = tmp_path / "jitter.json"
    path.write_text(json.dumps(raw))
    _, a, _ = run(capsys, "simulate", "--scenario", str(path), "--seed", "1")
    _, b, _ = run(capsys, "simulate", "--scenario", str(path), "--seed", "1")
    _, c, _ = run(capsys, "simulate", "--scenario", str(path), "--seed", "2")
    assert a == b != c


def test_out_directory(tmp_path, capsys):
    code, out, _ = run(capsys, "measure", "--scenario", "fig8a", "--out", str(tmp_path))
    assert code == 0 and out == ""
    assert (tmp_path / "measurements.csv").exists()
