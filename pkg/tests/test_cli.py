"""Command-line behavior: exit codes, flag-to-scenario round trips, and
artifact layout. All invocations run in-process through main()."""

import json

import pytest

from netmorph.cli import build_parser, main

TRIANGLE = {
    "vertices": [
        {"id": 1, "pos": [0.0, 0.0]},
        {"id": 2, "pos": [1.0, 0.0]},
        {"id": 3, "pos": [0.5, 0.8660254037844386]},
    ],
    "edges": [
        {"u": 1, "v": 2, "length": 1.0},
        {"u": 2, "v": 3, "length": 1.0},
        {"u": 1, "v": 3, "length": 1.0},
    ],
    "sources": {"1": -1.0, "2": 2.0, "3": -1.0},
}

PAIR = json.dumps(
    {"type": "pair", "source": [0.3, 0.5], "sink": [0.7, 0.5], "radius": 0.1}
)


def test_help_screens_exist():
    parser = build_parser()
    for cmd in (
        "simulate-discrete",
        "minimize-flux",
        "simulate-meso",
        "simulate-particles",
        "mms",
        "beckmann-check",
        "reproduce-all",
    ):
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([cmd, "--help"])
        assert exc.value.code == 0


def test_minimize_flux_bundled_scenario(tmp_path, capsys):
    code = main(["minimize-flux", "--scenario", "example1",
                 "--out", str(tmp_path / "run"), "--no-figures"])
    assert code == 0
    out = capsys.readouterr().out
    assert (tmp_path / "run" / "result.json").is_file()
    result = json.loads((tmp_path / "run" / "result.json").read_text())
    assert result["F"] == pytest.approx(6.0, abs=1e-10)
    assert '"F"' in out  # the result document is echoed


def test_flags_round_trip_through_scenario_json(tmp_path):
    net_file = tmp_path / "tri.json"
    net_file.write_text(json.dumps(TRIANGLE))
    d1 = tmp_path / "first"
    d2 = tmp_path / "second"
    code = main(["minimize-flux", "--net", str(net_file), "--gamma", "2.0",
                 "--mode", "quadratic", "--out", str(d1), "--no-figures"])
    assert code == 0
    # the effective document written next to the results reproduces the run
    code = main(["minimize-flux", "--scenario", str(d1 / "scenario.json"),
                 "--out", str(d2), "--no-figures"])
    assert code == 0
    for name in ("result.json", "edges.csv", "summary.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_discrete_flags_reach_params(tmp_path):
    net_file = tmp_path / "tri.json"
    net_file.write_text(json.dumps(TRIANGLE))
    out = tmp_path / "run"
    code = main(["simulate-discrete", "--net", str(net_file), "--gamma", "0.5",
                 "--dt", "0.01", "--t-end", "2.0", "--init-c", "1.5",
                 "--seed", "9", "--out", str(out), "--no-figures"])
    assert code == 0
    doc = json.loads((out / "scenario.json").read_text())
    assert doc["params"]["gamma"] == 0.5
    assert doc["params"]["C0"] == 1.5
    assert doc["seed"] == 9


def test_meso_stationary_subcommand(tmp_path):
    code = main(["simulate-meso", "--stationary", "--nx", "12", "--ny", "12",
                 "--n-dirs", "4", "--source", PAIR, "--gamma", "2.0",
                 "--tol", "1e-6", "--out", str(tmp_path / "st"), "--no-figures"])
    assert code == 0
    assert (tmp_path / "st" / "p.csv").is_file()


def test_mms_subcommand_one_dimensional(tmp_path):
    code = main(["mms", "--cells", "24",
                 "--source", '{"type": "endpoints"}',
                 "--steps", "5", "--gamma", "1.0", "--tau", "0.5",
                 "--out", str(tmp_path / "chain"), "--no-figures"])
    assert code == 0
    summary = json.loads((tmp_path / "chain" / "summary.json").read_text())
    assert summary["qbar_interior_min"] == pytest.approx(1.0, abs=0.05)


def test_unknown_scenario_is_config_error(tmp_path, capsys):
    code = main(["minimize-flux", "--scenario", "never_heard_of_it",
                 "--out", str(tmp_path), "--no-figures"])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_kind_mismatch_is_config_error(tmp_path, capsys):
    code = main(["simulate-discrete", "--scenario", "example1",
                 "--out", str(tmp_path), "--no-figures"])
    assert code == 2


def test_bad_inline_source_is_config_error(tmp_path, capsys):
    code = main(["mms", "--cells", "16", "--source", "{oops",
                 "--out", str(tmp_path), "--no-figures"])
    assert code == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    seg = json.dumps({"a": [0.2, 0.5], "b": [0.8, 0.5], "n": 10})
    code = main(["simulate-particles", "--nx", "12", "--ny", "12",
                 "--source", PAIR, "--segment", seg, "--gamma", "1.0",
                 "--r", "0.0", "--t-end", "1.0",
                 "--out", str(tmp_path), "--no-figures"])
    assert code == 1
    assert "numerical failure" in capsys.readouterr().err
