from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from se3consensus.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_OK, PRESETS, main

GOOD = """\
n: 4
law: first_rel
horizon: 2.0
seed: 5
topology:
  kind: random_qsc
init:
  rotation_radius: 1.0
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "trial.yaml"
    path.write_text(GOOD)
    return path


def test_run_writes_trace_and_report(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == EXIT_OK
    for name in ("run_trace.csv", "run_events.csv", "run_figure.csv", "run_report.json"):
        assert (out / name).exists()
    report = json.loads((out / "run_report.json").read_text())
    assert report["diverged"] is False
    rows = list(csv.reader((out / "run_trace.csv").open()))
    assert len(rows) == 1 + 21 * 4
    assert json.loads(capsys.readouterr().out) == report


def test_run_is_byte_identical(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(config), "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", str(config), "--out", str(b)]) == EXIT_OK
    for name in ("run_trace.csv", "run_events.csv", "run_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_override_changes_output(config, tmp_path):
    main(["run", "--config", str(config), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a" / "run_trace.csv").read_bytes() != (tmp_path / "b" / "run_trace.csv").read_bytes()


@pytest.mark.parametrize(
    "text, key",
    [
        (GOOD.replace("horizon: 2.0", "horizon: soon"), "horizon"),
        (GOOD.replace("law: first_rel", "law: teleport"), "law"),
        (GOOD + "colour: blue\n", "colour"),
        (GOOD.replace("kind: random_qsc", "kind: ring"), "topology.kind"),
    ],
)
def test_malformed_config_names_key(tmp_path, capsys, text, key):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_out_of_domain_initial_ball_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "wide.yaml"
    path.write_text("n: 4\nlaw: rot_rel\nparameterization: sin_map\ninit:\n  rotation_radius: 3.0\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "injectivity" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == EXIT_IO


def test_unwritable_output(config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(config), "--out", str(blocker / "sub")]) == EXIT_IO


def test_unknown_preset(tmp_path, capsys):
    assert main(["preset", "--preset", "fig9", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "fig9" in capsys.readouterr().err


def test_fig3_preset(tmp_path):
    assert main(["preset", "--preset", "fig3-rot-laws", "--out", str(tmp_path)]) == EXIT_OK
    header = (tmp_path / "fig3_rotation_errors.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t"
    assert [h for h in header if h.startswith("rot_abs_rot_frob_")] == [f"rot_abs_rot_frob_{i}" for i in range(5)]
    assert [h for h in header if h.startswith("rot_rel_rot_frob_")] == [f"rot_rel_rot_frob_{i}" for i in range(5)]
    report = json.loads((tmp_path / "fig3-rot-laws_report.json").read_text())
    assert report["rot_rel"]["rotation_error"] < 1e-3


def test_counterexample_preset(tmp_path):
    assert main(["preset", "--preset", "counterexample-trans", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "counterexample-trans_report.json").read_text())
    assert report["diverged"] and report["monotone_growth"]


def test_fig1_preset_reaches_formation(tmp_path):
    assert main(["preset", "--preset", "fig1-first-laws", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "fig1-first-laws_report.json").read_text())
    for law in ("first_abs", "first_rel"):
        assert report[law]["formation_error"] < 1e-6
    assert (tmp_path / "fig1_first_abs_tilde_figure.csv").exists()


def test_monte_carlo_preset_small(tmp_path):
    assert main(["preset", "--preset", "mc-halfpi-ball", "--trials", "5", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "mc-halfpi-ball_report.json").read_text())
    assert report["first_rel"]["trials"] == 5
    lines = (tmp_path / "mc_halfpi_first_abs.csv").read_text().splitlines()
    assert lines[0].startswith("trial,seed,status") and len(lines) == 6


def test_presets_listed_in_help(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    for name in PRESETS:
        assert name in text


def test_check_suites(capsys):
    assert main(["check", "roundtrips", "--quick"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_check_lemma1_out_of_contract(capsys):
    assert main(["check", "lemma1", "--quick", "--q-factor", "0.95"]) == EXIT_CHECK
    out = json.loads(capsys.readouterr().out)
    assert any(r["value"] > 0 for r in out["suites"]["lemma1"]["results"])


def test_module_entry_point(config, tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "se3consensus", "run", "--config", str(config), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert res.returncode == 0 and (tmp_path / "o" / "run_trace.csv").exists()
