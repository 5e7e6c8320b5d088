import csv
import json

import pytest

from pricinglab.cli import EXIT_ERROR, EXIT_FAIL, main

SMALL = {
    "stackelberg-sweep": ["--ks", "3", "5", "8"],
    "stackelberg-strategy": ["--k", "20"],
    "uniform-bound": ["--k", "10", "-T", "2000"],
    "equal-looting": ["--k", "10", "-T", "2000", "--optimizer", "uniform"],
    "convergence": ["--k", "6", "-T", "3000", "--points", "50"],
    "threat": ["--k", "20", "-T", "988", "--deviate-at", "1", "100"],
    "nash": ["--k", "10", "--rounds-list", "2000", "4000"],
}


def run_cli(argv, capsys=None):
    code = main(argv)
    out = capsys.readouterr().out if capsys else ""
    return code, out


@pytest.mark.parametrize("command", sorted(SMALL))
def test_subcommand_writes_manifest_and_exit_code_tracks_checks(command, tmp_path, capsys):
    out = tmp_path / command
    code, text = run_cli([command, *SMALL[command], "--out", str(out)], capsys)
    report = json.loads((out / "report.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert code == (0 if report["passed"] else EXIT_FAIL)
    assert manifest["command"] == command and manifest["passed"] == report["passed"]
    assert set(manifest) >= {"config", "seeds", "output_paths", "outputs", "duration_seconds"}
    for c in report["checks"]:
        assert {"claim", "bound", "measured", "slack", "slack_source", "verdict"} <= set(c)
        assert f"[{c['verdict']}] {c['claim']}" in text
    # rerunning from the manifest reproduces every output byte for byte
    assert main(["rerun", str(out / "manifest.json")]) == 0
    rerun = json.loads((out / "rerun" / "manifest.json").read_text())
    assert rerun["outputs"] == manifest["outputs"]


def test_threat_small_run_passes(tmp_path):
    # T = 988 (a multiple of 19) makes the cutoff expression an integer, so the closed-form follower total is exact
    assert main(["threat", *SMALL["threat"], "--out", str(tmp_path)]) == 0


def test_sweep_csv_schema(tmp_path):
    assert main(["stackelberg-sweep", "--ks", "3", "4", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert rows[0] == ["k", "leader_value", "follower_value", "buyer_price", "k_minus_1_over_ek",
                       "leader_rel_dev", "follower_rel_dev", "follower_price", "certified"]
    assert [r[0] for r in rows[1:]] == ["3", "4"]
    assert all("," not in v for r in rows for v in r)


def test_json_table_format(tmp_path):
    main(["stackelberg-strategy", "--k", "10", "--format", "json", "--out", str(tmp_path)])
    table = json.loads((tmp_path / "leader_dist.table.json").read_text())
    assert len(table) == 10 and set(table[0]) == {"price", "leader_probability", "follower_payoff", "in_tie_band"}
    assert abs(sum(r["leader_probability"] for r in table) - 1) <= 1e-9
    assert not (tmp_path / "leader_dist.csv").exists()


def test_config_file_defaults_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 8, "rounds": 300, "seed": 7}))
    out = tmp_path / "o"
    main(["uniform-bound", "--config", str(cfg), "--k", "6", "--out", str(out)])
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["k"] == 6 and report["config"]["T"] == 300
    assert json.loads((out / "manifest.json").read_text())["config"]["seed"] == 7


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kk": 3}))
    with pytest.raises(SystemExit) as e:
        main(["uniform-bound", "--config", str(cfg)])
    assert e.value.code == 2


def test_size_gates(capsys):
    assert main(["uniform-bound", "--k", "20", "-T", "2000000"]) == EXIT_ERROR
    assert main(["stackelberg-sweep", "--ks", "250"]) == EXIT_ERROR
    assert "--allow-large" in capsys.readouterr().err


def test_audit_of_saved_transcript(tmp_path, capsys):
    out = tmp_path / "run"
    main(["convergence", "--k", "5", "-T", "800", "--alg-b", "bm", "--out", str(out)])
    code, text = run_cli(["audit", str(out / "transcript.jsonl"), "--out", str(tmp_path / "a")], capsys)
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert code == 0 and rep["results"]["T"] == 800 and rep["results"]["ok"]
    assert "(hedge): external regret" in text and "(no-swap-regret): swap regret" in text
    assert main(["rerun", str(tmp_path / "a" / "manifest.json")]) == 0


def test_audit_of_malformed_file_reports_byte_offset(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format_version": 1, "k": 2, "T": 1, "model": "bertrand"}\n{"t": 1, "u1": 0.5,\n')
    assert main(["audit", str(bad)]) == EXIT_ERROR
    assert "byte offset" in capsys.readouterr().err


def test_rerun_detects_changed_outputs(tmp_path):
    out = tmp_path / "r"
    main(["stackelberg-strategy", "--k", "6", "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    name = sorted(man["outputs"])[0]
    man["outputs"][name] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(man))
    assert main(["rerun", str(out / "manifest.json")]) == EXIT_FAIL
