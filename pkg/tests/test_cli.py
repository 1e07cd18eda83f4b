import csv
import io
import json

import pytest

from causalsim.cli import main
from causalsim.harness import COMPARE_COLUMNS


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fixture_then_check_fails(tmp_path, capsys):
    path = tmp_path / "sole_wot.jsonl"
    assert run_cli(capsys, "fixture", "sole-wot", "--out", str(path))[0] == 0
    code, out, _ = run_cli(capsys, "check", "--history", str(path))
    assert code == 1
    body = json.loads(out)
    assert body["pass"] is False
    assert body["witness"]["client_transactions"] == ["ROT", "ROT2"]


def test_simulate_writes_artifacts(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out, _ = run_cli(capsys, "simulate", "--protocol", "d1", "--seed", "3", "--ops", "10",
                           "--out", str(out_dir))
    assert code == 0
    assert json.loads(out)["summary"]["causal"] is True
    for name in ("history.jsonl", "messages.jsonl", "spec.json", "metrics.json"):
        assert (out_dir / name).exists()
    code, out, _ = run_cli(capsys, "check", "--history", str(out_dir / "history.jsonl"),
                           "--messages", str(out_dir / "messages.jsonl"), "--checker", "progress",
                           "--quiescence", str(json.loads((out_dir / "metrics.json").read_text())
                                                ["metrics"]["quiescence"]))
    assert code == 0 and json.loads(out)["pass"] is True


def test_compare_csv_and_figures(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "compare", "--protocols", "d1,slow-2round", "--seed", "0",
                           "--ops", "10", "--runs", "2", "--out", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4 and list(rows[0]) == COMPARE_COLUMNS
    for name in ("compare.csv", "compare.json", "tradeoff.png", "visibility_lag.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_compare_json_format(capsys):
    code, out, _ = run_cli(capsys, "compare", "--protocols", "d1", "--seed", "0", "--ops", "5",
                           "--format", "json")
    assert code == 0 and set(json.loads(out)) == {"rows", "summary"}


def test_adversary_e12_naive(capsys):
    code, out, _ = run_cli(capsys, "adversary", "run", "--scenario", "e12",
                           "--protocol", "naive-invisible")
    body = json.loads(out)
    assert code == 0 and body["consistent"] is False and body["fast"] is True


def test_adversary_shape_mismatch_is_usage_error(capsys):
    code, out, _ = run_cli(capsys, "--json", "adversary", "run", "--scenario", "e12",
                           "--protocol", "fast-generic")
    assert code == 2 and json.loads(out)["error"] == "ProtocolShapeMismatch"


@pytest.mark.parametrize("argv", [
    ["simulate", "--protocol", "d1"],                      # no seed
    ["simulate", "--protocol", "nope", "--seed", "1"],     # unknown protocol
    ["simulate", "--protocol", "d1", "--seed", "1", "--write-ratio", "2"],
    ["check", "--history", "x.jsonl", "--checker", "bogus"],
    [],
])
def test_usage_errors_exit_2_with_json(capsys, argv):
    code, out, _ = run_cli(capsys, "--json", *argv)
    assert code == 2
    assert json.loads(out)["exit_code"] == 2


def test_usage_error_plain_goes_to_stderr(capsys):
    code, out, err = run_cli(capsys, "simulate", "--protocol", "d1")
    assert code == 2 and out == "" and "--seed" in err


def test_config_sets_defaults_and_flags_win(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "ops": 5, "protocol": "d1"}))
    code, out, _ = run_cli(capsys, "--config", str(cfg), "simulate", "--protocol", "slow-2round",
                           "--out", str(tmp_path / "r"))
    assert code == 0
    summary = json.loads(out)["summary"]
    assert summary["seed"] == 4 and summary["protocol"] == "slow-2round"


def test_protocols_lists_names(capsys):
    code, out, _ = run_cli(capsys, "protocols")
    assert code == 0 and "async-visible" in out and "slow-2round" in out
