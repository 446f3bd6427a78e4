import json

import pytest
from click.testing import CliRunner

from qpirlab.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_correctness_kerenidis_n4(runner, tmp_path):
    out = tmp_path / "report"
    res = runner.invoke(main, ["correctness", "--protocol", "kerenidis", "--n", "4",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = json.loads((tmp_path / "report.json").read_text())
    assert len(rows) == 64  # 16 databases x 4 indices
    assert all(r["ok"] and r["probability"] >= 1 - 1e-9 for r in rows)
    assert (tmp_path / "report.csv").exists()
    assert all("tolerance" in r for r in rows)


def test_bounds_nayak(runner):
    res = runner.invoke(main, ["bounds", "nayak", "--delta", "0", "--eps", "0",
                               "--n", "16"])
    assert res.exit_code == 0
    rows = json.loads(res.output[: res.output.rfind("]") + 1])
    assert rows[0]["value"] == 16.0


def test_privacy_honest_passes(runner):
    res = runner.invoke(main, ["privacy", "--protocol", "kerenidis", "--n", "2"])
    assert res.exit_code == 0, res.output


def test_privacy_purify_db_fails(runner):
    res = runner.invoke(main, ["privacy", "--protocol", "kerenidis", "--n", "2",
                               "--adversary", "purify-db", "--mode", "full"])
    assert res.exit_code == 1
    rows = json.loads(res.output[: res.output.rfind("]") + 1])
    verdict = [r for r in rows if r.get("ok") is False]
    assert verdict and verdict[0]["eps_lower"] > 0


def test_attack_purify(runner):
    res = runner.invoke(main, ["attack", "purify", "--n", "2"])
    assert res.exit_code == 0, res.output


def test_attack_reconstruct_csv(runner):
    res = runner.invoke(main, ["attack", "reconstruct", "--protocol", "kerenidis",
                               "--n", "2", "--mode", "coherent-reference",
                               "--format", "csv"])
    assert res.exit_code == 0, res.output
    assert "probability" in res.output


def test_bounds_theorem32(runner):
    res = runner.invoke(main, ["bounds", "theorem32", "--n", "2",
                               "--thetas", "0.1,0.4"])
    assert res.exit_code == 0, res.output


def test_bounds_chain_rule(runner):
    res = runner.invoke(main, ["bounds", "chain-rule", "--protocol", "send-db",
                               "--n", "2", "--mode", "classical-per-a",
                               "--database", "10"])
    assert res.exit_code == 0, res.output


def test_unknown_protocol(runner):
    res = runner.invoke(main, ["correctness", "--protocol", "teleport", "--n", "2"])
    assert res.exit_code != 0


def test_spec_dump_matches_golden(runner):
    from pathlib import Path

    res = runner.invoke(main, ["spec", "--protocol", "kerenidis", "--n", "1"])
    assert res.exit_code == 0
    golden = Path(__file__).parent / "golden" / "kerenidis_n1.json"
    assert res.output.strip() == golden.read_text().strip()


def test_seed_fixes_randomized_fixtures(runner):
    a = runner.invoke(main, ["correctness", "--protocol", "kerenidis", "--n", "8",
                             "--databases", "3", "--seed", "11"])
    b = runner.invoke(main, ["correctness", "--protocol", "kerenidis", "--n", "8",
                             "--databases", "3", "--seed", "11"])
    assert a.exit_code == b.exit_code == 0
    assert a.output == b.output


def test_suite_small(runner, tmp_path):
    res = runner.invoke(main, ["suite", "all", "--sizes", "1,2",
                               "--out", str(tmp_path / "suite")])
    assert res.exit_code == 0, res.output
    rows = json.loads((tmp_path / "suite.json").read_text())
    assert all(r["ok"] for r in rows)
    checks = {r["check"] for r in rows}
    assert {"correctness", "communication", "purification-attack", "theorem32",
            "counterexample-specious", "chain-rule", "nayak"} <= checks
