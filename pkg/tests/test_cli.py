import json

import numpy as np
import pytest

from cfpi import cli
from cfpi.io import read_csv

FAST = {"bc": {"steps": 200}, "critic": {"steps": 200}}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--env", "chain-v0", "--episodes", 20, "--out", root / "data", "--seed", 1) == 0
    (root / "fast.json").write_text(json.dumps(FAST))
    return root


def files(d):
    return {p.name: p.read_bytes() for p in d.iterdir() if p.is_file()}


def test_gen_data_outputs(chain):
    res = json.loads((chain / "data" / "result.json").read_text())
    assert res["transitions"] == 20 * 20
    assert (chain / "data" / "data.cfpi").exists()


def test_improve_is_byte_deterministic(chain):
    outs = []
    for k in range(2):
        out = chain / f"imp{k}"
        assert run("improve", "--data", chain / "data" / "data.cfpi", "--operator", "mg", "--config", chain / "fast.json", "--out", out) == 0
        outs.append(files(out))
    assert outs[0] == outs[1]
    manifest = json.loads((chain / "imp0" / "critic" / "manifest.json").read_text())
    assert manifest["gamma"] == 0.5 and manifest["steps"] == 200 and len(manifest["dataset_hash"]) == 16


def test_sg_at_zero_tau_matches_behavior_mean(chain):
    data = chain / "data" / "data.cfpi"
    one = chain / "one.json"
    one.write_text(json.dumps({**FAST, "n_components": 1}))
    run("improve", "--data", data, "--operator", "sg", "--log-tau", 0, "--config", chain / "fast.json", "--out", chain / "sg0")
    run("improve", "--data", data, "--operator", "bc", "--config", one, "--out", chain / "mean")
    scores = []
    for name in ("sg0", "mean"):
        assert run("eval", "--policy", chain / name / "policy.json", "--episodes", 50, "--out", chain / f"ev_{name}") == 0
        scores.append(json.loads((chain / f"ev_{name}" / "result.json").read_text()))
    a, b = scores
    assert abs(a["raw_return"] - b["raw_return"]) <= 3 * np.hypot(a["return_stderr"], b["return_stderr"])


def test_report_zero_variance(tmp_path):
    (tmp_path / "m.csv").write_text("task,seed,score\n" + "".join(f"t{t},{s},55.0\n" for t in range(2) for s in range(4)))
    assert run("report", "--matrix", tmp_path / "m.csv", "--bootstrap", 200, "--out", tmp_path / "r") == 0
    rows = read_csv(tmp_path / "r" / "aggregates.csv")
    assert [r["statistic"] for r in rows] == ["median", "iqm", "mean", "optimality_gap"]
    for r in rows:
        assert r["ci_low"] == r["ci_high"] == r["point"]
    assert list(read_csv(tmp_path / "r" / "profile.csv")[0]) == ["eta", "fraction", "band_low", "band_high"]


def test_report_ragged_matrix_is_data_error(tmp_path):
    (tmp_path / "m.csv").write_text("task,seed,score\na,0,1\na,1,2\nb,0,3\n")
    assert run("report", "--matrix", tmp_path / "m.csv", "--out", tmp_path / "r") == 2


def test_eval_reference_policies(tmp_path):
    for pol, target in (("expert", 100.0), ("random", 0.0)):
        assert run("eval", "--policy", pol, "--env", "quad-bandit-v0", "--episodes", 4000, "--out", tmp_path / pol) == 0
        res = json.loads((tmp_path / pol / "result.json").read_text())
        assert abs(res["normalized_score"] - target) < 5.0


@pytest.mark.parametrize(
    "argv, code",
    [
        (["frobnicate"], 1),
        (["gen-data", "--env", "chain-v0"], 1),
        (["gen-data", "--env", "chain-v0", "--episodes", "0", "--out", "{tmp}/x"], 1),
        (["improve", "--data", "{tmp}/missing.cfpi", "--out", "{tmp}/x"], 2),
        (["eval", "--policy", "expert", "--out", "{tmp}/x"], 1),
        (["report", "--out", "{tmp}/x"], 1),
        (["--help"], 0),
    ],
)
def test_exit_codes(tmp_path, argv, code, capsys):
    assert cli.main([a.format(tmp=tmp_path) for a in argv]) == code


def test_bad_config_key_is_usage_error(chain):
    (chain / "bad.json").write_text('{"nope": 1}')
    assert run("sarsa", "--data", chain / "data" / "data.cfpi", "--config", chain / "bad.json", "--out", chain / "x") == 1


def test_corrupt_dataset_is_data_error(tmp_path):
    (tmp_path / "d.cfpi").write_bytes(b"CFPI1\x00\x00")
    assert run("bc", "--data", tmp_path / "d.cfpi", "--out", tmp_path / "x") == 2


def test_oracle_check(tmp_path, capsys):
    assert run("oracle-check", "--instances", 30, "--out", tmp_path) == 0
    assert "qclp-lse" in capsys.readouterr().out
