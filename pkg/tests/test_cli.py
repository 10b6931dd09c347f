from __future__ import annotations

import csv
import json

import pytest

from lrep import NumericalFailure, cli


def _main(tmp_path, *argv):
    return cli.main(list(argv) + ["--out", str(tmp_path / "out")])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_exact_shell_gives_uniform_stationary(tmp_path, capsys):
    code = _main(tmp_path, "exact", "--space", '{"kind": "torus", "dims": [3]}',
                 "--kernel", '{"offsets": [[1, 1.0]]}', "--config", _write(tmp_path, {"shell": 2}))
    assert code == 0
    rows = _rows(tmp_path / "out" / "stationary.csv")
    assert rows[0] == ["state", "class", "probability"]
    probs = [float(r[2]) for r in rows[1:]]
    assert len(probs) == 3
    assert probs == pytest.approx([1 / 3] * 3, abs=1e-12)
    for name in ("generator.txt", "invariance.json", "config.json", "manifest.json"):
        assert (tmp_path / "out" / name).exists()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert {"seed", "git-describe", "versions", "inputs_sha256", "started", "finished"} <= set(manifest)


def _write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def test_bad_row_sum_exits_two_with_row_index(tmp_path, capsys):
    code = _main(tmp_path, "exact", "--space", '{"kind": "abstract", "dims": [3]}',
                 "--kernel", '{"matrix": [[0, 1, 0], [0.5, 0, 0.4], [0.5, 0.5, 0]]}')
    assert code == 2
    assert "row 1" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_config_key_exits_two(tmp_path, capsys):
    code = cli.main(["experiment", "--config", _write(tmp_path, {"mode": "rates", "colour": 1})])
    assert code == 2
    assert "colour" in capsys.readouterr().err


def test_mode_mismatch_and_bad_json(tmp_path):
    assert cli.main(["rates", "--config", _write(tmp_path, {"mode": "exact"})]) == 2
    assert _main(tmp_path, "rates", "--kernel", "{nn: 1}") == 2
    assert cli.main(["rates", "--config", str(tmp_path / "missing.json")]) == 2


def test_numerical_failure_exits_three(tmp_path, monkeypatch, capsys):
    def boom(cfg, jobs=1):
        raise NumericalFailure("residual too large")
    monkeypatch.setattr(cli, "run", boom)
    assert _main(tmp_path, "rates", "--init", '{"bitstring": "11000"}') == 3
    assert "numerical" in capsys.readouterr().err


def test_rates_outputs(tmp_path):
    code = _main(tmp_path, "rates", "--space", '{"kind": "torus", "dims": [5]}',
                 "--kernel", '{"nn": 0.7}', "--init", '{"bitstring": "11000"}')
    assert code == 0
    rows = _rows(tmp_path / "out" / "rates.csv")
    assert len(rows) > 1
    json.loads((tmp_path / "out" / "rates.json").read_text())


def test_simulate_is_byte_identical_on_rerun(tmp_path):
    args = ["simulate", "--space", '{"kind": "torus", "dims": [8]}', "--kernel", '{"nn": 0.7}',
            "--init", '{"bernoulli": 0.5}', "--horizon", "3", "--replicas", "20", "--seed", "7"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "snapshots.txt", "final_law.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = _rows(tmp_path / "a" / "trajectory.csv")[0]
    assert header == ["time", "site", "ring", "outcome", "target"]


def test_couple_outputs(tmp_path):
    code = _main(tmp_path, "couple", "--space", '{"kind": "torus", "dims": [6]}',
                 "--kernel", '{"nn": 0.7}', "--init", '{"pair": ["110100", "011001"]}', "--horizon", "2")
    assert code == 0
    assert _rows(tmp_path / "out" / "pair_trajectory.csv")[0][-1] == "marginal"
    assert (tmp_path / "out" / "final_pairs.csv").exists()


def test_couple_requires_pair(tmp_path):
    assert _main(tmp_path, "couple", "--init", '{"bitstring": "11000"}') == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LREP_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["rates", "--init", '{"bitstring": "10100"}']) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_empty_acceptance_filter(tmp_path):
    assert _main(tmp_path, "acceptance", "--only") == 0
    rows = _rows(tmp_path / "out" / "acceptance.csv")
    assert rows == [["id", "name", "measured", "threshold", "pass"]]


def test_acceptance_subset_reruns_identically(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["acceptance", "--only", "2", "5", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "acceptance.csv").read_bytes() == (tmp_path / "b" / "acceptance.csv").read_bytes()


def test_fault_injection_fails_only_consistency(tmp_path):
    code = _main(tmp_path, "acceptance", "--only", "2", "3", "--fault-injection")
    assert code == 1
    rows = {r[0]: r for r in _rows(tmp_path / "out" / "acceptance.csv")[1:]}
    assert rows["3"][4] == "0"
    assert rows["2"][4] == "1"
