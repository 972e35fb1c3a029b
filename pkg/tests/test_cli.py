import json

import pytest

from qru.cli import main


def test_param_count_report(capsys):
    assert main(["param-count"]) == 0
    out = capsys.readouterr().out
    assert "s1" in out and "MISMATCH (-2)" in out
    assert out.count(" ok") == 3


def test_param_count_bad_name(capsys):
    assert main(["param-count", "s7"]) == 2
    assert "error" in capsys.readouterr().err


def test_gradcheck_single(capsys):
    assert main(["gradcheck", "s2", "--steps", "2"]) == 0
    assert "ok" in capsys.readouterr().out


def test_simulate_dump(capsys):
    assert main(["simulate", "s1", "--x", "0.25"]) == 0
    dump = json.loads(capsys.readouterr().out)
    assert dump["num_qubits"] == 8 and len(dump["outputs"]) == 1 and len(dump["next_hidden"]) == 10
    assert dump["gate_count"] == len(dump["gates"])


def test_simulate_wrong_input_size(capsys):
    assert main(["simulate", "s1", "--x", "0.1,0.2"]) == 2


def test_run_config_errors(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("kind: nope\n")
    assert main(["run", str(tmp_path / "bad.yaml")]) == 2
    (tmp_path / "nodata.yaml").write_text("kind: wdbc\ndata: {path: /nonexistent/wdbc.data, fold_limit: 1}\n")
    assert main(["run", str(tmp_path / "nodata.yaml"), "--output-dir", str(tmp_path)]) == 3


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "osc.yaml"
    cfg.write_text(
        "kind: oscillation\nname: tiny\ntraining: {max_epochs: 4, record_interval: 2}\n"
        "data: {num_points: 20, train_points: 15, horizon: 3}\n"
    )
    assert main(["run", str(cfg), "--output-dir", str(tmp_path), "--seed", "2"]) == 0
    assert (tmp_path / "tiny" / "results.json").exists()
    assert (tmp_path / "tiny" / "series.csv").exists()


def test_usage_error():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
