import json

import pytest

from locmix.cli import main

K2 = '{"type": "ising", "J": [[0, 0.1], [0.1, 0]]}'
C6 = '{"type": "hardcore", "n": 6, "edges": [[0,1],[1,2],[2,3],[3,4],[4,5],[5,0]], "lambda": 0.5}'


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_analyze_product_measure(capsys):
    code, rep, _ = run(capsys, "analyze", "--model", '{"type": "ising", "J": [[0,0,0],[0,0,0],[0,0,0]]}',
                       "--seed", "1", "--restarts", "5")
    assert code == 0 and rep["pass"]
    assert rep["result"]["spectral"]["gap"] == pytest.approx(1 / 3, abs=1e-12)
    assert rep["command"] == "analyze" and rep["seed"] == 1 and len(rep["config_hash"]) > 0


def test_analyze_writes_report_and_tables(tmp_path, capsys):
    out = tmp_path / "r" / "k2.json"
    code = main(["analyze", "--model", K2, "--seed", "3", "--restarts", "5", "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["pass"]
    assert any(p.name.startswith("k2_") and p.suffix == ".csv" for p in out.parent.iterdir())


def test_model_from_file_and_config(tmp_path, capsys):
    mfile = tmp_path / "m.json"
    mfile.write_text(K2)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": str(mfile), "seed": 4, "restarts": 5}))
    code, rep, _ = run(capsys, "analyze", "--config", str(cfg))
    assert code == 0 and rep["seed"] == 4
    code, rep, _ = run(capsys, "analyze", "--config", str(cfg), "--seed", "9")
    assert rep["seed"] == 9


def test_certify_hardcore_cycle(capsys):
    code, rep, _ = run(capsys, "certify", "--model", C6, "--seed", "1", "--restarts", "3")
    assert code == 0 and rep["pass"]


def test_simulate_sl(capsys):
    code, rep, _ = run(capsys, "simulate", "--model", K2, "--seed", "2", "--scheme", "sl", "--horizon", "1",
                       "--dt", "0.01", "--paths", "500")
    assert code == 0 and rep["pass"]


def test_pipeline_theorem_sk(capsys):
    code, rep, _ = run(capsys, "pipeline", "--pipeline", "theorem-sk", "--model",
                       '{"type": "ising", "J": [[0.1,0.1],[0.1,0.1]]}', "--seed", "1", "--restarts", "10")
    assert code == 0
    assert rep["result"]["assembled_bound"] == pytest.approx(0.3, abs=1e-12)


def test_verify_subset(capsys):
    code, rep, _ = run(capsys, "verify", "--seed", "7", "--suites", "tightness,fact-inf,cormar",
                       "--instances", "3")
    assert code == 0 and set(rep["result"]["suites"]) == {"tightness", "fact-inf", "cormar"}


def test_failed_check_exit_code_names_the_check(capsys):
    code, rep, err = run(capsys, "verify", "--seed", "7", "--suites", "hphi")
    assert code == 4 and not rep["pass"]
    assert "hphi" in err and "lhs=" in err


@pytest.mark.parametrize("argv", [
    ["analyze", "--model", K2],
    ["analyze", "--model", '{"type": "ising", "J": [[0, 1]', "--seed", "1"],
    ["analyze", "--model", K2, "--seed", "1", "--tol.identity", "1e-20"],
    ["analyze", "--model", K2, "--seed", "1", "--tol.bogus", "1"],
    ["certify", "--model", K2, "--seed", "1", "--certificates", "nonsense"],
    ["verify", "--seed", "1", "--suites", "nonsense"],
    ["analyze", "--model", "/no/such/file.json", "--seed", "1"],
])
def test_input_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_malformed_json_reports_position(capsys):
    main(["analyze", "--model", '{"type": "ising", "J": [[0, 1]', "--seed", "1"])
    assert "line 1, column" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["pipeline", "--pipeline", "hardcore", "--seed", "1", "--model",
     '{"type": "hardcore", "n": 4, "edges": [[0,1],[0,2],[0,3]], "lambda": 10}'],
    ["simulate", "--model", K2, "--seed", "1", "--scheme", "sl", "--paths", "10000000"],
    ["analyze", "--model", K2, "--seed", "1", "--restarts", "5000"],
])
def test_precondition_and_budget_errors_exit_3(argv, capsys):
    assert main(argv) == 3


def test_reports_are_reproducible_and_thread_invariant(capsys, monkeypatch):
    argv = ["simulate", "--model", K2, "--seed", "5", "--scheme", "sl", "--horizon", "1", "--dt", "0.02",
            "--paths", "300"]
    outs = []
    for threads in ("1", "4", "4"):
        monkeypatch.setenv("LOCMIX_THREADS", threads)
        assert main(argv) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1] == outs[2]
