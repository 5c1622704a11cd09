import json

import numpy as np

import tgcmpc
from tgcmpc.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, dict(line.split("=", 1) for line in out.splitlines()
                      if "=" in line and not line.startswith("["))


def write_problem(tmp_path, name="prob.json", **overrides):
    doc = json.loads(tgcmpc.bundled_problem_path().read_text())
    doc.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_synthesize_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    code, kv = run_cli(capsys, "synthesize", "--out", str(out1))
    assert code == 0
    assert (out1 / "gcc.json").exists() and (out1 / "rpi.json").exists()
    assert abs(float(kv["trace_P"]) - 32.6947) <= 1e-2
    assert abs(float(kv["a_alpha"]) - 0.5) <= 0.2
    code2, _ = run_cli(capsys, "synthesize", "--out", str(out2))
    assert code2 == 0
    assert (out1 / "gcc.json").read_bytes() == (out2 / "gcc.json").read_bytes()
    assert (out1 / "rpi.json").read_bytes() == (out2 / "rpi.json").read_bytes()


def test_tube_zero_state_writes_zero_plan(tmp_path, capsys):
    prob = write_problem(tmp_path, x0=[0.0, 0.0, 0.0])
    out = tmp_path / "out"
    code, kv = run_cli(capsys, "tube", "--problem", prob, "--out", str(out))
    assert code == 0
    assert float(kv["objective"]) <= 1e-6
    rows = (out / "tube.csv").read_text().strip().splitlines()[1:]
    z_cols = np.array([[float(v) for v in r.split(",")[1:4]] for r in rows])
    assert np.max(np.abs(z_cols)) <= 1e-6
    assert (out / "tube.svg").exists()


def test_tube_infeasible_exit_code(tmp_path, capsys):
    prob = write_problem(tmp_path, x0=[0.9, -0.9, 0.9])
    code, kv = run_cli(capsys, "tube", "--problem", prob, "--out",
                       str(tmp_path / "out"))
    assert code == 2
    assert kv["status"] == "infeasible"


def test_simulate_zero_disturbance(tmp_path, capsys):
    prob = write_problem(tmp_path, x0=[0.5, -0.5, 0.5])
    out = tmp_path / "out"
    code, kv = run_cli(capsys, "simulate", "--problem", prob, "--out", str(out),
                       "--disturbance", "zero", "--steps", "12")
    assert code == 0
    assert kv["status"] == "completed"
    assert int(kv["violations"]) == 0
    assert float(kv["realized_cost"]) <= float(kv["cost_bound"]) + 1e-6
    assert (out / "trace.csv").exists() and (out / "trace.svg").exists()


def test_simulate_gcc_baseline(tmp_path, capsys):
    prob = write_problem(tmp_path, x0=[0.2, -0.2, 0.2])
    code, kv = run_cli(capsys, "simulate", "--problem", prob, "--out",
                       str(tmp_path / "out"), "--controller", "gcc",
                       "--disturbance", "boundary", "--steps", "10", "--seed", "4")
    assert code == 0
    assert float(kv["realized_cost"]) <= float(kv["cost_bound"]) + 1e-9


def test_sweep_reports_boundary(tmp_path, capsys):
    out = tmp_path / "out"
    code, kv = run_cli(capsys, "sweep", "--out", str(out),
                       "--lambda-max", "0.9", "--tol", "0.02")
    assert code == 0
    lam = float(kv["lambda_star"])
    assert 0.3 <= lam <= 0.9
    lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "lambda,feasible,objective"
    assert len(lines) == 42
    flags = [int(l.split(",")[1]) for l in lines[1:]]
    assert flags == sorted(flags, reverse=True)  # monotone boundary


def test_check_reports_all_criteria(tmp_path, capsys):
    code = main(["check", "--out", str(tmp_path / "out"), "--runs", "2"])
    out = capsys.readouterr().out
    rows = [l for l in out.splitlines() if l.startswith(("[PASS]", "[FAIL]"))]
    assert len(rows) == 10
    failures = int(dict(l.split("=", 1) for l in out.splitlines()
                        if l.startswith("failures"))["failures"])
    assert code == (1 if failures else 0)
    assert failures == sum(1 for r in rows if r.startswith("[FAIL]"))


def test_check_detects_corrupted_gain(tmp_path, capsys):
    out = tmp_path / "out"
    code, _ = run_cli(capsys, "synthesize", "--out", str(out))
    assert code == 0
    doc = json.loads((out / "gcc.json").read_text())
    doc["K"][0][0] += 0.5
    bad = tmp_path / "bad_gcc.json"
    bad.write_text(json.dumps(doc))
    code = main(["check", "--out", str(out), "--runs", "1",
                 "--gcc", str(bad), "--rpi", str(out / "rpi.json")])
    cap = capsys.readouterr().out
    assert code == 1
    row1 = next(l for l in cap.splitlines() if " 1 " in l and "gcc-certificate" in l)
    assert row1.startswith("[FAIL]")
    assert "own-pair" in row1


def test_fixed_a_alpha_skips_line_search(tmp_path, capsys):
    out = tmp_path / "out"
    code, kv = run_cli(capsys, "synthesize", "--out", str(out),
                       "--a-alpha", "0.5625")
    assert code == 0
    assert float(kv["a_alpha"]) == 0.5625
    doc = json.loads((out / "rpi.json").read_text())
    assert doc["a_alpha"] == 0.5625


def test_solver_tolerance_env_override(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TGCMPC_SOLVER_TOL", "1e-6")
    code, kv = run_cli(capsys, "synthesize", "--out", str(tmp_path / "out"))
    assert code == 0
    assert abs(float(kv["trace_P"]) - 32.6947) <= 1e-2


def test_missing_problem_file_exit_code(tmp_path, capsys):
    code = main(["synthesize", "--problem", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 3


def test_unknown_problem_key_exit_code(tmp_path, capsys):
    prob = write_problem(tmp_path, extra_key=1)
    code = main(["synthesize", "--problem", prob, "--out", str(tmp_path / "out")])
    assert code == 3


def test_reuse_skips_resynthesis(tmp_path, capsys):
    out = tmp_path / "out"
    code, _ = run_cli(capsys, "synthesize", "--out", str(out))
    assert code == 0
    # doctor the stored solution; --reuse must pick it up verbatim
    doc = json.loads((out / "rpi.json").read_text())
    doc["a_alpha"] = 0.505
    (out / "rpi.json").write_text(json.dumps(doc))
    prob = write_problem(tmp_path, x0=[0.2, -0.2, 0.2])
    code, kv = run_cli(capsys, "tube", "--problem", prob, "--out", str(out),
                       "--reuse")
    assert code == 0
