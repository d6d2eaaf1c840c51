import json
import subprocess
import sys

import numpy as np
import pytest

from bsplit.cli import BENCH_SCHEMA, SUMMARY_SCHEMA, bench_stability, main
from bsplit.ot import random_instance


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def zero_cost(tmp_path):
    return write(tmp_path / "ot2x2.json",
                 {"C": [[0, 0], [0, 0]], "r": [0.5, 0.5], "c": [0.5, 0.5], "eta": 1.0})


@pytest.fixture
def quad_pair(tmp_path):
    return write(tmp_path / "pair.json", {"f": {"type": "quadratic", "P": [[1]], "q": [0]},
                                          "g": {"type": "quadratic", "P": [[1]], "q": [-4]},
                                          "optimal_value": -4.0})


def summary(out):
    return json.loads((out / "summary.json").read_text())


def test_sinkhorn_zero_cost(tmp_path, zero_cost, capsys):
    out = tmp_path / "o"
    assert main(["run", "--alg", "sinkhorn", "--input", zero_cost, "--tol", "1e-10",
                 "--out", str(out)]) == 0
    s = summary(out)
    assert s["schema"] == SUMMARY_SCHEMA and s["status"] == "ok" and s["problem"] == "ot"
    assert s["iterations"] == 1 and s["converged"]
    np.testing.assert_array_equal(s["final"]["plan"], np.full((2, 2), 0.25))
    assert s["certificates"]["lp_value"] == 0.0
    plan = np.loadtxt(out / "plan.csv", delimiter=",")
    np.testing.assert_array_equal(plan, np.full((2, 2), 0.25))
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "iter,gamma,objective,residual,min_objective,sum_gamma,sum_gamma_sq,wall_ns"
    assert len(lines) == 2
    assert json.loads(capsys.readouterr().out)["iterations"] == 1


def test_bdrs_energy_midpoint(tmp_path, quad_pair):
    out = tmp_path / "o"
    assert main(["run", "--alg", "bdrs", "--kernel", "energy", "--input", quad_pair,
                 "--out", str(out)]) == 0
    s = summary(out)
    assert s["converged"]
    assert s["final"]["x"][0] == pytest.approx(2.0, abs=1e-9)
    assert s["certificates"]["objective_gap"] == pytest.approx(0.0, abs=1e-9)


def test_two_block_run(tmp_path):
    p = write(tmp_path / "tb.json", {"M": [[1]], "N": [[1]], "b": [2], "coupling": "equality",
                                     "f": {"type": "quadratic"}, "g": {"type": "quadratic"}})
    out = tmp_path / "o"
    assert main(["run", "--alg", "admm", "--input", p, "--max-iter", "500", "--out", str(out)]) == 0
    s = summary(out)
    assert s["problem"] == "two_block"
    np.testing.assert_allclose(s["final"]["u"] + s["final"]["v"], [1.0, 1.0], atol=1e-8)
    assert s["certificates"]["constraint_violation"] <= 1e-8


def test_missing_input_exits_2(tmp_path, capsys):
    assert main(["run", "--alg", "sinkhorn", "--input", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--alg", "emm"],
    ["run", "--alg", "sinkhorn", "--gamma", "3"],
    ["run", "--alg", "sinkhorn", "--schedule", "inverse_sqrt"],
    ["run", "--alg", "bdrs", "--kernel", "nope"],
])
def test_validation_errors_exit_2(argv, zero_cost, quad_pair):
    if len(argv) > 1 and argv[2] in ("sinkhorn",):
        argv = argv + ["--input", zero_cost]
    if argv[-1] == "nope":
        argv = argv + ["--input", quad_pair]
    assert main(argv) == 2


def test_algorithm_problem_mismatch(quad_pair, capsys):
    assert main(["run", "--alg", "emm", "--input", quad_pair]) == 2
    assert "does not apply" in capsys.readouterr().err


def test_emm_needs_inequality(tmp_path):
    p = write(tmp_path / "tb.json", {"M": [[1]], "N": [[1]], "b": [2],
                                     "f": {"type": "quadratic"}, "g": {"type": "quadratic"}})
    assert main(["run", "--alg", "emm", "--input", p]) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    # Burg kernel: the reflected point leaves the domain at iteration 1
    p = write(tmp_path / "b.json", {"f": {"type": "quadratic", "P": [[1]], "q": [0]},
                                    "g": {"type": "quadratic", "P": [[1]], "q": [-40]},
                                    "x0": [1.0]})
    assert main(["run", "--alg", "bdrs", "--kernel", "burg", "--input", p]) == 3
    assert "iteration 1" in capsys.readouterr().err


def test_config_precedence(tmp_path, zero_cost):
    cfg = write(tmp_path / "cfg.json", {"alg": "sinkhorn", "max-iter": 7, "tol": 0.0})
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--seed", "1", "--n", "3", "--max-iter", "3",
                 "--out", str(out)]) == 0
    s = summary(out)
    assert s["config"]["max_iter"] == 3 and s["config_sources"]["max_iter"] == "flag"
    assert s["config"]["tol"] == 0.0 and s["config_sources"]["tol"] == "config"
    assert s["config_sources"]["schedule"] == "default"
    assert s["iterations"] == 3
    bad = write(tmp_path / "bad.json", {"colour": 1})
    assert main(["run", "--config", bad, "--input", zero_cost]) == 2


def test_log_domain_flag_forms(tmp_path):
    for flag in (["--log-domain"], ["--log-domain=true"], ["--log-domain", "false"]):
        out = tmp_path / ("o" + str(len(flag)) + flag[-1][-4:])
        assert main(["run", "--alg", "ademm", "--seed", "4", "--eta", "0.01", "--max-iter", "5",
                     "--out", str(out)] + flag) == 0
        s = summary(out)
        assert s["certificates"]["log_domain"]
    assert s["certificates"]["switched_to_log_at"] == 1


def test_csv_instance(tmp_path):
    p = tmp_path / "i.csv"
    p.write_text("0,1\n1,0\n\n0.7,0.3\n\n0.4,0.6\n")
    out = tmp_path / "o"
    assert main(["run", "--alg", "bdrs", "--input", str(p), "--max-iter", "20", "--out", str(out)]) == 0
    assert summary(out)["certificates"]["lp_value"] == pytest.approx(0.3)


def test_trace_is_deterministic(tmp_path):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--alg", "bdrs", "--seed", "3", "--eta", "0.2", "--max-iter", "200",
                     "--out", str(out)]) == 0
        texts.append((out / "trace.csv").read_bytes())
    assert texts[0] == texts[1]


def test_bench_single_cell():
    rep = bench_stability([0.5], [("x", random_instance(3, 1))], ["sinkhorn"], max_iter=100)
    assert rep["schema"] == BENCH_SCHEMA
    assert len(rep["rows"]) == 1


def test_bench_records_instability(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench_stability", "--eta", "0.01", "1", "--alg", "sinkhorn-primal", "ademm-log",
                 "--seed", "4", "--max-iter", "2000", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "sinkhorn" in table and "ademm" in table
    rows = json.loads(out.read_text())["rows"]
    cell = {(r["algorithm"], r["eta"]): r for r in rows}
    assert cell[("sinkhorn", 0.01)]["first_nonfinite"] == 1
    assert cell[("ademm", 1.0)]["first_nonfinite"] is None
    assert cell[("ademm", 1.0)]["event"] is None
    assert cell[("ademm", 1.0)]["iterations_to_tol"] is not None


def test_bench_unknown_algorithm_is_recorded(capsys):
    assert main(["bench_stability", "--alg", "quantum", "--eta", "1", "--max-iter", "5"]) == 2


def test_verify_commands(tmp_path, capsys):
    assert main(["verify", "thm3.2"]) == 0
    assert main(["verify", "thm3.1", "--kernel", "energy"]) == 0
    out = tmp_path / "v.json"
    assert main(["verify", "appendixA", "--N", "2000", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["results"][0]["passed"]
    printed = capsys.readouterr().out
    assert "thm3.2" in printed and "PASS" in printed.upper()


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "bsplit.cli", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "bsplit" in res.stdout
