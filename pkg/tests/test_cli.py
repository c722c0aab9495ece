import csv
import json
import subprocess
import sys

import pytest

from parlangevin.cli import CSV_COLUMNS, main

GAUSS = {"kind": "gaussian", "mean": [0, 0], "precision": [1, 4]}
SMALL = {"max_M": 16, "max_N": 8, "acknowledge_override": True}


def write(tmp_path, config, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config, indent=2) if isinstance(config, dict) else config)
    return path


def run(tmp_path, config, *extra, out="out"):
    code = main(["--config", str(write(tmp_path, config)), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def read_rows(out):
    with open(out / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_verify_suite_passes(tmp_path):
    code, out = run(tmp_path, {"mode": "verify"})
    rows = read_rows(out)
    assert code == 0
    assert list(rows[0]) == CSV_COLUMNS
    assert all(r["pass"] == "true" for r in rows)
    assert {r["module"] for r in rows} == {"score", "noise", "lmc", "ulmc", "discrete", "diagnostics"}
    assert all(r["claim_anchor"] for r in rows)


def test_schema_error_reports_line_and_field(tmp_path, capsys):
    text = '{\n  "mode": "continuous-lmc",\n  "target": {"kind": "gaussian", "mean": [0], "precision": [1]},\n  "replica": 10,\n  "epsilon": 2\n}\n'
    code = main(["--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 2
    assert "run.json:4: field 'replica'" in err
    assert "run.json:5: field 'epsilon'" in err
    assert not (tmp_path / "o").exists()


def test_invalid_json_reports_position(tmp_path, capsys):
    code = main(["--config", str(write(tmp_path, '{"mode": "verify",\n "seed": }')), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "run.json:2:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "config",
    [
        {"mode": "continuous-lmc"},
        {"mode": "discrete"},
        {"mode": "sample"},
        {"mode": "continuous-lmc", "target": {"kind": "gaussian", "mean": [0], "precision": [0]}},
        {"mode": "discrete", "distribution": {"kind": "pointmass", "signs": "+0+"}},
        {"mode": "bench", "target": GAUSS, "schedule": {"M": 0}},
    ],
)
def test_schema_rejections(tmp_path, config):
    assert run(tmp_path, config)[0] == 2


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json")]) == 2


def test_bad_flags(tmp_path):
    path = str(write(tmp_path, {"mode": "verify"}))
    assert main(["--config", path, "--threads", "0"]) == 2
    assert main(["--config", path, "--seed", "-1"]) == 2


def test_bench_rounds_match_manifest(tmp_path):
    code, out = run(tmp_path, {"mode": "bench", "target": GAUSS, "schedule": SMALL, "replicas": 20})
    assert code == 0
    schedule = json.loads((out / "manifest.json").read_text())["resolved"]
    rows = {r["metric"]: r for r in read_rows(out)}
    assert int(rows["rounds"]["value"]) == schedule["N"] * schedule["K"]
    assert int(rows["evaluations"]["value"]) == schedule["N"] * schedule["K"] * schedule["M"]
    assert float(rows["sequential_over_parallel_rounds"]["value"]) == pytest.approx(schedule["M"] / schedule["K"])


def test_reruns_are_byte_identical(tmp_path):
    config = {"mode": "continuous-lmc", "target": GAUSS, "schedule": SMALL, "replicas": 200, "residuals": True}
    run(tmp_path, config, out="a")
    run(tmp_path, config, out="b")
    for name in ("metrics.csv", "residuals.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("mode", ["continuous-lmc", "continuous-ulmc"])
def test_thread_count_does_not_change_results(tmp_path, mode):
    config = {"mode": mode, "target": GAUSS, "schedule": {"max_M": 8, "max_N": 4, "acknowledge_override": True}, "replicas": 100, "residuals": True}
    run(tmp_path, config, "--threads", "1", out="t1")
    run(tmp_path, config, "--threads", "8", out="t8")
    assert (tmp_path / "t1" / "metrics.csv").read_bytes() == (tmp_path / "t8" / "metrics.csv").read_bytes()
    assert (tmp_path / "t1" / "residuals.csv").read_bytes() == (tmp_path / "t8" / "residuals.csv").read_bytes()
    m1 = json.loads((tmp_path / "t1" / "manifest.json").read_text())
    m8 = json.loads((tmp_path / "t8" / "manifest.json").read_text())
    assert m1["extra"] == m8["extra"]


def test_seed_flag_overrides_config(tmp_path):
    config = {"mode": "continuous-lmc", "target": GAUSS, "schedule": SMALL, "replicas": 50, "seed": 1}
    run(tmp_path, config, out="a")
    run(tmp_path, config, "--seed", "1", out="b")
    run(tmp_path, config, "--seed", "2", out="c")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mc = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert mc["seed"] == 2 and ma["extra"]["fit"] != mc["extra"]["fit"]


def test_manifest_contents(tmp_path):
    code, out = run(tmp_path, {"mode": "continuous-lmc", "target": GAUSS, "schedule": SMALL, "replicas": 50})
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["desk_scale_override"] is True
    assert manifest["resolved"]["formulas"]["K"] == "ceil(3 ln M)"
    assert set(manifest["resolved"]["overrides"]) == {"K", "M", "N"}
    assert "started" in manifest and "finished" in manifest
    assert not (out / "residuals.csv").exists()


def test_failed_assertion_exits_one(tmp_path):
    config = {"mode": "continuous-lmc", "target": GAUSS, "schedule": SMALL, "replicas": 50, "assertions": {"kl_max": 1e-9}}
    code, out = run(tmp_path, config)
    assert code == 1
    assert any(r["pass"] == "false" for r in read_rows(out))


def test_unacknowledged_caps_exit_two(tmp_path, capsys):
    config = {"mode": "continuous-lmc", "target": GAUSS, "schedule": {"max_M": 8}, "replicas": 10}
    assert run(tmp_path, config)[0] == 2
    assert "acknowledge" in capsys.readouterr().err


def test_mixture_target_runs(tmp_path):
    target = {"kind": "mixture", "centers": [[1, 0], [-1, 0]], "radius": 1.0}
    code, out = run(tmp_path, {"mode": "continuous-lmc", "target": target, "schedule": SMALL, "replicas": 20})
    assert code == 0
    assert {r["metric"] for r in read_rows(out)} == {"rounds", "evaluations"}


def test_discrete_mode_rows(tmp_path):
    config = {
        "mode": "discrete",
        "epsilon": 0.2,
        "distribution": {"kind": "product", "marginals": [0.9, 0.5, 0.2]},
        "oracle": {"kind": "product", "eps": "auto"},
        "localization": {"runs": 300, "inner": {"kind": "lmc", "max_M": 3, "max_N": 6, "acknowledge_override": True}},
        "assertions": {"tv_max": 0.3},
        "residuals": True,
    }
    code, out = run(tmp_path, config)
    rows = {r["metric"]: r for r in read_rows(out)}
    assert code == 0
    assert float(rows["empirical_tv"]["value"]) <= 0.3
    assert rows["T_eta"]["pass"] == "true"
    assert rows["laplace_evaluations"]["pass"] == "true"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolved"]["oracle_eps"] == pytest.approx(0.2 / 3**0.5)
    header = (out / "residuals.csv").read_text().splitlines()[0]
    assert header == "localization_step,outer_step,sweep,residual"


def test_discrete_table_relative_path(tmp_path):
    (tmp_path / "mu.txt").write_text("++ 0\n-- 0\n")
    config = {
        "mode": "discrete",
        "distribution": {"kind": "table", "path": "mu.txt"},
        "localization": {"runs": 2000, "inner": {"kind": "exact"}},
    }
    code, out = run(tmp_path, config)
    assert code == 0
    assert "score_rounds" not in {r["metric"] for r in read_rows(out)}


def test_discrete_infeasible_plan_exits_two(tmp_path):
    config = {"mode": "discrete", "distribution": {"kind": "uniform", "n": 2}, "localization": {"runs": 10}}
    assert run(tmp_path, config)[0] == 2


def test_product_oracle_needs_product_distribution(tmp_path):
    config = {"mode": "discrete", "distribution": {"kind": "uniform", "n": 2}, "oracle": {"kind": "product"}}
    assert run(tmp_path, config)[0] == 2


def test_module_entry_point(tmp_path):
    path = write(tmp_path, {"mode": "bench", "target": GAUSS, "schedule": SMALL, "replicas": 5})
    proc = subprocess.run(
        [sys.executable, "-m", "parlangevin", "--config", str(path), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "metrics.csv").exists()
