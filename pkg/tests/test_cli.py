import csv
import json
import subprocess
import sys

import pytest

from salab.cli import PRESET_NAMES, load_preset, main


def run_cli(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def small_config(tmp_path, name="cfg.json", **overrides):
    cfg = load_preset("scalar-linear")
    cfg.update(N=4000, M=20)
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_presets_list(capsys):
    assert run_cli("presets", "list") == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.strip().splitlines()]
    assert names == list(PRESET_NAMES)


def test_run_scalar_linear_preset(tmp_path):
    out = tmp_path / "out"
    assert run_cli("run", "--preset", "scalar-linear", "--out", out) == 0
    for name in ("summary.json", "runs.csv", "histogram.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert 9.5 <= summary["summary"]["mean_pr"][0] <= 11.0
    assert summary["version"]
    assert summary["config"]["chain"] == {"kind": "ar1", "beta": 0.9}
    rows = read_csv(out / "runs.csv")
    assert len(rows) == 500
    hist = json.loads((out / "histogram.json").read_text())
    assert sum(hist["theta_pr_0"]["counts"]) == 500


def test_run_twice_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    for d in ("a", "b"):
        assert run_cli("run", "--config", cfg, "--out", tmp_path / d) == 0
    for name in ("summary.json", "runs.csv", "histogram.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_threads_do_not_change_outputs(tmp_path):
    cfg = small_config(tmp_path)
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "t1", "--threads", 1) == 0
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "t8", "--threads", 8) == 0
    for name in ("summary.json", "runs.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t8" / name).read_bytes()


def test_seed_flag_changes_results(tmp_path):
    cfg = small_config(tmp_path)
    run_cli("run", "--config", cfg, "--out", tmp_path / "a", "--seed", 1)
    run_cli("run", "--config", cfg, "--out", tmp_path / "b", "--seed", 2)
    assert (tmp_path / "a" / "runs.csv").read_bytes() != (tmp_path / "b" / "runs.csv").read_bytes()


def test_summary_round_trip(tmp_path):
    cfg = small_config(tmp_path)
    run_cli("run", "--config", cfg, "--out", tmp_path / "a")
    resolved = json.loads((tmp_path / "a" / "summary.json").read_text())["config"]
    again = tmp_path / "resolved.json"
    again.write_text(json.dumps(resolved))
    run_cli("run", "--config", again, "--out", tmp_path / "b")
    for name in ("summary.json", "runs.csv", "histogram.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_float_format(tmp_path):
    run_cli("run", "--config", small_config(tmp_path), "--out", tmp_path)
    text = (tmp_path / "runs.csv").read_bytes().decode("utf-8")
    lines = text.split("\r\n")
    assert lines[-1] == ""
    value = lines[1].split(",")[3]
    assert float(repr(float(value))) == float(value)
    assert len(value.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 17


@pytest.mark.parametrize("overrides,fragment", [
    ({"N0": 4000}, "N0"),
    ({"bogus": 1}, "bogus"),
    ({"model": {"id": "scalar-linear", "beta": 1.5, "b": -10.0}}, "model"),
    ({"model": {"id": "scalar-linear", "betta": 0.5}}, "model.betta"),
    ({"schedule": {"kind": "constant", "alpha": -1}}, "schedule"),
    ({"schedule": {"kind": "constant"}}, "schedule.alpha"),
    ({"theta0": {"mean": [0.0, 1.0]}}, "theta0.mean"),
    ({"recorders": {"histogram": {"bins": 0}}}, "recorders.histogram.bins"),
    ({"sweep": {"param": "rho", "values": [0.5]}}, "sweep.param"),
    ({"chain": {"kind": "ar1", "beta": 0.5}}, "chain"),
    ({"M": 1}, "M"),
])
def test_invalid_config_exit_code(tmp_path, capsys, overrides, fragment):
    cfg = small_config(tmp_path, **overrides)
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "o") == 2
    assert fragment in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path):
    assert run_cli("run", "--config", tmp_path / "nope.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("run", "--config", bad) == 2
    assert run_cli("run") == 2
    assert run_cli("run", "--preset", "unknown") == 2


def test_divergence_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path, schedule={"kind": "constant", "alpha": 0.8}, N=5000)
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "o") == 3
    assert "diverged" in capsys.readouterr().err
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())["summary"]
    assert summary["n_diverged"] > 0


def test_sweep_alpha_grid(tmp_path):
    cfg = small_config(tmp_path, N=100_000, M=200)
    code = run_cli("sweep", "--config", cfg, "--out", tmp_path)
    rows = read_csv(tmp_path / "sweep.csv")
    assert [float(r["value"]) for r in rows] == [0.0005, 0.0028, 0.0158, 0.0889, 0.5]
    assert float(rows[1]["bias_pr_0"]) == pytest.approx(0.28, abs=0.04)
    assert code in (0, 3)


def test_sweep_rho_grid_smaller_bias(tmp_path):
    sched = {"kind": "polynomial", "a": 0.5, "rho": 0.8}
    grid = {"param": "rho", "values": [0.4, 0.5375, 0.675, 0.8125, 0.9]}
    cfg = small_config(tmp_path, N=2_000_000, M=20, schedule=sched, sweep=grid)
    assert run_cli("sweep", "--config", cfg, "--out", tmp_path / "rho") == 0
    const = small_config(tmp_path, "const.json", N=2_000_000, M=20,
                         sweep={"param": "alpha", "values": [0.0028]})
    assert run_cli("sweep", "--config", const, "--out", tmp_path / "const") == 0
    ref = float(read_csv(tmp_path / "const" / "sweep.csv")[0]["bias_pr_0"])
    rows = read_csv(tmp_path / "rho" / "sweep.csv")
    assert len(rows) == 5
    for r in rows:
        assert abs(float(r["bias_pr_0"])) < ref


def test_single_point_sweep_matches_run(tmp_path):
    cfg = small_config(tmp_path, sweep={"param": "alpha", "values": [0.0028]})
    run_cli("run", "--config", cfg, "--out", tmp_path / "r")
    run_cli("sweep", "--config", cfg, "--out", tmp_path / "s")
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())["summary"]
    row = read_csv(tmp_path / "s" / "sweep.csv")[0]
    assert float(row["mean_pr_0"]) == summary["mean_pr"][0]
    assert float(row["scaled_var_pr_0"]) == summary["scaled_cov_pr"][0][0]
    assert float(row["window_mse"]) == summary["window_mse"]


def test_sweep_requires_grid(tmp_path):
    cfg = load_preset("td")
    cfg.pop("sweep")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert run_cli("sweep", "--config", path, "--out", tmp_path) == 2


def test_oracle_outputs(tmp_path):
    assert run_cli("oracle", "--preset", "scalar-linear", "--out", tmp_path / "s") == 0
    rep = json.loads((tmp_path / "s" / "oracle.json").read_text())["oracle"]
    assert rep["sigma_theta_star"][0][0] == pytest.approx(2299.0)
    assert rep["z_theta_star"][0][0] == pytest.approx(1149.5)
    assert run_cli("oracle", "--preset", "td", "--out", tmp_path / "t") == 0
    rep = json.loads((tmp_path / "t" / "oracle.json").read_text())["oracle"]
    assert rep["theta_star"] == pytest.approx([1.212121, 2.828282], abs=1e-6)
    assert run_cli("oracle", "--preset", "camel", "--out", tmp_path / "c") == 4


def test_decompose(tmp_path):
    assert run_cli("decompose", "--preset", "scalar-linear", "--steps", 10_000,
                   "--out", tmp_path) == 0
    payload = json.loads((tmp_path / "decomposition.json").read_text())
    assert payload["max_residual"] <= 1e-9
    rows = read_csv(tmp_path / "decomposition.csv")
    assert len(rows) == 10_000
    assert run_cli("decompose", "--preset", "td", "--out", tmp_path / "td") == 4
    assert run_cli("decompose", "--preset", "scalar-linear", "--steps", 0, "--out", tmp_path) == 2


def test_store_path(tmp_path):
    cfg = small_config(tmp_path, recorders={"store_path": True})
    run_cli("run", "--config", cfg, "--out", tmp_path)
    path_rows = read_csv(tmp_path / "path.csv")
    run_rows = read_csv(tmp_path / "runs.csv")
    assert len(path_rows) == 4001
    assert float(path_rows[-1]["theta_0"]) == float(run_rows[0]["theta_final_0"])


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "salab", "oracle", "--preset", "td", "--out",
                          str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["theta_star"][0] == pytest.approx(1.2121212)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_every_preset_validates(name):
    from salab.cli import validate_config

    cfg = validate_config(load_preset(name))
    assert cfg.sweep is not None
