import argparse
import json

import pytest

from fbmstat import cli
from fbmstat.fbm_engine import read_binary, v2h_sq


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_eps():
    assert cli.parse_eps("2^-9") == 2.0**-9
    assert cli.parse_eps("0.25") == 0.25
    for bad in ("abc", "-1", "0"):
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_eps(bad)


def test_constants_csv(capsys):
    code, out, _ = run(["constants", "--h", "0.7", "--k", "1,2", "--scales", "1,2"], capsys)
    assert code == 0
    rows = dict(line.split(",") for line in out.strip().splitlines()[1:])
    assert float(rows["sigma2h_sq"]) == pytest.approx(v2h_sq(0.7) * (4 - 2**1.4), rel=1e-12)
    assert {"sigma_g1_sq", "regression_var_k2"} <= set(rows)


def test_estimate_outputs_and_reproducible_from_manifest(tmp_path, capsys):
    out1 = tmp_path / "a"
    code, stdout, _ = run(["estimate", "--h-true", "0.7", "--sigma", "1.5", "--model", "m4", "--eps", "2^-8",
                           "--seed", "3", "--out", str(out1)], capsys)
    assert code == 0
    res = json.loads(stdout)
    assert 0.5 < res["h_hat"] < 0.9
    assert sorted(p.name for p in out1.iterdir()) == ["config.toml", "estimate.json", "log_m.csv", "manifest.json"]
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["version"] == cli.__version__
    out2 = tmp_path / "b"
    code, _, _ = run(["estimate", "--config", str(out1 / "config.toml"), "--out", str(out2)], capsys)
    assert code == 0
    assert (out1 / "estimate.json").read_text() == (out2 / "estimate.json").read_text()
    assert (out1 / "log_m.csv").read_text() == (out2 / "log_m.csv").read_text()


@pytest.mark.parametrize("estimator", ["known-h", "functional", "pointwise"])
def test_other_estimators(estimator, capsys):
    code, stdout, _ = run(["estimate", "--h-true", "0.7", "--sigma", "1.0", "--model", "m6", "--mu", "0.2",
                           "--c", "1.0", "--estimator", estimator, "--eps", "2^-8"], capsys)
    assert code == 0 and json.loads(stdout)["estimator"] == estimator


def test_missing_sigma0_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["test", "--variant", "F_const"])
    assert exc.value.code == 2
    assert "--sigma0" in capsys.readouterr().err


def test_bad_hurst_is_usage_error(capsys):
    code, _, err = run(["estimate", "--h-true", "0.3", "--sigma", "1"], capsys)
    assert code == 2 and "--h-true" in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(SystemExit) as exc:
        cli.main(["constants", "--h", "0.7", "--config", str(cfg)])
    assert exc.value.code == 2 and "bogus" in capsys.readouterr().err


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('h = 0.8\nkernel = "c2_bump"\n')
    _, a, _ = run(["constants", "--config", str(cfg)], capsys)
    _, b, _ = run(["constants", "--config", str(cfg), "--h", "0.7"], capsys)
    _, c, _ = run(["constants", "--h", "0.7", "--kernel", "c2_bump"], capsys)
    assert a != b and b == c


def test_test_single_and_power_curve(tmp_path, capsys):
    code, stdout, _ = run(["test", "--sigma0", "1", "--d", "1", "--seed", "1"], capsys)
    assert code == 0 and set(json.loads(stdout)) >= {"statistic", "p_value", "reject"}
    code, _, _ = run(["test", "--sigma0", "1", "--d-values", "0,3", "--replicates", "100", "--eps", "2^-8",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = (tmp_path / "power_curve.csv").read_text().splitlines()
    assert lines[0].startswith("d,rejection_rate") and len(lines) == 3


def test_simulate_binary(tmp_path, capsys):
    code, _, _ = run(["simulate", "--h", "0.7", "--raw", "--eps-max", "2^-6", "--format", "binary",
                      "--seed", "9", "--out", str(tmp_path)], capsys)
    assert code == 0
    p = read_binary(tmp_path / "fbm.fbm1")
    assert p.h == 0.7 and p.values[p.zero_index] == 0.0


def test_simulate_requires_out(capsys):
    code, _, err = run(["simulate", "--h", "0.7"], capsys)
    assert code == 2 and "--out" in err


def test_mc_catalog(tmp_path, capsys):
    code, stdout, _ = run(["mc", "--experiment", "sg2_clt", "--replicates", "50", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(stdout)["replicates"] == 50
    assert (tmp_path / "replicates.csv").exists() and (tmp_path / "manifest.json").exists()
    code, _, err = run(["mc", "--experiment", "nope"], capsys)
    assert code == 2 and "--experiment" in err


def test_mc_from_file(tmp_path, capsys):
    exp = tmp_path / "e.toml"
    exp.write_text('name = "mine"\nstatistic = "s_g"\neps_list = [0.00390625]\nreplicates = 50\n')
    code, stdout, _ = run(["mc", "--experiment", str(exp)], capsys)
    assert code == 0 and json.loads(stdout)["experiment"] == "mine"
