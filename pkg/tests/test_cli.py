import csv
import json

import pytest

from cgolab.cli import ConfigError, load_config, main


def _cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_weights_outputs(tmp_path):
    assert main(["weights", "--out", str(tmp_path), "--resolution", "32"]) == 0
    out = tmp_path / "weights"
    w = json.loads((out / "weights.json").read_text())
    assert w["tau_cap"] > 0
    assert (out / "weights.png").stat().st_size > 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == 0 and "weights.json" in man["files"]


def test_cgo_outputs_and_determinism(tmp_path):
    cfg = _cfg(tmp_path, {"taus": [6, 10]})
    for run in ("a", "b"):
        assert main(["cgo", "--config", cfg, "--out", str(tmp_path / run), "--resolution", "48"]) == 0
    a, b = tmp_path / "a" / "cgo", tmp_path / "b" / "cgo"
    rows = _rows(a / "decay_interior.csv")
    assert rows[0] == ["tau", "value_re", "value_im", "abs", "abs_tau", "abs_tau2"]
    assert len(rows) == 3
    for name in ("decay_interior.csv", "decay_boundary.csv", "excitation_tau_6.csv", "cauchy_tau_6.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert _rows(a / "cauchy_tau_6.csv")[0][0] == "s"
    for name in ("pack_summary.json", "cgo_breakdown.json", "decay.png"):
        assert (a / name).exists()


def test_recover_outputs(tmp_path):
    cfg = _cfg(tmp_path, {"scan": {"points": [[0.0, 0.5]], "n_taus": 6, "tau_min": 6.0}})
    assert main(["recover", "--config", cfg, "--out", str(tmp_path), "--resolution", "48"]) == 0
    out = tmp_path / "recover"
    rows = _rows(out / "scan.csv")
    assert rows[0] == ["x1", "x2", "recovered", "truth", "rel_error", "fit_residual"]
    assert len(rows) == 2
    conf = json.loads((out / "experiment_config.json").read_text())
    assert len(conf["taus_used"]) == 6
    for name in ("scan.png", "cauchy_data_1.csv", "cauchy_data_2.csv", "excitation_sample.csv"):
        assert (out / name).exists()


def test_homotopy_outputs(tmp_path):
    cfg = _cfg(tmp_path, {"homotopy": {"n_t": 5}})
    assert main(["homotopy", "--config", cfg, "--out", str(tmp_path), "--resolution", "24"]) == 0
    out = tmp_path / "homotopy"
    rows = _rows(out / "reachable_set.csv")
    assert rows[0] == ["x1", "x2", "y", "f1_minus_f2_est", "truth_if_known"]
    assert any(r[3] == "excluded" for r in rows[1:])
    man = json.loads((out / "path_archive" / "manifest.json").read_text())
    assert len(man["snapshots"]) == 5 and "stability_certificate" in man
    summary = json.loads((out / "homotopy_summary.json").read_text())
    assert summary["within_tolerance"]


@pytest.mark.parametrize("argv", [
    ["weights", "--resolution", "8"],
    ["cgo", "--tau-max", "-1"],
    ["weights", "--seed", "-3"],
])
def test_bad_arguments_exit_2(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_bad_configs_exit_2(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["weights", "--config", str(broken), "--out", str(tmp_path)]) == 2
    assert main(["weights", "--config", _cfg(tmp_path, {"bogus": 1}), "--out", str(tmp_path)]) == 2
    assert main(["weights", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    over_cap = _cfg(tmp_path, {"taus": [100]})
    assert main(["cgo", "--config", over_cap, "--out", str(tmp_path), "--resolution", "32"]) == 2
    bad_target = _cfg(tmp_path, {"target": [0.0, 3.0]})
    assert main(["weights", "--config", bad_target, "--out", str(tmp_path)]) == 2


def test_over_cap_message_names_resolution(tmp_path, capsys):
    main(["cgo", "--config", _cfg(tmp_path, {"taus": [100]}), "--out", str(tmp_path),
          "--resolution", "32"])
    assert "--resolution >=" in capsys.readouterr().err


def test_verify_pass_and_fail(tmp_path):
    ok = _cfg(tmp_path, {"verify": {"criteria": [7]}}, "ok.json")
    assert main(["verify", "--config", ok, "--out", str(tmp_path / "ok")]) == 0
    report = json.loads((tmp_path / "ok" / "verify" / "report.json").read_text())
    assert report["all_passed"] and report["results"][0]["number"] == 7
    text = (tmp_path / "ok" / "verify" / "report.txt").read_text()
    assert text.startswith("[PASS] criterion 7")
    bad = _cfg(tmp_path, {"verify": {"criteria": [3], "overrides": {"3": {"resolution": 32}}}}, "bad.json")
    assert main(["verify", "--config", bad, "--out", str(tmp_path / "bad")]) == 1
    text = (tmp_path / "bad" / "verify" / "report.txt").read_text()
    assert text.startswith("[FAIL] criterion 3")


def test_load_config_precedence():
    cfg = load_config(resolution=40, seed=7, tau_max=12.0)
    assert cfg["domain"]["resolution"] == 40 and cfg["seed"] == 7 and cfg["tau_max"] == 12.0
    with pytest.raises(ConfigError):
        load_config(resolution=4)
