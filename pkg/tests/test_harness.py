import csv
import json
import os

import pytest

from fbmlab import cli
from fbmlab import harness as hs

SMALL_MGF = {"H_list": [0.3, 0.7], "n_cells": 64, "n_paths": 300}


def _small(experiment, **kw):
    cfg = dict(SMALL_MGF) if experiment == "mc-mgf" else {}
    cfg.update(kw)
    return hs.ExperimentConfig.build(experiment, cfg)


# --- configuration -----------------------------------------------------------


def test_config_precedence_flag_over_file_over_default():
    cfg = hs.ExperimentConfig.build("mc-mgf", {"n_paths": 10, "root_seed": 5, "params": {"alphas": [1.0]}},
                                    {"root_seed": 9})
    assert cfg.n_paths == 10 and cfg.root_seed == 9
    assert cfg.n_cells == hs.DEFAULTS["mc-mgf"]["n_cells"]
    assert cfg.params["alphas"] == [1.0] and cfg.params["se_allowance"] == 3.0
    assert hs.ExperimentConfig.build("mc-mgf", {"seed": {"root_seed": 3, "stream_id": 4}}).seed.stream_id == 4


@pytest.mark.parametrize("bad", [{"n_cells": 0}, {"n_paths": -1}, {"H_list": [1.2]}, {"H_list": []},
                                 {"ch_mode": "other"}, {"bogus": 1}, {"experiment": "mc-lil"},
                                 {"workers": -2}, {"horizon": 0}])
def test_config_validation(bad):
    with pytest.raises(hs.ConfigError):
        hs.ExperimentConfig.build("mc-mgf", bad)


def test_unknown_experiment():
    with pytest.raises(hs.ConfigError):
        hs.ExperimentConfig.build("mc-everything")


def test_cli_malformed_config_writes_nothing(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n_cells": 0}))
    out = tmp_path / "out"
    rc = cli.main(["mc-mgf", "--config", str(conf), "--out", str(out)])
    assert rc != 0 and not out.exists()
    assert "n_cells" in capsys.readouterr().err


def test_cli_flags_override_config(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({**SMALL_MGF, "root_seed": 1, "out_dir": str(tmp_path / "ignored")}))
    out = tmp_path / "out"
    rc = cli.main(["mc-mgf", "--config", str(conf), "--seed", "77", "--workers", "2", "--out", str(out),
                   "--ch-mode", "derived", "--no-renormalize"])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["root_seed"] == 77 and rep["config"]["workers"] == 2
    assert rep["config"]["ch_mode"] == "derived" and rep["config"]["renormalize"] is False
    assert not (tmp_path / "ignored").exists()
    assert "PASS mgf_H0.3_alpha1" in capsys.readouterr().out


# --- envelope ----------------------------------------------------------------


def test_envelope_records_thresholds_and_rng():
    env = hs.execute(_small("mc-mgf"))
    d = env.to_dict()
    assert d["schema_version"] == 1 and d["status"] == "ok" and d["passed"]
    assert d["rng"]["generator"] and d["rng"]["root_seed"] == env.config["root_seed"]
    assert d["rng"]["stream_policy"]
    assert all({"name", "value", "threshold", "comparator", "passed"} <= set(v) for v in d["verdicts"])
    assert "wall_clock_seconds" in d and "wall_clock_seconds" not in env.to_dict(include_wall_clock=False)


def test_failing_verdict_gives_nonzero_exit():
    env = hs.execute(hs.ExperimentConfig.build("estimate-hurst", {"H_list": [0.3], "n_cells": 512,
                                                                   "n_paths": 50, "params": {"tol": 1e-9}}))
    assert env.status == "ok" and not env.passed
    assert hs.exit_status(env) == 1


def test_overflow_surfaces_with_failed_marker(tmp_path):
    cfg = _small("mc-mgf", params={"alphas": [1.0, 1000.0]}, out_dir=str(tmp_path))
    env = hs.run(cfg)
    assert env.status == "failed" and hs.exit_status(env) == 2
    assert "OverflowError" in env.error and "1000" in env.error
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "failed" and not rep["passed"]
    # verdicts computed before the failure are flushed
    assert any(v["name"] == "mgf_H0.3_alpha1" for v in rep["verdicts"])


# --- plot data ---------------------------------------------------------------


def _read_csv(path):
    raw = open(path, "rb").read()
    assert b"\r" not in raw
    return list(csv.reader(raw.decode("utf-8").splitlines()))


def test_emit_plot_data_bounds_schema(tmp_path):
    env = hs.run(hs.ExperimentConfig.build("verify-bounds", {"out_dir": str(tmp_path)}))
    assert env.passed
    rows = _read_csv(tmp_path / "supbound_H0.3.csv")
    assert rows[0] == ["eta", "bound_one_sided", "bound_two_sided"]
    assert len(rows) == 1 + len(hs.DEFAULTS["verify-bounds"]["params"]["eta"])
    assert float(rows[1][2]) == env.curves["supbound_H0.3"]["rows"][0][2]


def test_emit_plot_data_modulus_schema(tmp_path):
    cfg = hs.ExperimentConfig.build("mc-modulus", {"H_list": [0.5], "n_cells": 1024, "n_paths": 5,
                                                   "params": {"log2_deltas": [3, 4, 5], "target_log2_delta": 5},
                                                   "out_dir": str(tmp_path)})
    hs.run(cfg)
    rows = _read_csv(tmp_path / "modulus_H0.5.csv")
    assert rows[0] == ["delta", "stat_mean", "stat_q95", "envelope"]
    assert [float(r[0]) for r in rows[1:]] == [2.0 ** -k for k in (3, 4, 5)]


def test_emit_plot_data_empty_report_warns(tmp_path):
    env = hs.ReportEnvelope(config={"experiment": "mc-mgf"}, payload={}, verdicts=[], curves={})
    with pytest.warns(UserWarning):
        assert hs.emit_plot_data(env, str(tmp_path / "none")) == []
    assert not (tmp_path / "none").exists()


def test_report_rejects_non_finite():
    with pytest.raises(ValueError):
        hs.dumps({"x": float("nan")})


# --- determinism -------------------------------------------------------------


def test_payload_bytes_identical_across_runs_and_workers():
    a = hs.execute(_small("mc-mgf", workers=1))
    b = hs.execute(_small("mc-mgf", workers=1))
    c = hs.execute(_small("mc-mgf", workers=2))
    assert a.payload_bytes() == b.payload_bytes()
    # the config echo differs by the worker count only
    strip = lambda e: json.dumps({**e.to_dict(False), "config": {**e.config, "workers": 0}}, sort_keys=True)
    assert strip(a) == strip(c)


def test_output_files_identical_except_wall_clock(tmp_path, monkeypatch):
    # same relative out_dir so the config echo matches byte for byte
    monkeypatch.chdir(tmp_path)
    outs = []
    for _ in range(2):
        hs.run(_small("mc-mgf", out_dir="out"))
        outs.append({f: (tmp_path / "out" / f).read_bytes() for f in sorted(os.listdir("out"))})
    assert outs[0].keys() == outs[1].keys() and "report.json" in outs[0]
    for f in outs[0]:
        if f == "report.json":
            a, b = (json.loads(o[f]) for o in outs)
            assert a.pop("wall_clock_seconds") >= 0 and b.pop("wall_clock_seconds") >= 0
            assert a == b
        else:
            assert outs[0][f] == outs[1][f]
