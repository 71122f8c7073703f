"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Monte Carlo criteria run the harness experiments at their default
configuration, so the numbers here are the ones the CLI reports.
"""
import math
import time

import numpy as np
import pytest

from fbmlab import bounds as bd
from fbmlab import harness as hs
from fbmlab import kernel as kn
from fbmlab import sampler as sp

HURSTS = (0.25, 0.4, 0.5, 0.6, 0.75)


def _run(experiment, **overrides):
    t0 = time.perf_counter()
    env = hs.execute(hs.ExperimentConfig.build(experiment, overrides=overrides))
    return env, time.perf_counter() - t0


def _verdicts(env, prefix=""):
    return [v for v in env.verdicts if v["name"].startswith(prefix)]


def _fmt(vs):
    return "; ".join(f"{v['name']}={v['value']:.4g}" for v in vs)


def test_criterion_01_kernel_identity(criterion_line):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = {}
    for h in HURSTS:
        errs = []
        for _ in range(20):
            t, u = 4.0 * (1.0 - rng.random(2))
            ref = kn.covariance(h, t, u)
            errs.append(abs(kn.kernel_l2_inner(h, t, u) - ref) / abs(ref))
        worst[h] = max(errs)
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-6 and secs < 60
    criterion_line(1, ok, f"max rel err {max(worst.values()):.2e} (tol 1e-6), {secs:.1f}s (limit 60s)")
    assert max(worst.values()) <= 1e-6, worst
    assert secs < 60


def test_criterion_02_law_oracle(criterion_line):
    env, secs = _run("verify-covariance")
    cov = _verdicts(env, "volterra_vs_cholesky_cov")
    inc = _verdicts(env, "increment_variance_volterra")
    assert env.config["n_cells"] == 256 and env.config["n_paths"] == 20000
    assert env.config["H_list"] == [0.3, 0.5, 0.7] and env.config["renormalize"]
    assert len(cov) == 3 and len(inc) == 3
    assert all(v["threshold"] == 4.0 for v in cov) and all(v["threshold"] == 3.0 for v in inc)
    ok = env.status == "ok" and all(v["passed"] for v in cov + inc) and secs < 300
    criterion_line(2, ok, f"{_fmt(cov + inc)}; {secs:.1f}s (limit 300s)")
    assert ok, env.verdicts


def test_criterion_03_cameron_martin(criterion_line):
    rng = np.random.default_rng(7)
    worst_self = worst_cov = 0.0
    for h in HURSTS:
        for _ in range(50):
            u, r, s, t = np.sort(4.0 * rng.random(4))
            self_cm = sp.cameron_martin_inner(h, (s, t), (s, t))
            worst_self = max(worst_self, abs(self_cm / (t - s) ** (2 * h) - 1))
            norm = (t - s) ** h * (r - u) ** h
            cm = sp.cameron_martin_inner(h, (s, t), (u, r))
            worst_cov = max(worst_cov, abs(cm / norm - kn.increment_covariance(h, u, r, s, t)))
    ok = worst_self <= 1e-6 and worst_cov <= 1e-6
    criterion_line(3, ok, f"self rel err {worst_self:.2e}, vs increment covariance {worst_cov:.2e} (tol 1e-6)")
    assert worst_self <= 1e-6
    assert worst_cov <= 1e-6


def test_criterion_04_bound_golden_values(criterion_line):
    t0 = time.perf_counter()
    v = bd.increment_capacity_bound(0.5, bd.CapacityParams(p=2, r=1), 0, 1, 2)
    golden = abs(v - 2 * math.exp(-1)) <= 1e-12
    ratio = all(bd.sup_capacity_bound(h, s, t, eta, "two_sided") == math.sqrt(2) * bd.sup_capacity_bound(
        h, s, t, eta, "one_sided") for h in np.linspace(0.05, 0.95, 19) for s, t in ((0, 1), (0.3, 2.5))
        for eta in (0.1, 1.0, 5.0))
    gamma = all(bd.gamma_factor(h) == (1.0 if h <= 0.5 else 1.5) for h in np.linspace(0.01, 0.99, 99))
    literal = all(bd.ch_constant(h, "literal") == 1.0 for h in np.linspace(0.01, 0.99, 99))
    env, _ = _run("verify-bounds")
    secs = time.perf_counter() - t0
    ok = golden and ratio and gamma and literal and env.passed and secs < 1
    criterion_line(4, ok, f"golden={golden} sqrt2={ratio} gamma={gamma} C_H=1:{literal}; {secs:.2f}s (limit 1s)")
    assert golden and ratio and gamma and literal and env.passed
    assert secs < 1


def test_criterion_05_mgf_inequality(criterion_line):
    env, secs = _run("mc-mgf")
    vs = _verdicts(env, "mgf_")
    assert len(vs) == 9 and env.config["params"]["se_allowance"] == 3.0
    ok = env.status == "ok" and all(v["passed"] for v in vs) and secs < 180
    worst = max(v["value"] / v["threshold"] for v in vs)
    criterion_line(5, ok, f"9 (H, alpha) cells, max (mean - 3 SE)/bound {worst:.3f}; {secs:.1f}s (limit 180s)")
    assert ok, env.verdicts


def test_criterion_06_modulus(criterion_line):
    env, secs = _run("mc-modulus")
    assert env.config["n_cells"] == 2 ** 14 and env.config["n_paths"] == 200
    vs = env.verdicts
    ok = env.status == "ok" and len(vs) == 4 and all(v["passed"] for v in vs) and secs < 600
    criterion_line(6, ok, f"{_fmt(vs)}; {secs:.1f}s (limit 600s)")
    assert ok, env.verdicts


def test_criterion_07_hurst(criterion_line):
    env, secs = _run("estimate-hurst")
    assert env.config["n_cells"] == 2 ** 12 and env.config["n_paths"] == 100
    vs = env.verdicts
    ok = env.status == "ok" and len(vs) == 3 and all(v["passed"] for v in vs) and secs < 300
    criterion_line(7, ok, f"{_fmt(vs)} (tol 0.05); {secs:.1f}s (limit 300s)")
    assert ok, env.verdicts


def test_criterion_08_nondifferentiability(criterion_line):
    env, secs = _run("mc-nondiff")
    for h in ("H0.3", "H0.5"):
        assert env.payload["nondiff"][h]["resolutions"] == [2 ** k for k in range(8, 15)]
    vs = _verdicts(env, "nondiff_slope")
    ok = env.status == "ok" and len(vs) == 2 and all(v["passed"] for v in env.verdicts) and secs < 600
    criterion_line(8, ok, f"{_fmt(vs)} (target 1-H +/- 0.15); {secs:.1f}s (limit 600s)")
    assert ok, env.verdicts


def test_criterion_09_double_points(criterion_line):
    env, secs = _run("mc-doublepoint")
    assert env.config["params"]["resolutions"] == [4096, 8192] and env.config["params"]["dims"] == [3, 8]
    assert env.payload["doublepoint"]["H0.4_threshold"] == 8
    vs = env.verdicts
    ok = env.status == "ok" and len(vs) == 3 and all(v["passed"] for v in vs) and secs < 900
    criterion_line(9, ok, f"{_fmt(vs)}; {secs:.1f}s (limit 900s)")
    assert ok, env.verdicts


@pytest.mark.parametrize("experiment", ["mc-mgf", "verify-bounds"])
def test_criterion_10_determinism(criterion_line, experiment):
    a, _ = _run(experiment)
    b, _ = _run(experiment)
    same = a.payload_bytes() == b.payload_bytes()
    criterion_line(10, same, f"{experiment}: payload bytes identical across two runs")
    assert same
