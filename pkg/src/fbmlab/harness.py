"""Experiment configuration, dispatch, verdicts and report emission."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import bounds as bd
from . import kernel as kn
from . import pathstats as ps
from . import sampler as sp

log = logging.getLogger("fbmlab")

SCHEMA_VERSION = 1
EXPERIMENTS = ("verify-kernel", "verify-covariance", "verify-bounds", "mc-modulus", "mc-lil",
               "mc-nondiff", "mc-doublepoint", "mc-mgf", "estimate-hurst")

# Per-experiment defaults; a JSON config overrides these and CLI flags
# override the config.
DEFAULTS: dict[str, dict] = {
    "verify-kernel": {"H_list": [0.25, 0.4, 0.5, 0.6, 0.75], "n_cells": 64, "n_paths": 1,
                      "params": {"n_pairs": 20, "n_tuples": 50, "tol": 1e-6}},
    "verify-covariance": {"H_list": [0.3, 0.5, 0.7], "n_cells": 256, "n_paths": 20000,
                          "params": {"cov_se": 4.0, "incr_se": 3.0, "n_incr_pairs": 10}},
    "verify-bounds": {"H_list": [0.3, 0.5, 0.7], "n_cells": 1, "n_paths": 1,
                      "params": {"eta": [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0]}},
    "mc-modulus": {"H_list": [0.5, 0.25], "n_cells": 16384, "n_paths": 200,
                   "params": {"log2_deltas": [6, 7, 8, 9, 10], "target_log2_delta": 10,
                              "mean_range": [0.85, 1.05], "statistic": "dyadic", "max_inversions": 1}},
    "mc-lil": {"H_list": [0.5, 0.3], "n_cells": 1, "n_paths": 400,
               "params": {"theta": 0.6, "n_range": [5, 40], "per_step": 8, "median_range": [0.4, 1.1]}},
    "mc-nondiff": {"H_list": [0.3, 0.5], "n_cells": 16384, "n_paths": 100,
                   "params": {"k": 32, "slope_tol": 0.15}},
    "mc-doublepoint": {"H_list": [0.4], "n_cells": 8192, "n_paths": 200,
                       "params": {"dims": [3, 8], "resolutions": [4096, 8192], "I": [0.1, 0.45],
                                  "J": [0.55, 0.9], "min_ratio": 5.0, "stability": 0.2}},
    "mc-mgf": {"H_list": [0.3, 0.5, 0.7], "n_cells": 512, "n_paths": 4000,
               "params": {"alphas": [0.5, 1.0, 2.0], "se_allowance": 3.0}},
    "estimate-hurst": {"H_list": [0.25, 0.5, 0.75], "n_cells": 4096, "n_paths": 100,
                       "params": {"tol": 0.05}},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    experiment: str
    H_list: list = field(default_factory=list)
    horizon: float = 1.0
    n_cells: int = 0
    n_paths: int = 1
    root_seed: int = 20240601
    stream_id: int = 0
    workers: int = 0
    out_dir: str = "fbmlab-out"
    ch_mode: str = "literal"
    renormalize: bool = True
    params: dict = field(default_factory=dict)

    @classmethod
    def build(cls, experiment: str, config: dict | None = None, overrides: dict | None = None) -> "ExperimentConfig":
        """Merge defaults, config file values and flag overrides (in that order)."""
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        merged = copy.deepcopy(DEFAULTS[experiment])
        for layer in (config or {}, overrides or {}):
            layer = dict(layer)
            if "experiment" in layer and layer.pop("experiment") != experiment:
                raise ConfigError("config names a different experiment")
            if "seed" in layer:
                seed = layer.pop("seed")
                if isinstance(seed, dict):
                    layer.update({k: seed[k] for k in ("root_seed", "stream_id") if k in seed})
                else:
                    layer["root_seed"] = seed
            params = layer.pop("params", None)
            unknown = set(layer) - {f for f in cls.__dataclass_fields__ if f != "params"}
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            merged.update({k: v for k, v in layer.items() if v is not None})
            if params:
                merged.setdefault("params", {}).update(params)
        cfg = cls(experiment=experiment, **merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.H_list = [kn.HurstParameter(h).value for h in self.H_list]
            sp.SeedSpec(self.root_seed, self.stream_id)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.H_list:
            raise ConfigError("H_list must not be empty")
        if not (isinstance(self.horizon, (int, float)) and self.horizon > 0):
            raise ConfigError("horizon must be positive")
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ConfigError("n_cells must be a positive integer")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigError("n_paths must be a positive integer")
        if int(self.workers) != self.workers or self.workers < 0:
            raise ConfigError("workers must be a non-negative integer")
        if self.ch_mode not in bd.CH_MODES:
            raise ConfigError(f"ch_mode must be one of {bd.CH_MODES}")
        self.n_cells, self.n_paths, self.workers = int(self.n_cells), int(self.n_paths), int(self.workers)

    @property
    def seed(self) -> sp.SeedSpec:
        return sp.SeedSpec(self.root_seed, self.stream_id)

    @property
    def worker_count(self) -> int:
        return self.workers or (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Verdict:
    name: str
    value: float
    threshold: object
    comparator: str
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _check(name: str, value: float, comparator: str, threshold) -> Verdict:
    value = float(value)
    if comparator == "<=":
        ok = value <= threshold
    elif comparator == ">=":
        ok = value >= threshold
    elif comparator == ">":
        ok = value > threshold
    elif comparator == "<":
        ok = value < threshold
    elif comparator == "in":
        ok = threshold[0] <= value <= threshold[1]
    else:
        raise ValueError(comparator)
    return Verdict(name, value, threshold, comparator, bool(ok and math.isfinite(value)))


class _Run:
    """Collects payload, verdicts and curves for one experiment."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.p = cfg.params
        self.payload: dict = {}
        self.verdicts: list[Verdict] = []
        self.curves: dict[str, dict] = {}

    def check(self, *args) -> Verdict:
        v = _check(*args)
        self.verdicts.append(v)
        return v

    def curve(self, name: str, columns: list[str], rows: list) -> None:
        self.curves[name] = {"columns": list(columns), "rows": [[_num(x) for x in r] for r in rows]}

    def grid(self, n: int | None = None) -> kn.TimeGrid:
        return kn.TimeGrid(self.cfg.horizon, n or self.cfg.n_cells)

    def ensemble(self, H, n_paths=None, *, grid=None, dim=1, method="volterra", stream_offset=0):
        seed = sp.SeedSpec(self.cfg.root_seed, (self.cfg.stream_id + stream_offset) & ((1 << 64) - 1))
        return sp.sample_ensemble(H, grid or self.grid(), n_paths or self.cfg.n_paths, dim=dim, seed=seed,
                                  method=method, renormalize=self.cfg.renormalize,
                                  workers=self.cfg.worker_count)

    def rng(self, tag: int) -> np.random.Generator:
        # deterministic auxiliary draws (test points), separated from path streams
        return sp.SeedSpec(self.cfg.root_seed, (1 << 63) | tag).generator()


def _htag(H: float) -> str:
    return f"H{H:g}"


# ---------------------------------------------------------------------------
# experiments


def _verify_kernel(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    tol = p["tol"]
    q = kn.QuadratureConfig()
    rows = []
    for h in cfg.H_list:
        g = run.rng(int(h * 1e6))
        worst = 0.0
        for _ in range(p["n_pairs"]):
            t, u = 4.0 * (1.0 - g.random(2))
            a, b = kn.kernel_l2_inner(h, t, u, q), kn.covariance(h, t, u)
            worst = max(worst, abs(a - b) / abs(b))
        run.check(f"kernel_identity_{_htag(h)}", worst, "<=", tol)
        worst_cm = 0.0
        worst_self = 0.0
        for _ in range(p["n_tuples"]):
            u, r, s, t = np.sort(4.0 * g.random(4))
            norm = (t - s) ** h * (r - u) ** h
            cm = sp.cameron_martin_inner(h, (s, t), (u, r), q)
            worst_cm = max(worst_cm, abs(cm / norm - kn.increment_covariance(h, u, r, s, t)))
            self_cm = sp.cameron_martin_inner(h, (s, t), (s, t), q)
            worst_self = max(worst_self, abs(self_cm / (t - s) ** (2 * h) - 1))
        run.check(f"cameron_martin_self_{_htag(h)}", worst_self, "<=", tol)
        run.check(f"cameron_martin_vs_covariance_{_htag(h)}", worst_cm, "<=", tol)
        c_hat = kn.estimate_kernel_constant(h, cfg.horizon)
        ts = cfg.horizon * (1 - g.random(50))
        ss = ts * g.random(50)
        ss = np.where(ss > 0, ss, ts / 2)
        excess = max(kn.kernel(h, t, s) / kn.kernel_upper_bound(h, t, s, c_hat) for t, s in zip(ts, ss))
        run.check(f"kernel_upper_bound_{_htag(h)}", excess, "<=", 1.0 + 1e-9)
        rows.append([h, worst, worst_self, worst_cm, c_hat])
    run.payload["kernel"] = {"columns": ["H", "identity_rel_err", "cm_self_rel_err", "cm_cov_abs_err", "c_hat"],
                             "rows": rows}


def _cov_and_se(X: np.ndarray):
    n = X.shape[0]
    C = X.T @ X / n
    M2 = (X * X).T @ (X * X) / n
    return C, np.sqrt(np.maximum(M2 - C * C, 0.0) / n)


def _verify_covariance(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    grid = run.grid()
    out = {}
    for h in cfg.H_list:
        vol = run.ensemble(h).component(0)
        cho = run.ensemble(h, method="cholesky", stream_offset=1 << 48).component(0)
        Cv, sv = _cov_and_se(vol[:, 1:])
        Cc, sc = _cov_and_se(cho[:, 1:])
        z = np.abs(Cv - Cc) / np.sqrt(sv ** 2 + sc ** 2)
        run.check(f"volterra_vs_cholesky_cov_{_htag(h)}", z.max(), "<=", p["cov_se"])
        g = run.rng(7 + int(h * 1e6))
        pairs = []
        while len(pairs) < p["n_incr_pairs"]:
            a, b = sorted(g.integers(0, grid.n_cells + 1, 2))
            if a != b:
                pairs.append((int(a), int(b)))
        worst = {}
        for name, X in (("volterra", vol), ("cholesky", cho)):
            zs = []
            for a, b in pairs:
                d2 = (X[:, b] - X[:, a]) ** 2
                m, se = ps.mean_se(d2)
                target = (grid.points[b] - grid.points[a]) ** (2 * h)
                zs.append(abs(m - target) / se)
            worst[name] = max(zs)
        # the criterion concerns the Volterra ensembles; the oracle's own z is reported
        run.check(f"increment_variance_volterra_{_htag(h)}", worst["volterra"], "<=", p["incr_se"])
        R = kn.covariance_matrix(h, grid.points[1:])
        out[_htag(h)] = {"max_cov_z": float(z.max()), "max_abs_cov_diff": float(np.abs(Cv - Cc).max()),
                         "volterra_max_abs_err_vs_R": float(np.abs(Cv - R).max()),
                         "cholesky_max_abs_err_vs_R": float(np.abs(Cc - R).max()),
                         "increment_pairs": pairs, "increment_max_z": worst, "n_paths": cfg.n_paths}
    run.payload["covariance"] = out


def _verify_bounds(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    e = math.exp(-1)
    prm = bd.CapacityParams(p=2, r=1)
    v = bd.increment_capacity_bound(0.5, prm, 0, 1, 2)
    run.check("increment_bound_golden", abs(v - 2 * e), "<=", 1e-12)
    ratios = []
    for h in (0.1, 0.3, 0.5, 0.7, 0.9):
        for eta in p["eta"]:
            one = bd.sup_capacity_bound(h, 0, 1, eta, "one_sided")
            two = bd.sup_capacity_bound(h, 0, 1, eta, "two_sided")
            ratios.append(abs(two / one - math.sqrt(2)))
    run.check("sup_two_over_one_minus_sqrt2", max(ratios), "<=", 0.0)
    gam = [bd.gamma_factor(h) == (1.0 if h <= 0.5 else 1.5) for h in np.linspace(0.01, 0.99, 99)]
    run.check("gamma_factor_mismatches", gam.count(False), "<=", 0)
    ch = [bd.ch_constant(h, "literal") for h in np.linspace(0.01, 0.99, 99)]
    run.check("literal_CH_max_abs_minus_1", max(abs(c - 1) for c in ch), "<=", 0.0)
    mode = {"ch_mode": cfg.ch_mode}
    reports = [bd.report("increment", v, H=0.5, p=2, r=1, s=0, t=1, eta=2).to_dict(),
               bd.report("cap_prob_factor", bd.cap_prob_factor(2, prm, 0.5, cfg.ch_mode), mode,
                         H=0.5, p=2, r=1, N=2, M_r=1, c=1).to_dict()]
    for h in cfg.H_list:
        rows = []
        for eta in p["eta"]:
            rows.append([eta, bd.sup_capacity_bound(h, 0, 1, eta, "one_sided"),
                         bd.sup_capacity_bound(h, 0, 1, eta, "two_sided")])
            reports.append(bd.report("sup1", rows[-1][1], H=h, s=0, t=1, eta=eta).to_dict())
            reports.append(bd.report("sup2", rows[-1][2], H=h, s=0, t=1, eta=eta).to_dict())
        run.curve(f"supbound_{_htag(h)}", ["eta", "bound_one_sided", "bound_two_sided"], rows)
        reports.append(bd.report("mgf_sup", bd.mgf_sup_bound(h, 1.0, 0, 1), H=h, alpha=1.0, s=0, t=1).to_dict())
        reports.append(bd.report("cap_prob_factor", bd.cap_prob_factor(4, prm, h, cfg.ch_mode), mode,
                                 H=h, p=2, r=1, N=4, M_r=1, c=1).to_dict())
    run.payload["bounds"] = reports


def _mc_modulus(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    deltas = [2.0 ** -k * cfg.horizon for k in p["log2_deltas"]]
    target = 2.0 ** -p["target_log2_delta"] * cfg.horizon
    stat = p["statistic"]
    out = {}
    for idx, h in enumerate(cfg.H_list):
        ens = run.ensemble(h, stream_offset=idx << 40)
        rep = ps.modulus_ratio_curve(ens, deltas)
        del ens
        out[_htag(h)] = rep.to_dict()
        s = rep.summary(stat)
        if h == 0.5:
            k = int(np.argmin(np.abs(rep.deltas - target)))
            run.check(f"modulus_mean_ratio_{stat}_{_htag(h)}_delta{rep.deltas[k]:g}", s["mean"][k], "in",
                      list(p["mean_range"]))
        elif h < 0.5:
            # ladder ordered by decreasing delta: the curve should rise toward 1
            means = s["mean"]
            inversions = int(np.sum(np.diff(means) < 0))
            run.check(f"modulus_trend_inversions_{stat}_{_htag(h)}", inversions, "<=", p["max_inversions"])
            run.check(f"modulus_trend_net_rise_{stat}_{_htag(h)}", means[-1] - means[0], ">", 0.0)
            run.check(f"modulus_trend_gap_to_one_shrinks_{stat}_{_htag(h)}",
                      abs(1 - means[-1]) - abs(1 - means[0]), "<", 0.0)
        run.curve(f"modulus_{_htag(h)}", ["delta", "stat_mean", "stat_q95", "envelope"],
                  [[r["delta"], r["stat_mean"], r["stat_q95"], r["envelope"]] for r in rep.curve_rows(stat)])
        for name in ("pairs", "dyadic"):
            sm = rep.summary(name)
            run.curve(f"modulus_ratio_{name}_{_htag(h)}", ["x", "stat_mean", "stat_q95", "n_samples", "se"],
                      [[d, m, q, rep.n_samples, e] for d, m, q, e in zip(rep.deltas, sm["mean"], sm["q95"], sm["se"])])
    run.payload["modulus"] = out


def _mc_lil(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    lo, hi = p["n_range"]
    grid = ps.lil_grid(p["theta"], lo, hi, p["per_step"])
    out = {}
    for idx, h in enumerate(cfg.H_list):
        ens = run.ensemble(h, grid=grid, stream_offset=idx << 40)
        rep = ps.lil_ratio(ens, p["theta"], (lo, hi))
        out[_htag(h)] = rep.to_dict()
        if h == 0.5:
            run.check(f"lil_median_{_htag(h)}", rep.median(), "in", list(p["median_range"]))
        theta_n = p["theta"] ** np.arange(lo, hi + 1, dtype=float)
        idxs = np.array([int(np.argmin(np.abs(grid.points - t))) for t in theta_n])
        vals = ens.component(0)[:, idxs] / np.array([bd.lil_envelope(h, t) for t in theta_n])
        m, se = ps.mean_se(vals)
        run.curve(f"lil_{_htag(h)}", ["x", "stat_mean", "stat_q95", "n_samples", "se", "envelope"],
                  [[t, a, b, ens.n_paths, e, bd.lil_envelope(h, t)]
                   for t, a, b, e in zip(theta_n, m, np.quantile(vals, 0.95, axis=0), se)])
    run.payload["lil"] = out
    run.payload["lil_grid"] = {"theta": p["theta"], "n_range": [lo, hi], "per_step": p["per_step"],
                               "n_cells": grid.n_cells}


def _mc_nondiff(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    out = {}
    for idx, h in enumerate(cfg.H_list):
        ens = run.ensemble(h, stream_offset=idx << 40)
        rep = ps.min_max_diff_quotient(ens, p["k"])
        del ens
        out[_htag(h)] = rep.to_dict()
        med = rep.medians()
        res = list(rep.resolutions)
        if 256 in res and 4096 in res:
            run.check(f"nondiff_growth_{_htag(h)}", med[res.index(4096)] / med[res.index(256)], ">", 1.0)
        run.check(f"nondiff_slope_{_htag(h)}", rep.slope(), "in", [1 - h - p["slope_tol"], 1 - h + p["slope_tol"]])
        run.curve(f"nondiff_{_htag(h)}", ["x", "stat_mean", "stat_q95", "n_samples", "se"],
                  [[r, m, q, rep.n_samples, s] for r, m, q, s in
                   zip(res, med, np.quantile(rep.per_path, 0.95, axis=0), out[_htag(h)]["median_se"])])
    run.payload["nondiff"] = out


def _mc_doublepoint(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    out = {}
    for idx, h in enumerate(cfg.H_list):
        thr = bd.double_point_dimension_threshold(h)
        meds = {}
        for d in p["dims"]:
            ens = run.ensemble(h, dim=d, stream_offset=(idx << 40) + (d << 36))
            rep = ps.double_point_study(ens, p["I"], p["J"], p["resolutions"])
            del ens
            out[f"{_htag(h)}_d{d}"] = rep.to_dict()
            meds[d] = rep.medians()
            run.curve(f"doublepoint_{_htag(h)}_d{d}", ["x", "stat_mean", "stat_q95", "n_samples", "se"],
                      [[r, m, q, rep.n_samples, s] for r, m, q, s in
                       zip(rep.resolutions, meds[d], np.quantile(rep.per_path, 0.95, axis=0),
                           out[f"{_htag(h)}_d{d}"]["median_se"])])
        hi_d, lo_d = max(p["dims"]), min(p["dims"])
        run.check(f"doublepoint_ratio_d{hi_d}_over_d{lo_d}_{_htag(h)}", meds[hi_d][0] / meds[lo_d][0], ">=",
                  p["min_ratio"])
        run.check(f"doublepoint_stability_d{hi_d}_{_htag(h)}", abs(meds[hi_d][-1] / meds[hi_d][0] - 1), "<=",
                  p["stability"])
        run.check(f"doublepoint_shrinks_d{lo_d}_{_htag(h)}", meds[lo_d][-1] / meds[lo_d][0], "<", 1.0)
        out[f"{_htag(h)}_threshold"] = thr
    run.payload["doublepoint"] = out


def _mc_mgf(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    out = {}
    for idx, h in enumerate(cfg.H_list):
        ens = run.ensemble(h, stream_offset=idx << 40)
        rows = []
        for a in p["alphas"]:
            est = ps.empirical_sup_mgf(ens, a, 0.0, cfg.horizon)
            bound = bd.mgf_sup_bound(h, a, 0.0, cfg.horizon)
            run.check(f"mgf_{_htag(h)}_alpha{a:g}", est.value - p["se_allowance"] * est.se, "<=", bound)
            rows.append([a, est.value, est.se, est.n_samples, bound])
        out[_htag(h)] = {"columns": ["alpha", "empirical", "se", "n_samples", "bound"], "rows": rows}
        run.curve(f"mgf_{_htag(h)}", ["x", "stat_mean", "se", "n_samples", "bound"], rows)
    run.payload["mgf"] = out


def _estimate_hurst(run: _Run) -> None:
    cfg, p = run.cfg, run.p
    out = {}
    for idx, h in enumerate(cfg.H_list):
        ens = run.ensemble(h, stream_offset=idx << 40)
        est = ps.hurst_loglog_estimate(ens)
        out[_htag(h)] = est.to_dict()
        run.check(f"hurst_abs_error_{_htag(h)}", abs(est.estimate - h), "<=", p["tol"])
        run.curve(f"hurst_{_htag(h)}", ["x", "stat_mean", "n_samples"],
                  [[d, m, est.n_samples] for d, m in zip(est.deltas, est.mean_max_increment)])
    run.payload["hurst"] = out


_DISPATCH = {
    "verify-kernel": _verify_kernel,
    "verify-covariance": _verify_covariance,
    "verify-bounds": _verify_bounds,
    "mc-modulus": _mc_modulus,
    "mc-lil": _mc_lil,
    "mc-nondiff": _mc_nondiff,
    "mc-doublepoint": _mc_doublepoint,
    "mc-mgf": _mc_mgf,
    "estimate-hurst": _estimate_hurst,
}


# ---------------------------------------------------------------------------
# envelope and output


def _num(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("non-finite value in report")
        return x
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return _num(obj)


@dataclass
class ReportEnvelope:
    config: dict
    payload: dict
    verdicts: list
    curves: dict
    wall_clock_seconds: float = 0.0
    status: str = "ok"
    error: str | None = None
    code_version: str = __version__
    schema_version: int = SCHEMA_VERSION
    rng: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "ok" and all(v["passed"] for v in self.verdicts)

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        d = {"schema_version": self.schema_version, "code_version": self.code_version,
             "experiment": self.config.get("experiment"), "config": self.config, "rng": self.rng,
             "status": self.status, "passed": self.passed, "verdicts": self.verdicts,
             "payload": self.payload, "curves": self.curves}
        if self.error:
            d["error"] = self.error
        if include_wall_clock:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d

    def payload_bytes(self) -> bytes:
        """Canonical serialization without the wall-clock field."""
        return dumps(self.to_dict(include_wall_clock=False)).encode("utf-8")


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_plot_data(report: ReportEnvelope | dict, out_dir: str) -> list[str]:
    """Write one CSV per curve; returns the file names written."""
    curves = report.curves if isinstance(report, ReportEnvelope) else report.get("curves", {})
    if not curves:
        warnings.warn("report contains no curves; no plot data written", stacklevel=2)
        return []
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for name in sorted(curves):
        c = curves[name]
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(c["columns"])
            for row in c["rows"]:
                w.writerow([format(x, ".17g") if isinstance(x, float) else x for x in row])
        names.append(path)
    return names


def execute(cfg: ExperimentConfig) -> ReportEnvelope:
    """Run an experiment in memory, without writing files."""
    run = _Run(cfg)
    t0 = time.perf_counter()
    status, error = "ok", None
    try:
        _DISPATCH[cfg.experiment](run)
    except (kn.QuadratureError, OverflowError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        status, error = "failed", f"{type(exc).__module__}.{type(exc).__name__}: {exc}"
        log.error("experiment %s failed: %s", cfg.experiment, error)
    env = ReportEnvelope(config=_jsonable(cfg.to_dict()), payload=_jsonable(run.payload),
                         verdicts=[v.to_dict() for v in run.verdicts], curves=run.curves,
                         wall_clock_seconds=time.perf_counter() - t0, status=status, error=error,
                         rng={"generator": sp.GENERATOR_NAME, "root_seed": cfg.root_seed,
                              "base_stream_id": cfg.stream_id, "stream_policy": sp.STREAM_POLICY})
    return env


def run(cfg: ExperimentConfig) -> ReportEnvelope:
    """Run an experiment and write ``report.json`` plus curve CSVs to ``cfg.out_dir``."""
    env = execute(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(env.to_dict()))
    if env.curves:
        emit_plot_data(env, cfg.out_dir)
    return env


def exit_status(env: ReportEnvelope) -> int:
    if env.status != "ok":
        return 2
    return 0 if env.passed else 1
