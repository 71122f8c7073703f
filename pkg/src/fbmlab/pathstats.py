"""Monte Carlo statistics of sampled fBM paths.

Every report carries sample counts and standard errors.  Ensemble means are
formed with a fixed pairwise tree over the path index so that results do
not depend on how paths were produced or chunked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .bounds import lil_envelope, modulus_envelope
from .kernel import HurstParameter, TimeGrid
from .sampler import Ensemble, PathSample

__all__ = [
    "McEstimate",
    "ModulusReport",
    "LilReport",
    "DiffQuotientReport",
    "DoublePointReport",
    "HurstEstimate",
    "tree_sum",
    "tree_mean",
    "mean_se",
    "modulus_ratio_curve",
    "lil_grid",
    "lil_ratio",
    "min_max_diff_quotient",
    "closest_approach",
    "closest_approach_bruteforce",
    "double_point_study",
    "hurst_loglog_estimate",
    "empirical_sup_mgf",
]

_BOOT_KEY = 0x5EED_B007
_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


# ---------------------------------------------------------------------------
# reductions


def tree_sum(x: np.ndarray) -> np.ndarray:
    """Sum over axis 0 by a fixed pairwise tree (order depends only on length)."""
    a = np.asarray(x, dtype=float)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    while a.shape[0] > 1:
        m = a.shape[0] // 2
        head = a[0:2 * m:2] + a[1:2 * m:2]
        a = np.concatenate([head, a[2 * m:]]) if a.shape[0] % 2 else head
    return a[0]


def tree_mean(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return tree_sum(x) / x.shape[0]


def mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and CLT standard error over axis 0."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    m = tree_mean(x)
    if n < 2:
        return m, np.full(np.shape(m), np.nan)
    var = tree_sum((x - m) ** 2) / (n - 1)
    return m, np.sqrt(var / n)


def _bootstrap(values: np.ndarray, stat, n_boot: int = 400) -> np.ndarray:
    """Deterministic bootstrap replicates of ``stat`` over axis 0."""
    rng = np.random.Generator(np.random.Philox(key=_BOOT_KEY))
    n = values.shape[0]
    return np.array([stat(values[rng.integers(0, n, n)]) for _ in range(n_boot)])


@dataclass(frozen=True)
class McEstimate:
    value: float
    se: float
    n_samples: int
    label: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "value": self.value, "se": self.se, "n_samples": self.n_samples}


def _paths_1d(ens) -> tuple[np.ndarray, TimeGrid]:
    """Stack components as independent scalar paths: shape (paths*dim, n+1)."""
    if isinstance(ens, Ensemble):
        v = ens.values
        return v.reshape(-1, v.shape[-1]), ens.grid
    raise TypeError("expected an Ensemble")


def _require_uniform(grid: TimeGrid) -> None:
    if not grid.uniform:
        raise ValueError("statistic requires a uniform grid")


def _lag(delta: float, dt: float, what: str) -> int:
    w = delta / dt
    wi = int(round(w))
    if abs(w - wi) > 1e-9 * max(1.0, w):
        raise ValueError(f"{what} {delta!r} is not a multiple of the grid spacing {dt!r}")
    return wi


def _quantiles(x: np.ndarray, axis: int = 0) -> dict:
    qs = np.quantile(x, _QUANTILES, axis=axis)
    return {f"q{int(round(100 * p)):02d}": qs[i] for i, p in enumerate(_QUANTILES)}


# ---------------------------------------------------------------------------
# modulus of continuity


def window_range_max(paths: np.ndarray, w: int) -> np.ndarray:
    """max over index pairs with 0 < b - a <= w of |x_b - x_a|, per row.

    Any such pair lies in a window of w+1 consecutive points, where the
    largest difference is the window range, so a sliding max/min is exact.
    """
    mx = maximum_filter1d(paths, w + 1, axis=-1, mode="nearest")
    mn = minimum_filter1d(paths, w + 1, axis=-1, mode="nearest")
    return (mx - mn).max(axis=-1)


def dyadic_block_max(paths: np.ndarray, w: int) -> np.ndarray:
    """max over k of |x_{(k+1)w} - x_{kw}|, the increments over disjoint lag-w blocks."""
    nodes = paths[..., ::w]
    return np.abs(np.diff(nodes, axis=-1)).max(axis=-1)


@dataclass(frozen=True)
class ModulusReport:
    """Ratios of the maximal increment at scale delta to g(delta).

    ``pairs`` uses all grid pairs with t - s <= delta.  ``dyadic`` uses the
    increments over the disjoint blocks [k delta, (k+1) delta], the
    discretization in Levy's construction of the modulus.
    """

    H: float
    deltas: np.ndarray
    envelope: np.ndarray
    pairs: np.ndarray = field(repr=False)
    dyadic: np.ndarray = field(repr=False)
    grid_spacing: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.pairs.shape[0]

    def summary(self, statistic: str = "pairs") -> dict:
        x = getattr(self, statistic)
        m, se = mean_se(x)
        q = _quantiles(x)
        return {"mean": m, "se": se, "median": q["q50"], "q95": q["q95"], "q05": q["q05"]}

    def curve_rows(self, statistic: str = "pairs") -> list[dict]:
        """Raw maximal increments (ratio times envelope) next to g(delta)."""
        raw = getattr(self, statistic) * self.envelope
        m, se = mean_se(raw)
        q95 = np.quantile(raw, 0.95, axis=0)
        return [{"delta": d, "stat_mean": a, "stat_q95": b, "envelope": g, "n_samples": self.n_samples,
                 "se": s} for d, a, b, g, s in zip(self.deltas, m, q95, self.envelope, se)]

    def to_dict(self) -> dict:
        out = {"H": self.H, "deltas": list(map(float, self.deltas)),
               "envelope": list(map(float, self.envelope)), "n_samples": self.n_samples,
               "grid_spacing": self.grid_spacing}
        for name in ("pairs", "dyadic"):
            s = self.summary(name)
            out[name] = {k: list(map(float, v)) for k, v in s.items()}
        return out


def modulus_ratio_curve(ens: Ensemble, deltas) -> ModulusReport:
    """Per-path max increment over scale delta divided by g(delta), for each delta."""
    paths, grid = _paths_1d(ens)
    _require_uniform(grid)
    deltas = np.asarray(sorted(map(float, deltas), reverse=True))
    if deltas.size == 0:
        raise ValueError("empty delta ladder")
    dt = grid.spacing
    if dt > deltas.min() / 8 * (1 + 1e-12):
        raise ValueError("grid spacing must be at most min(delta)/8")
    H = ens.H.value if ens.H is not None else 0.5
    env = np.array([modulus_envelope(H, d / grid.horizon) * grid.horizon ** H for d in deltas])
    pairs = np.empty((paths.shape[0], deltas.size))
    dyad = np.empty_like(pairs)
    for k, d in enumerate(deltas):
        w = _lag(d, dt, "delta")
        pairs[:, k] = window_range_max(paths, w) / env[k]
        dyad[:, k] = dyadic_block_max(paths, w) / env[k]
    return ModulusReport(H, deltas, env, pairs, dyad, dt)


# ---------------------------------------------------------------------------
# law of the iterated logarithm


def lil_grid(theta: float, n_lo: int, n_hi: int, per_step: int = 8) -> TimeGrid:
    """Geometric grid through the ladder points theta**n, n_lo <= n <= n_hi.

    Each ladder step [theta**(n+1), theta**n] is split into ``per_step``
    geometric sub-cells; the first cell is [0, theta**n_hi].
    """
    if not (0 < theta < 1) or n_lo > n_hi:
        raise ValueError("need 0 < theta < 1 and n_lo <= n_hi")
    pts = [0.0]
    for n in range(n_hi, n_lo, -1):
        a, b = theta ** n, theta ** (n - 1)
        pts.extend(a * (b / a) ** (np.arange(per_step) / per_step))
    pts.append(theta ** n_lo)
    return TimeGrid.from_points(np.array(pts))


@dataclass(frozen=True)
class LilReport:
    H: float
    theta: float
    n_range: tuple[int, int]
    per_path: np.ndarray = field(repr=False)
    exploratory: bool = False

    @property
    def n_samples(self) -> int:
        return self.per_path.size

    def median(self) -> float:
        return float(np.median(self.per_path))

    def to_dict(self) -> dict:
        m, se = mean_se(self.per_path)
        med_se = float(np.std(_bootstrap(self.per_path, np.median), ddof=1))
        return {"H": self.H, "theta": self.theta, "n_range": list(self.n_range), "n_samples": self.n_samples,
                "mean": float(m), "se": float(se), "median": self.median(), "median_se": med_se,
                "quantiles": {k: float(v) for k, v in _quantiles(self.per_path).items()},
                "exploratory": self.exploratory}


def lil_ratio(ens: Ensemble, theta: float, n_range: tuple[int, int]) -> LilReport:
    """Per-path max over n of B_{theta^n} / h(theta^n)."""
    paths, grid = _paths_1d(ens)
    n_lo, n_hi = map(int, n_range)
    if not (0 < theta < 1) or n_lo > n_hi:
        raise ValueError("need 0 < theta < 1 and n_lo <= n_hi")
    times = theta ** np.arange(n_lo, n_hi + 1, dtype=float)
    if times[0] >= math.exp(-1):
        raise ValueError("ladder must stay below 1/e")
    idx = np.searchsorted(grid.points, times)
    idx = np.clip(idx, 1, grid.n_cells)
    near = np.where(np.abs(grid.points[idx - 1] - times) < np.abs(grid.points[idx] - times), idx - 1, idx)
    if np.any(np.abs(grid.points[near] - times) > 1e-9 * times):
        raise ValueError("ladder point theta^n not resolved by the grid")
    H = ens.H.value if ens.H is not None else 0.5
    env = np.array([lil_envelope(H, t) for t in times])
    stat = (paths[:, near] / env).max(axis=1)
    return LilReport(H, float(theta), (n_lo, n_hi), stat, exploratory=H > 0.5)


# ---------------------------------------------------------------------------
# non-differentiability


def diff_quotient_stat(paths: np.ndarray, dt: float, w: int) -> np.ndarray:
    """min over t of max over lags 1..w of |x_{t+l} - x_t| / (l dt), per row.

    ``paths`` has shape (m, n+1) or (m, d, n+1); in d dimensions the
    Euclidean norm of the increment is used.
    """
    n = paths.shape[-1] - 1
    T = n - w + 1
    best = np.zeros(paths.shape[:1] + (T,))
    for l in range(1, w + 1):
        inc = paths[..., l:l + T] - paths[..., :T]
        q = np.abs(inc) if paths.ndim == 2 else np.sqrt((inc * inc).sum(axis=1))
        q /= l * dt
        np.maximum(best, q, out=best)
    return best.min(axis=1)


@dataclass(frozen=True)
class DiffQuotientReport:
    H: float
    k: int
    resolutions: np.ndarray
    per_path: np.ndarray = field(repr=False)

    @property
    def n_samples(self) -> int:
        return self.per_path.shape[0]

    def medians(self) -> np.ndarray:
        return np.median(self.per_path, axis=0)

    def slope(self) -> float:
        """Least-squares slope of log median D_n against log n."""
        return float(np.polyfit(np.log(self.resolutions), np.log(self.medians()), 1)[0])

    def slope_se(self) -> float:
        fit = lambda v: np.polyfit(np.log(self.resolutions), np.log(np.median(v, axis=0)), 1)[0]
        return float(np.std(_bootstrap(self.per_path, fit, 200), ddof=1))

    def to_dict(self) -> dict:
        med_se = np.std(_bootstrap(self.per_path, lambda v: np.median(v, axis=0), 200), axis=0, ddof=1)
        return {"H": self.H, "k": self.k, "resolutions": [int(r) for r in self.resolutions],
                "n_samples": self.n_samples, "median": list(map(float, self.medians())),
                "median_se": list(map(float, med_se)), "slope": self.slope(), "slope_se": self.slope_se()}


def min_max_diff_quotient(ens: Ensemble, k: int, resolutions=None) -> DiffQuotientReport:
    """D_n = min_t max_{h <= 1/k} |B_{t+h} - B_t| / h on each resolution n.

    Coarser resolutions are obtained by subsampling the ensemble grid; by
    default every power-of-two coarsening with 1/k >= 8 dt is used.
    """
    _require_uniform(ens.grid)
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    n, T = ens.grid.n_cells, ens.grid.horizon
    if resolutions is None:
        resolutions = []
        m = n
        while k * 8 <= m:
            resolutions.append(m)
            if m % 2:
                break
            m //= 2
    resolutions = np.array(sorted(int(r) for r in resolutions))
    if resolutions.size == 0:
        raise ValueError("k incompatible with grid: need 1/k >= 8 grid spacings")
    out = np.empty((ens.n_paths, resolutions.size))
    for c, m in enumerate(resolutions):
        if n % m:
            raise ValueError(f"resolution {m} does not divide {n}")
        dt = T / m
        if T / k < 8 * dt * (1 - 1e-12):
            raise ValueError(f"k={k} incompatible with resolution {m}: need 1/k >= 8 grid spacings")
        w = _lag(T / k, dt, "1/k")
        vals = ens.values[:, :, :: n // m]
        out[:, c] = diff_quotient_stat(vals[:, 0, :] if ens.dim == 1 else vals, dt, w)
    H = ens.H.value if ens.H is not None else float("nan")
    return DiffQuotientReport(H, int(k), resolutions, out)


# ---------------------------------------------------------------------------
# closest approach between two time intervals


def _interval_index(times: np.ndarray, iv) -> np.ndarray:
    a, b = map(float, iv)
    return np.nonzero((times >= a) & (times <= b))[0]


def _sqdist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # component-by-component accumulation; every caller uses this order so
    # the brute-force and hashed searches produce identical floats
    acc = (X[0] - Y[0]) ** 2
    for c in range(1, X.shape[0]):
        acc += (X[c] - Y[c]) ** 2
    return acc


def _split(path, I, J):
    if isinstance(path, PathSample):
        vals, times = path.values, path.times
    else:
        vals, times = path
        vals = np.atleast_2d(np.asarray(vals, dtype=float))
    if not (I[0] <= I[1] and J[0] <= J[1]):
        raise ValueError("intervals must be ordered")
    if not I[1] < J[0]:
        raise ValueError("intervals must be disjoint with I before J")
    ii, jj = _interval_index(times, I), _interval_index(times, J)
    if ii.size == 0 or jj.size == 0:
        raise ValueError("an interval contains no grid points")
    return vals[:, ii], vals[:, jj]


def closest_approach_bruteforce(path, I, J, chunk: int = 512) -> float:
    """Exact min_{s in I, t in J} |B_s - B_t| over grid points, O(|I||J|)."""
    X, Y = _split(path, I, J)
    best = np.inf
    for a in range(0, X.shape[1], chunk):
        d2 = _sqdist(X[:, a:a + chunk, None], Y[:, None, :])
        best = min(best, float(d2.min()))
    return math.sqrt(best)


def closest_approach(path, I, J, method: str = "hash") -> float:
    """Closest approach of the path restricted to I and to J.

    ``method="hash"`` bounds the answer from a strided subsample, buckets
    the J points on a grid of that size over the first min(d, 3)
    coordinates, and compares each I point with its neighbouring buckets.
    Distances use the same arithmetic as the brute-force search, so both
    methods return the identical value.
    """
    if method == "brute":
        return closest_approach_bruteforce(path, I, J)
    if method != "hash":
        raise ValueError(f"unknown method {method!r}")
    X, Y = _split(path, I, J)
    sx = max(1, X.shape[1] // 64)
    sy = max(1, Y.shape[1] // 64)
    r2 = float(_sqdist(X[:, ::sx, None], Y[:, None, ::sy]).min())
    if r2 == 0.0:
        return 0.0
    m = min(X.shape[0], 3)
    lo = np.minimum(X[:m].min(axis=1), Y[:m].min(axis=1))
    hi = np.maximum(X[:m].max(axis=1), Y[:m].max(axis=1))
    # any cell size >= the distance bound keeps the search exact; the floor
    # keeps the packed int64 cell keys from overflowing
    r = max(math.sqrt(r2) * (1 + 1e-12), float((hi - lo).max()) / 2 ** 19)
    cx = np.floor((X[:m] - lo[:, None]) / r).astype(np.int64)
    cy = np.floor((Y[:m] - lo[:, None]) / r).astype(np.int64)
    span = np.maximum(cx.max(axis=1), cy.max(axis=1)) + 3
    mult = np.cumprod(np.concatenate([[1], span[:-1]]))
    ky = ((cy + 1) * mult[:, None]).sum(axis=0)
    order = np.argsort(ky, kind="stable")
    ky_sorted = ky[order]
    Ys = Y[:, order]
    kx = ((cx + 1) * mult[:, None]).sum(axis=0)
    best = r2
    offsets = np.array(np.meshgrid(*[[-1, 0, 1]] * m, indexing="ij")).reshape(m, -1).T
    for off in offsets:
        key = kx + int((off * mult).sum())
        start = np.searchsorted(ky_sorted, key, side="left")
        stop = np.searchsorted(ky_sorted, key, side="right")
        cnt = stop - start
        hit = np.nonzero(cnt)[0]
        if hit.size == 0:
            continue
        reps = cnt[hit]
        xi = np.repeat(hit, reps)
        base = np.repeat(start[hit] - np.cumsum(reps) + reps, reps)
        yj = base + np.arange(xi.size)
        for a in range(0, xi.size, 1 << 20):
            sl = slice(a, a + (1 << 20))
            d2 = _sqdist(X[:, xi[sl]], Ys[:, yj[sl]])
            best = min(best, float(d2.min()))
    return math.sqrt(best)


@dataclass(frozen=True)
class DoublePointReport:
    H: float
    dim: int
    I: tuple[float, float]
    J: tuple[float, float]
    resolutions: np.ndarray
    per_path: np.ndarray = field(repr=False)

    @property
    def n_samples(self) -> int:
        return self.per_path.shape[0]

    def medians(self) -> np.ndarray:
        return np.median(self.per_path, axis=0)

    def to_dict(self) -> dict:
        med_se = np.std(_bootstrap(self.per_path, lambda v: np.median(v, axis=0), 200), axis=0, ddof=1)
        m, se = mean_se(self.per_path)
        return {"H": self.H, "dim": self.dim, "I": list(self.I), "J": list(self.J),
                "resolutions": [int(r) for r in self.resolutions], "n_samples": self.n_samples,
                "median": list(map(float, self.medians())), "median_se": list(map(float, med_se)),
                "mean": list(map(float, m)), "se": list(map(float, se))}


def double_point_study(ens: Ensemble, I, J, resolutions=None, method: str = "hash") -> DoublePointReport:
    """Closest approach of every path on a ladder of subsampled resolutions."""
    _require_uniform(ens.grid)
    n = ens.grid.n_cells
    resolutions = np.array(sorted(resolutions or [n]))
    out = np.empty((ens.n_paths, resolutions.size))
    for c, m in enumerate(resolutions):
        if n % m:
            raise ValueError(f"resolution {m} does not divide {n}")
        stride = n // m
        times = ens.grid.points[::stride]
        for p in range(ens.n_paths):
            out[p, c] = closest_approach((ens.values[p][:, ::stride], times), I, J, method)
    H = ens.H.value if ens.H is not None else float("nan")
    return DoublePointReport(H, ens.dim, tuple(map(float, I)), tuple(map(float, J)), resolutions, out)


# ---------------------------------------------------------------------------
# Hurst exponent from the scaling of maximal increments


def block_max_increment(paths: np.ndarray, w: int, points_per_delta: int, block_multiple: int) -> np.ndarray:
    """Per-block max increment over pairs with lag <= delta = w grid steps.

    The path is subsampled to ``points_per_delta`` points per delta and cut
    into blocks of length ``block_multiple * delta``.  Returns an array of
    shape (paths, blocks).
    """
    stride = w // points_per_delta
    S = paths[:, ::stride]
    m = points_per_delta
    L = block_multiple * m
    nb = (S.shape[1] - 1) // L
    out = np.empty((S.shape[0], nb))
    for b in range(nb):
        seg = S[:, b * L:(b + 1) * L + 1]
        out[:, b] = window_range_max(seg, m)
    return out


@dataclass(frozen=True)
class HurstEstimate:
    estimate: float
    se: float
    deltas: np.ndarray
    mean_max_increment: np.ndarray
    n_samples: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "deltas": list(map(float, self.deltas)),
                "mean_max_increment": list(map(float, self.mean_max_increment)),
                "n_samples": self.n_samples}


def hurst_loglog_estimate(ens: Ensemble, deltas=None, *, points_per_delta: int = 8,
                          block_multiple: int = 2, n_groups: int = 10) -> HurstEstimate:
    """Slope of log(mean max increment over pairs with lag <= delta) against log delta.

    The max is taken inside blocks of length ``block_multiple * delta`` on a
    grid of ``points_per_delta`` points per delta, and averaged over blocks
    and paths.  Under self-similarity with stationary increments the mean
    is then exactly proportional to delta^H, so the slope carries no
    log-factor or discretization bias.  The standard error is a grouped
    jackknife over paths.
    """
    paths, grid = _paths_1d(ens)
    _require_uniform(grid)
    if paths.shape[0] < 50:
        raise ValueError("hurst_loglog_estimate needs at least 50 paths")
    n, T, dt = grid.n_cells, grid.horizon, grid.spacing
    if deltas is None:
        deltas = []
        d = T / 8
        while d / dt >= points_per_delta - 1e-9:
            deltas.append(d)
            d /= 2
    deltas = np.array(sorted(map(float, deltas), reverse=True))
    if deltas.size < 4 or np.unique(deltas).size != deltas.size:
        raise ValueError("need at least 4 distinct ladder points")
    per_path = np.empty((paths.shape[0], deltas.size))
    for k, d in enumerate(deltas):
        w = _lag(d, dt, "delta")
        if w % points_per_delta:
            raise ValueError(f"delta={d!r} is not resolved by {points_per_delta} points per delta")
        blocks = block_max_increment(paths, w, points_per_delta, block_multiple)
        if blocks.shape[1] == 0:
            raise ValueError(f"delta={d!r} too large for {block_multiple} delta blocks")
        per_path[:, k] = blocks.mean(axis=1)
    logd = np.log(deltas)

    def fit(rows):
        return float(np.polyfit(logd, np.log(tree_mean(rows)), 1)[0])

    est = fit(per_path)
    g = min(n_groups, paths.shape[0])
    groups = np.array_split(np.arange(paths.shape[0]), g)
    loo = np.array([fit(np.delete(per_path, idx, axis=0)) for idx in groups])
    se = float(np.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2)))
    return HurstEstimate(est, se, deltas, tree_mean(per_path), paths.shape[0])


# ---------------------------------------------------------------------------
# moment generating function of the running maximum


def empirical_sup_mgf(ens: Ensemble, alpha: float, s: float = 0.0, t: float | None = None) -> McEstimate:
    """Mean and standard error of exp(alpha * max_{s <= t_j <= t} (B_{t_j} - B_s))."""
    paths, grid = _paths_1d(ens)
    t = grid.horizon if t is None else float(t)
    pts = grid.points
    sel = np.nonzero((pts >= s) & (pts <= t))[0]
    if sel.size == 0 or pts[sel[0]] != s:
        raise ValueError("s must be a grid point and [s, t] must contain grid points")
    M = (paths[:, sel] - paths[:, sel[:1]]).max(axis=1)
    if alpha == 0:
        return McEstimate(1.0, 0.0, M.size, f"alpha={alpha}")
    if alpha * M.max() >= 700:
        raise OverflowError(f"alpha={alpha!r} overflows exp(alpha * max)")
    m, se = mean_se(np.exp(alpha * M))
    return McEstimate(float(m), float(se), M.size, f"alpha={alpha}")
