"""fBM path synthesis from Brownian increments, plus an exact Cholesky oracle.

Volterra synthesis uses one lower-triangular matrix of cell-averaged kernel
values on a shared time grid: B_{t_j} = sum_{i<j} A[j][i] dW_i.  Paths are
generated in fixed-width chunks of per-path random streams, so results do
not depend on how chunks are scheduled across worker threads.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .kernel import (
    HurstParameter,
    QuadratureConfig,
    QuadratureError,
    TimeGrid,
    as_hurst,
    covariance_matrix,
    integrate_singular,
    kernel,
    kernel_gap,
)
from . import kernel as _kernel

__all__ = [
    "SeedSpec",
    "CoefficientMatrix",
    "PathSample",
    "Ensemble",
    "CholeskyFactor",
    "build_coefficient_matrix",
    "cholesky_factor",
    "sample_path_volterra",
    "sample_path_cholesky",
    "sample_ensemble",
    "malliavin_derivative",
    "cameron_martin_inner",
    "write_path_csv",
    "write_ensemble_csv",
]

COMPONENT_STRIDE = 1 << 32
GENERATOR_NAME = "numpy.random.Philox"
STREAM_POLICY = "stream_id = base + path_index + component * 2**32; key = (root_seed << 64) | stream_id"
_MASK64 = (1 << 64) - 1
_BLOCK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class SeedSpec:
    root_seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("root_seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not (0 <= int(v) <= _MASK64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.root_seed << 64) | self.stream_id))

    def child(self, path_index: int, component: int = 0) -> "SeedSpec":
        sid = (self.stream_id + path_index + component * COMPONENT_STRIDE) & _MASK64
        return SeedSpec(self.root_seed, sid)

    def to_dict(self) -> dict:
        return {"root_seed": self.root_seed, "stream_id": self.stream_id}


# ---------------------------------------------------------------------------
# coefficient matrix


@dataclass(frozen=True)
class CoefficientMatrix:
    """Lower-triangular A with row j-1 holding the cell averages for t_j."""

    grid: TimeGrid
    H: HurstParameter
    entries: np.ndarray = field(repr=False)
    row_variance: np.ndarray = field(repr=False)
    renormalized: bool = True
    method: str = "tables"

    @property
    def n(self) -> int:
        return self.grid.n_cells

    @property
    def row_defect(self) -> np.ndarray:
        """sum_i A[j][i]^2 dt_i / t_j^{2H} before any renormalization."""
        t = self.grid.points[1:]
        return self.row_variance / t ** (2 * self.H.value)

    def synthesize(self, increments: np.ndarray) -> np.ndarray:
        """Map Brownian increments of shape (n, m) to fBM values of shape (m, n+1)."""
        inc = np.asarray(increments, dtype=float)
        if inc.shape[0] != self.n:
            raise ValueError("increments must have one row per grid cell")
        out = np.zeros((inc.shape[1], self.n + 1))
        out[:, 1:] = (self.entries @ inc).T
        return out


def _row_blocks(n: int):
    """Consecutive row ranges [j0, j1) holding about _BLOCK_ELEMENTS nodes each."""
    j0 = 1
    while j0 <= n:
        j1, count = j0, 0
        while j1 <= n and (count + j1 + 1 <= _BLOCK_ELEMENTS or j1 == j0):
            count += j1 + 1
            j1 += 1
        yield j0, j1
        j0 = j1


def _fill_tables(h: float, grid: TimeGrid, A: np.ndarray) -> None:
    # Row j needs the primitive of K(t_j, .) at every node t_0..t_j.  Nodes with
    # t_i/t_j <= 1/2 use phi; the rest use psi of the exact complement, so
    # cells near the diagonal never difference two numbers close to phi(1).
    tb = _kernel._tables(h)
    t = grid.points
    n = grid.n_cells
    dt = grid.horizon / n
    for j0, j1 in _row_blocks(n):
        js = np.arange(j0, j1)
        sizes = js + 1
        offs = np.cumsum(sizes) - sizes
        jj = np.repeat(js, sizes)
        ii = np.arange(jj.size) - np.repeat(offs, sizes)
        left = 2 * ii <= jj if grid.uniform else 2 * t[ii] <= t[jj]
        vals = np.empty(jj.size)
        if grid.uniform:
            vals[left] = tb.phi(ii[left] / jj[left])
            vals[~left] = tb.psi((jj[~left] - ii[~left]) / jj[~left])
        else:
            tl, tr = t[jj[left]], t[jj[~left]]
            vals[left] = tb.phi(t[ii[left]] / tl)
            vals[~left] = tb.psi((tr - t[ii[~left]]) / tr)
        for j, off in zip(js, offs):
            v = vals[off:off + j + 1]
            nl = int(np.count_nonzero(left[off:off + j + 1]))
            row = np.empty(j)
            row[:nl - 1] = np.diff(v[:nl])
            if nl <= j:
                row[nl - 1] = (tb.phi_half - v[nl - 1]) + (tb.psi_half - v[nl])
                row[nl:] = v[nl:j] - v[nl + 1:]
            if grid.uniform:
                row *= (j * dt) ** (h + 0.5) / dt
            else:
                row *= t[j] ** (h + 0.5) / np.diff(t[:j + 1])
            A[j - 1, :j] = row


def _fill_quadrature(h: float, grid: TimeGrid, A: np.ndarray, q: QuadratureConfig) -> None:
    t = grid.points
    e = h - 0.5
    for j in range(1, grid.n_cells + 1):
        tj = t[j]
        f = lambda r: kernel(h, tj, r)
        for i in range(j):
            ea = -abs(e) if i == 0 else 0.0
            eb = e if i == j - 1 else 0.0
            try:
                val = integrate_singular(f, t[i], t[i + 1], ea, eb, q)
            except QuadratureError as exc:
                raise QuadratureError(f"cell (j={j}, i={i}): {exc}") from exc
            A[j - 1, i] = val / (t[i + 1] - t[i])


def build_coefficient_matrix(H, grid: TimeGrid, q: QuadratureConfig | None = None, *,
                             renormalize: bool = True, method: str = "tables") -> CoefficientMatrix:
    """Cell-averaged kernel matrix A[j][i] = (1/dt_i) int_{t_i}^{t_{i+1}} K(t_j, r) dr.

    ``method="tables"`` differences the tabulated primitive of K (fast, used
    by default); ``method="quadrature"`` integrates every cell adaptively and
    serves as the reference.  With ``renormalize`` each row is scaled so that
    the discrete variance equals t_j^{2H} exactly.
    """
    hp = as_hurst(H)
    q = q or QuadratureConfig()
    n = grid.n_cells
    A = np.zeros((n, n))
    h = hp.value
    if hp.is_half:
        A[np.tril_indices(n)] = 1.0
        method = "exact"
    elif method == "tables":
        _fill_tables(h, grid, A)
    elif method == "quadrature":
        _fill_quadrature(h, grid, A, q)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(A)) or np.any(A < 0):
        bad = np.argwhere(~np.isfinite(A) | (A < 0))[0]
        raise FloatingPointError(f"invalid coefficient at (j={bad[0] + 1}, i={bad[1]})")
    w = grid.widths
    row_var = (A * A) @ w
    if renormalize and not hp.is_half:
        A *= (grid.points[1:] ** h / np.sqrt(row_var))[:, None]
    A.setflags(write=False)
    return CoefficientMatrix(grid, hp, A, row_var, bool(renormalize), method)


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class PathSample:
    grid: TimeGrid
    dim: int
    values: np.ndarray = field(repr=False)
    method: str
    seed: SeedSpec
    H: HurstParameter | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.dim, self.grid.n_cells + 1):
            raise ValueError("values must have shape (dim, n_cells + 1)")
        if np.any(v[:, 0] != 0):
            raise ValueError("paths start at the origin")

    @property
    def times(self) -> np.ndarray:
        return self.grid.points


@dataclass(frozen=True)
class Ensemble:
    """Paths stacked as values[path, component, time]."""

    grid: TimeGrid
    H: HurstParameter | None
    dim: int
    values: np.ndarray = field(repr=False)
    method: str
    seed: SeedSpec
    renormalized: bool = True

    @classmethod
    def from_values(cls, values, grid: TimeGrid, H=None, method: str = "synthetic") -> "Ensemble":
        """Wrap given paths, shape (paths, n+1) or (paths, dim, n+1)."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 2:
            v = v[:, None, :]
        if v.ndim != 3 or v.shape[-1] != grid.n_cells + 1:
            raise ValueError("values must have shape (paths, [dim,] n_cells + 1)")
        hp = None if H is None else as_hurst(H)
        return cls(grid, hp, v.shape[1], v, method, SeedSpec(), False)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def path(self, k: int) -> PathSample:
        return PathSample(self.grid, self.dim, self.values[k], self.method, self.seed.child(k), self.H)

    def component(self, c: int = 0) -> np.ndarray:
        return self.values[:, c, :]

    def reflected(self) -> "Ensemble":
        return Ensemble(self.grid, self.H, self.dim, -self.values, self.method, self.seed, self.renormalized)

    def subsample(self, stride: int) -> "Ensemble":
        """Coarser uniform grid keeping every ``stride``-th point."""
        if not self.grid.uniform or self.grid.n_cells % stride:
            raise ValueError("stride must divide the number of cells of a uniform grid")
        g = TimeGrid(self.grid.horizon, self.grid.n_cells // stride)
        return Ensemble(g, self.H, self.dim, self.values[:, :, ::stride], self.method, self.seed,
                        self.renormalized)

    def provenance(self) -> dict:
        return {"method": self.method, "H": None if self.H is None else self.H.value, "dim": self.dim, "n_paths": self.n_paths,
                "grid": self.grid.to_dict(), "seed": self.seed.to_dict(), "generator": GENERATOR_NAME,
                "stream_policy": STREAM_POLICY, "renormalized": self.renormalized}


def _normals(seed: SeedSpec, first: int, count: int, dim: int, n: int) -> np.ndarray:
    """Standard normals of shape (n, count*dim); column p*dim + c is path first+p, component c."""
    Z = np.empty((n, count * dim))
    for p in range(count):
        for c in range(dim):
            Z[:, p * dim + c] = seed.child(first + p, c).generator().standard_normal(n)
    return Z


def _run_chunks(n_paths: int, chunk: int, workers: int, fn) -> None:
    starts = list(range(0, n_paths, chunk))
    if workers <= 1 or len(starts) == 1:
        for s in starts:
            fn(s, min(chunk, n_paths - s))
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        list(ex.map(lambda s: fn(s, min(chunk, n_paths - s)), starts))


def sample_path_volterra(A: CoefficientMatrix, dim: int = 1, seed: SeedSpec | None = None) -> PathSample:
    seed = seed or SeedSpec()
    if dim < 1:
        raise ValueError("dim must be >= 1")
    Z = _normals(seed, 0, 1, dim, A.n) * np.sqrt(A.grid.widths)[:, None]
    return PathSample(A.grid, dim, A.synthesize(Z), "volterra", seed, A.H)


@dataclass(frozen=True)
class CholeskyFactor:
    grid: TimeGrid
    H: HurstParameter
    L: np.ndarray = field(repr=False)
    jitter: float = 0.0


def cholesky_factor(H, grid: TimeGrid) -> CholeskyFactor:
    """Lower Cholesky factor of [R(t_j, t_k)] over t_1..t_n with jitter escalation."""
    hp = as_hurst(H)
    t = grid.points[1:]
    base = covariance_matrix(hp, t)
    scale = float(np.max(np.diag(base)))
    for jitter in (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10):
        C = base.copy()
        if jitter:
            C[np.diag_indices_from(C)] += jitter * scale
        try:
            L = linalg.cholesky(C, lower=True, overwrite_a=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        L.setflags(write=False)
        return CholeskyFactor(grid, hp, L, jitter)
    raise linalg.LinAlgError("covariance matrix not positive definite even with jitter 1e-10")


def sample_path_cholesky(H, grid: TimeGrid, dim: int = 1, seed: SeedSpec | None = None,
                         factor: CholeskyFactor | None = None) -> PathSample:
    seed = seed or SeedSpec()
    f = factor or cholesky_factor(H, grid)
    Z = _normals(seed, 0, 1, dim, grid.n_cells)
    vals = np.zeros((dim, grid.n_cells + 1))
    vals[:, 1:] = (f.L @ Z).T
    return PathSample(grid, dim, vals, "cholesky", seed, f.H)


def sample_ensemble(H, grid: TimeGrid, n_paths: int, *, dim: int = 1, seed: SeedSpec | None = None,
                    method: str = "volterra", matrix: CoefficientMatrix | None = None,
                    factor: CholeskyFactor | None = None, renormalize: bool = True,
                    workers: int = 1, chunk: int = 64) -> Ensemble:
    """Ensemble of ``n_paths`` independent d-dimensional paths.

    Path k, component c draws from stream ``seed.child(k, c)`` so any subset
    of paths can be regenerated independently and output is identical for
    every worker count.
    """
    hp = as_hurst(H)
    seed = seed or SeedSpec()
    if n_paths < 1 or dim < 1:
        raise ValueError("n_paths and dim must be positive")
    n = grid.n_cells
    if method == "volterra":
        A = matrix or build_coefficient_matrix(hp, grid, renormalize=renormalize)
        M, sd = A.entries, np.sqrt(grid.widths)[:, None]
        renorm = A.renormalized
    elif method == "cholesky":
        f = factor or cholesky_factor(hp, grid)
        M, sd = f.L, None
        renorm = False
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    out = np.zeros((n_paths, dim, n + 1))

    def work(first, count):
        Z = _normals(seed, first, count, dim, n)
        if sd is not None:
            Z *= sd
        out[first:first + count, :, 1:] = (M @ Z).T.reshape(count, dim, n)

    _run_chunks(n_paths, chunk, workers, work)
    return Ensemble(grid, hp, dim, out, method, seed, renorm)


# ---------------------------------------------------------------------------
# Malliavin calculus surface


def malliavin_derivative(H, t: float, grid: TimeGrid, q: QuadratureConfig | None = None) -> np.ndarray:
    """DB_t(s) = int_0^{min(s, t)} K(t, u) du at every grid point s."""
    hp = as_hurst(H)
    q = q or QuadratureConfig()
    t = float(t)
    if not t > 0:
        raise ValueError("malliavin_derivative requires t > 0")
    s = np.minimum(grid.points, t)
    if hp.is_half:
        return s.copy()
    h = hp.value
    f = lambda r: kernel(h, t, r)
    knots = np.unique(s)
    cum = np.zeros(knots.size)
    for k in range(1, knots.size):
        a, b = knots[k - 1], knots[k]
        ea = -abs(h - 0.5) if a == 0 else 0.0
        eb = (h - 0.5) if b == t else 0.0
        fg = lambda d, b=b: kernel_gap(h, t, (t - b) + d)
        cum[k] = cum[k - 1] + integrate_singular(f, a, b, ea, eb, q, f" (H={h}, t={t}, [{a}, {b}])", fg)
    return cum[np.searchsorted(knots, s)]


def cameron_martin_inner(H, a: tuple[float, float], b: tuple[float, float],
                         q: QuadratureConfig | None = None) -> float:
    """<D(B_t - B_s), D(B_r - B_u)> for a = (s, t), b = (u, r), via kernel differences."""
    hp = as_hurst(H)
    q = q or QuadratureConfig()
    s, t = map(float, a)
    u, r = map(float, b)
    if not (0 <= s < t and 0 <= u < r):
        raise ValueError("increments must satisfy 0 <= start < end")
    h = hp.value
    e = h - 0.5

    def f(x):
        fa = kernel(h, t, x) - (kernel(h, s, x) if s > 0 else 0.0)
        fb = kernel(h, r, x) - (kernel(h, u, x) if u > 0 else 0.0)
        return fa * fb

    def gap_integrand(hi):
        # the same product at x = hi - d, each kernel evaluated from its own gap
        def g(d):
            k = lambda T: kernel_gap(h, T, (T - hi) + d) if T > 0 else 0.0
            return (k(t) - k(s)) * (k(r) - k(u))
        return g

    top = min(t, r)
    ends = [x for x in (s, t, u, r) if 0 < x]
    knots = sorted({0.0, top, *[x for x in (s, u) if 0 < x < top]})
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        ea = -2 * abs(e) if lo == 0 else 0.0
        eb = e * sum(1 for x in ends if x == hi)
        total += integrate_singular(f, lo, hi, ea, eb, q, f" (H={h}, [{lo}, {hi}])", gap_integrand(hi))
    return total


# ---------------------------------------------------------------------------
# CSV export


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([x if isinstance(x, (int, np.integer)) else format(float(x), ".17g") for x in row])


def write_path_csv(path: PathSample, filename: str | os.PathLike) -> None:
    header = ["t"] + [f"b{c + 1}" for c in range(path.dim)]
    rows = np.column_stack([path.times, path.values.T])
    with open(filename, "w", encoding="utf-8", newline="") as fh:
        _write_rows(fh, header, rows)


def write_ensemble_csv(ens: Ensemble, target: str | os.PathLike, *, single_file: bool = True) -> list[str]:
    """Write an ensemble either as one file with a ``path_id`` column or one file per path."""
    header = ["t"] + [f"b{c + 1}" for c in range(ens.dim)]
    if single_file:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            rows = ([k, *r] for k in range(ens.n_paths)
                    for r in np.column_stack([ens.times, ens.values[k].T]))
            _write_rows(fh, ["path_id"] + header, rows)
        return [os.fspath(target)]
    os.makedirs(target, exist_ok=True)
    names = []
    for k in range(ens.n_paths):
        name = os.path.join(target, f"path_{k:06d}.csv")
        write_path_csv(ens.path(k), name)
        names.append(name)
    return names
