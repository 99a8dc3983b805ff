"""Monte Carlo checks of the stochastic Hardy-Littlewood-Sobolev machinery.

Moments and tails of cell integrals over ensembles of Brownian paths, the
Gaussian potential bound sup_y E|Z - y|^-alpha, and the discrete extremal
problem for the bilinear form sum_{j,k} f_j I_{j,k} g_k.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats
from scipy.integrate import quad as _quad

from ._parallel import pmap
from .rng_paths import BrownianPath, DyadicGrid, SeedSpec, generate_path, refine_path, spawn_seed
from .singular_kernel import (
    CellTable,
    ExponentSet,
    QuadSpec,
    StepFunction,
    _check_alpha,
    cell_integrals,
    cell_samples,
    cell_table,
    deterministic_cell_table,
    normalized_ratio,
    panel_mean,
)

__all__ = [
    "Ensemble",
    "MomentEstimate",
    "TailEstimate",
    "ExtremalResult",
    "InequalityReport",
    "TAIL_QUAD",
    "sample_cell_integrals",
    "moment_from_samples",
    "estimate_moment",
    "fit_scaling_exponent",
    "gaussian_potential",
    "gaussian_potential_bound",
    "anchor_kappa",
    "estimate_tail",
    "extremal_search",
    "verify_inequality",
    "classical_check",
]

MAX_MOMENT = 6
MIN_PATHS = 100

# Cheap rule for whole-table ensembles (tails, extremal).  Diagonal cells carry
# a resolution bias of a few percent, identical at every level by Brownian
# scaling, so level-to-level trends are unaffected.
TAIL_QUAD = QuadSpec(max_depth=3, rel_tol=0.05, interp_margin=3, extrapolate=False)

# Off-diagonal cells whose one-panel estimate is below threshold / _SCREEN are
# not refined when counting exceedances.
_SCREEN = 4.0


@dataclass(frozen=True)
class Ensemble:
    """M independent paths on ``grid`` drawn from ``master_seed``."""

    grid: DyadicGrid
    M: int
    master_seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("ensemble needs at least one path")

    def seed(self, i: int) -> SeedSpec:
        return spawn_seed(self.master_seed, i)

    def path(self, i: int, level: int) -> BrownianPath:
        """Path ``i`` resolved to ``level`` (identical values at shared nodes)."""
        base = generate_path(DyadicGrid(self.grid.T, min(level, self.grid.N)), self.seed(i))
        return refine_path(base, level)


@dataclass
class MomentEstimate:
    p: int
    alpha: float
    N: int
    mean: float
    std_err: float
    M: int
    fitted_C: float
    low_sample: bool = False

    def __post_init__(self):
        if self.mean < 0 or self.std_err < 0:
            raise ValueError("moment estimates are nonnegative")


@dataclass
class TailEstimate:
    """Exceedance counts of I > kappa N h^(2 - alpha/2) per level.

    ``counts`` sums over all ordered cell pairs and paths.  The Omega_eps
    construction is in ``kappa_epsilon`` / ``omega_coverage``.
    """

    kappa: float
    N_range: list
    counts: np.ndarray
    M: int
    epsilon: float
    N_epsilon: int | None
    fitted_rate: float
    alpha: float = float("nan")
    cells: np.ndarray = field(default=None, repr=False)
    path_counts: np.ndarray = field(default=None, repr=False)
    path_max_ratio: np.ndarray = field(default=None, repr=False)
    trend_slope: float = float("nan")
    trend_pvalue: float = float("nan")
    kappa_epsilon: float = float("nan")
    omega_coverage: float = float("nan")
    below_resolution: bool = False

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def frequencies(self) -> np.ndarray:
        return np.asarray(self.counts, float) / (self.cells * self.M)

    @property
    def path_frequencies(self) -> np.ndarray:
        """Fraction of paths with at least one exceeding cell, per level."""
        return (self.path_counts > 0).mean(axis=0)

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.frequencies) < 0))


@dataclass
class ExtremalResult:
    f: StepFunction
    g: StepFunction
    value: float
    iterations: int
    history: np.ndarray

    @property
    def monotone(self) -> bool:
        d = np.diff(self.history)
        return bool(np.all(d >= -1e-12 * np.maximum(1.0, np.abs(self.history[1:]))))


@dataclass
class InequalityReport:
    exponents: ExponentSet
    N_range: list
    values: np.ndarray  # (M, levels)
    iterations: np.ndarray
    growth_slope: float
    verdict: str

    @property
    def maxima(self) -> np.ndarray:
        return self.values.max(axis=0)

    def quantiles(self, qs=(0.5, 0.9, 0.99)) -> dict:
        return {q: np.quantile(self.values, q, axis=0) for q in qs}


# ---------------------------------------------------------------------------
# moments


def _batch_cells(batch, ensemble, j, k, alpha, N, quad):
    level = N + quad.interp_margin
    paths = [ensemble.path(i, level) for i in batch]
    return cell_samples(paths, j, k, alpha, N, quad)


def sample_cell_integrals(ensemble: Ensemble, j: int, k: int, alpha: float, quad: QuadSpec | None = None, N: int | None = None, batch: int = 256) -> np.ndarray:
    """I_{j,k} at level ``N`` (default ``ensemble.grid.N``) for every path."""
    alpha = _check_alpha(alpha)
    quad = quad or QuadSpec()
    N = ensemble.grid.N if N is None else N
    batches = [range(s, min(s + batch, ensemble.M)) for s in range(0, ensemble.M, batch)]
    fn = partial(_batch_cells, ensemble=ensemble, j=j, k=k, alpha=alpha, N=N, quad=quad)
    return np.concatenate(pmap(fn, batches))


def moment_from_samples(samples, p: int, alpha: float, N: int, h: float) -> MomentEstimate:
    """Sample moment E[I^p] with the implied constant C of C^p p p! h^(p(2 - alpha/2))."""
    if int(p) != p or not 1 <= p <= MAX_MOMENT:
        raise ValueError(f"moment order must be an integer in [1, {MAX_MOMENT}], got {p}")
    p = int(p)
    x = np.asarray(samples, float) ** p
    M = x.size
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(M)) if M > 1 else float("inf")
    C = (mean / (p * math.factorial(p) * h ** (p * (2.0 - alpha / 2.0)))) ** (1.0 / p)
    return MomentEstimate(p, float(alpha), int(N), mean, se, M, float(C), M < MIN_PATHS)


def estimate_moment(ensemble: Ensemble, j: int, k: int, alpha: float, p: int, quad: QuadSpec | None = None, N: int | None = None) -> MomentEstimate:
    """E[I_{j,k}^p] over the ensemble; fewer than 100 paths only sets ``low_sample``."""
    N = ensemble.grid.N if N is None else N
    if int(p) != p or not 1 <= p <= MAX_MOMENT:
        raise ValueError(f"moment order must be an integer in [1, {MAX_MOMENT}], got {p}")
    if ensemble.M < MIN_PATHS:
        warnings.warn(f"only {ensemble.M} paths; moment estimate flagged low_sample", stacklevel=2)
    x = sample_cell_integrals(ensemble, j, k, alpha, quad, N)
    return moment_from_samples(x, p, alpha, N, ensemble.grid.T / 2**N)


def fit_scaling_exponent(estimates):
    """Least-squares slope of log E[I^p] against log h_N.

    Returns ``(slope, intercept, (lo, hi))`` with a 95% interval on the slope
    from the regression residuals.
    """
    estimates = list(estimates)
    for e in estimates:
        _check_alpha(e.alpha)
    levels = {e.N for e in estimates}
    if len(levels) < 4:
        raise ValueError("scaling fit needs at least 4 distinct levels")
    means = np.array([e.mean for e in estimates])
    if np.any(means <= 0):
        raise ValueError("cannot fit a power law through nonpositive moment estimates")
    x = np.log([2.0 ** (-e.N) for e in estimates])
    y = np.log(means)
    res = stats.linregress(x, y)
    t = stats.t.ppf(0.975, len(x) - 2)
    ci = (res.slope - t * res.stderr, res.slope + t * res.stderr)
    return float(res.slope), float(res.intercept), ci


# ---------------------------------------------------------------------------
# Gaussian potential


def gaussian_potential(alpha: float, y: float) -> float:
    """E|Z - y|^-alpha for standard normal Z, by algebraic-weight quadrature."""
    alpha = _check_alpha(alpha)
    y = float(y)
    c = 1.0 / math.sqrt(2.0 * math.pi)

    def f(u):
        return c * (math.exp(-0.5 * (y + u) ** 2) + math.exp(-0.5 * (y - u) ** 2))

    upper = abs(y) + 40.0
    return float(_quad(f, 0.0, upper, weight="alg", wvar=(-alpha, 0.0), limit=200)[0])


def gaussian_potential_bound(alpha: float, y_grid, mc_samples: int = 0, seed: int = 0):
    """Maximum of E|Z - y|^-alpha over ``y_grid``; returns ``(sup_value, argmax_y)``.

    With ``mc_samples > 0`` the expectation is estimated from common normal
    draws instead of quadrature (that estimator has infinite variance once
    alpha >= 1/2, so quadrature is the default).
    """
    alpha = _check_alpha(alpha)
    y = np.asarray(y_grid, float)
    if y.size == 0 or y.min() > -5 or y.max() < 5:
        raise ValueError("y_grid must cover at least [-5, 5]")
    if mc_samples > 0:
        z = np.random.Generator(np.random.Philox(key=[seed, 0])).standard_normal(mc_samples)
        vals = np.array([np.mean(np.abs(z - v) ** (-alpha)) for v in y])
    else:
        vals = np.array([gaussian_potential(alpha, v) for v in y])
    i = int(np.argmax(vals))
    return float(vals[i]), float(y[i])


# ---------------------------------------------------------------------------
# tails


def _norm_scale(N, h, alpha):
    return N * h ** (2.0 - alpha / 2.0)


def _path_levels(i, ensemble, alpha, N_range, quad, kappa):
    """Per-level (exceedance count, max of I / (N h^(2-alpha/2))) for one path."""
    top = max(N_range) + quad.interp_margin
    path = ensemble.path(i, top)
    out = []
    for N in N_range:
        n = 2**N - 1
        h = ensemble.grid.T / 2**N
        scale = _norm_scale(N, h, alpha)
        thr = kappa * scale
        w = path.at_level(N)
        jj, kk = np.triu_indices(n)
        jj, kk = jj + 1, kk + 1
        coarse = h * h * panel_mean(w[jj] - w[kk], w[jj + 1] - w[jj], w[kk + 1] - w[kk], alpha, quad.floor)
        fine = (np.abs(jj - kk) <= 1) | (coarse * _SCREEN >= thr)
        vals = cell_integrals(path, np.column_stack([jj[fine], kk[fine]]), alpha, N, quad)
        mult = np.where(jj[fine] == kk[fine], 1, 2)
        count = int(np.sum(mult * (vals > thr)))
        out.append((count, float(vals.max() / scale)))
    return out


def anchor_kappa(ensemble: Ensemble, alpha: float, N: int = 4, quantile: float = 0.95, quad: QuadSpec | None = None) -> float:
    """Empirical ``quantile`` of I_{j,k} / (N h^(2-alpha/2)) over all cells and paths at level N."""
    alpha = _check_alpha(alpha)
    quad = quad or TAIL_QUAD
    h = ensemble.grid.T / 2**N
    fn = partial(_full_ratios, ensemble=ensemble, alpha=alpha, N=N, quad=quad)
    r = np.concatenate(pmap(fn, range(ensemble.M))) / _norm_scale(N, h, alpha)
    return float(np.quantile(r, quantile))


def _full_ratios(i, ensemble, alpha, N, quad):
    path = ensemble.path(i, N + quad.interp_margin)
    return cell_table(path, N, alpha, quad).entries.ravel()


def estimate_tail(ensemble: Ensemble, alpha: float, kappa: float, N_range, quad: QuadSpec | None = None, epsilon: float = 0.1) -> TailEstimate:
    """Exceedance frequencies of I > kappa N h^(2-alpha/2) over all cells and paths.

    Off-diagonal cells whose one-panel estimate is far below the threshold are
    counted as non-exceeding without refinement.  Besides the raw counts the
    result carries:

    * a one-sided t-test that per-path exceedance frequencies decrease in N;
    * ``fitted_rate``, minus the slope of log(mean count per path) in N,
      fitted on the nonzero levels only;
    * ``N_epsilon``, the first level from which the fraction of paths with any
      exceedance stays <= epsilon (None if it never does in range);
    * ``kappa_epsilon``, the (1 - epsilon) quantile over paths of the largest
      normalised cell integral, so that Omega_eps = {every I_{j,k} <=
      kappa_epsilon N h^(2-alpha/2) for all N in range} has empirical
      probability ``omega_coverage`` >= 1 - epsilon.
    """
    alpha = _check_alpha(alpha)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    quad = quad or TAIL_QUAD
    N_range = [int(n) for n in N_range]
    fn = partial(_path_levels, ensemble=ensemble, alpha=alpha, N_range=N_range, quad=quad, kappa=kappa)
    res = pmap(fn, range(ensemble.M))
    pc = np.array([[c for c, _ in r] for r in res], dtype=np.int64)
    pm = np.array([[m for _, m in r] for r in res])
    cells = np.array([(2**N - 1) ** 2 for N in N_range], dtype=np.int64)
    counts = pc.sum(axis=0)

    Ns = np.asarray(N_range, float)
    below = bool(np.all(counts == 0))
    rate = float("nan")
    nz = counts > 0
    if not below and nz.sum() >= 2:
        rate = -float(stats.linregress(Ns[nz], np.log(counts[nz] / ensemble.M)).slope)

    slope, pval = float("nan"), float("nan")
    if len(N_range) >= 2 and ensemble.M >= 2:
        freq = pc / cells
        x = Ns - Ns.mean()
        slopes = freq @ x / (x @ x)
        slope = float(slopes.mean())
        if np.std(slopes) > 0:
            pval = float(stats.ttest_1samp(slopes, 0.0, alternative="less").pvalue)
        else:
            pval = 1.0

    pf = (pc > 0).mean(axis=0)
    n_eps = None
    for i in range(len(N_range)):
        if np.all(pf[i:] <= epsilon):
            n_eps = N_range[i]
            break
    worst = pm.max(axis=1)
    k_eps = float(np.quantile(worst, 1.0 - epsilon, method="inverted_cdf"))
    cover = float(np.mean(worst <= k_eps))

    return TailEstimate(
        float(kappa), N_range, counts, ensemble.M, float(epsilon), n_eps, rate,
        alpha=alpha, cells=cells, path_counts=pc, path_max_ratio=pm,
        trend_slope=slope, trend_pvalue=pval, kappa_epsilon=k_eps,
        omega_coverage=cover, below_resolution=below,
    )


# ---------------------------------------------------------------------------
# extremal problem


def _wnorm(x, p, h):
    return float((h * np.sum(x**p)) ** (1.0 / p))


def _dual_update(u, p, h):
    # Hoelder extremal of sum_j f_j u_j under ||f||_p = 1 (h-weighted)
    if not np.any(u > 0):
        return np.zeros_like(u)
    f = u ** (1.0 / (p - 1.0))  # p' - 1 = 1 / (p - 1)
    return f / _wnorm(f, p, h)


def _ascent(I, f, g, p, q, h, max_iters, tol):
    f = f / _wnorm(f, p, h)
    g = g / _wnorm(g, q, h)
    hist = [float(f @ I @ g)]
    it = 0
    for it in range(1, max_iters + 1):
        f = _dual_update(I @ g, p, h)
        g = _dual_update(I.T @ f, q, h)
        hist.append(float(f @ I @ g))
        if abs(hist[-1] - hist[-2]) <= tol * abs(hist[-1]):
            break
    return f, g, np.array(hist), it


def extremal_search(table: CellTable, p: float, q: float, max_iters: int = 500, tol: float = 1e-10, restarts: int = 8, seed: int = 0) -> ExtremalResult:
    """Discrete operator norm of the table between h-weighted l^q and l^p'.

    Alternating maximisation: for fixed g the best unit f is the Hoelder dual
    of u = I g, then symmetrically for g.  Started from f = g = 1 and from
    ``restarts`` seeded random nonnegative pairs; the best run is returned.
    """
    if not (1 < p < np.inf and 1 < q < np.inf):
        raise ValueError("p and q must lie in (1, inf)")
    I = np.asarray(table.entries, float)
    if np.any(I < 0):
        raise ValueError("table entries must be nonnegative")
    N, h, n = table.N, table.h, table.size
    if not np.any(I > 0):
        z = np.zeros(n)
        return ExtremalResult(StepFunction(N, z, table.T), StepFunction(N, z, table.T), 0.0, 0, np.zeros(1))

    rng = np.random.Generator(np.random.Philox(key=[seed, 0xE57]))
    starts = [(np.ones(n), np.ones(n))]
    starts += [(rng.random(n) + 1e-3, rng.random(n) + 1e-3) for _ in range(restarts)]
    best = None
    for f0, g0 in starts:
        f, g, hist, it = _ascent(I, f0, g0, p, q, h, max_iters, tol)
        if best is None or hist[-1] > best[2][-1] * (1 + 1e-12):
            best = (f, g, hist, it)
    f, g, hist, it = best
    fs, gs = StepFunction(N, f, table.T), StepFunction(N, g, table.T)
    return ExtremalResult(fs, gs, normalized_ratio(fs, gs, table, p, q), it, hist)


def _growth_slope(maxima, N_range):
    """Regression slope in N of log increments of the per-level maxima.

    The discrete norms can only grow with N (coarser step functions are finer
    ones too), so a bounded sequence shows shrinking increments: slope < 0.
    """
    d = np.diff(np.asarray(maxima, float))
    Ns = np.asarray(N_range[1:], float)
    pos = d > 0
    if pos.sum() < 2:
        return -np.inf if np.all(d <= 0) else float("nan")
    return float(stats.linregress(Ns[pos], np.log(d[pos])).slope)


def _path_extremal(i, ensemble, exps, N_range, quad, max_iters, tol, restarts):
    path = ensemble.path(i, max(N_range) + quad.interp_margin)
    out = []
    for N in N_range:
        tab = cell_table(path, N, exps.alpha, quad)
        r = extremal_search(tab, exps.p, exps.q, max_iters, tol, restarts, seed=i)
        out.append((r.value, r.iterations))
    return out


def verify_inequality(ensemble: Ensemble, exponents: ExponentSet, N_range, quad: QuadSpec | None = None, max_iters: int = 500, tol: float = 1e-9, restarts: int = 2) -> InequalityReport:
    """Per-path, per-level extremal values; PASS when the maxima stay bounded in N."""
    if not exponents.stochastic_regime:
        raise ValueError(
            f"1/p + 1/q = {1 / exponents.p + 1 / exponents.q:.6g} is not below "
            f"2 - alpha/2 = {2 - exponents.alpha / 2:.6g}; the stochastic HLS bound does not apply"
        )
    quad = quad or TAIL_QUAD
    N_range = [int(n) for n in N_range]
    fn = partial(_path_extremal, ensemble=ensemble, exps=exponents, N_range=N_range, quad=quad,
                 max_iters=max_iters, tol=tol, restarts=restarts)
    res = pmap(fn, range(ensemble.M))
    vals = np.array([[v for v, _ in r] for r in res])
    its = np.array([[k for _, k in r] for r in res])
    slope = _growth_slope(vals.max(axis=0), N_range)
    verdict = "PASS" if slope < 0 else "FAIL"
    return InequalityReport(exponents, N_range, vals, its, slope, verdict)


def classical_check(alpha: float, p: float, q: float, N_range, T: float = 1.0):
    """Extremal values of the deterministic kernel |t - s|^-alpha per level.

    Returns ``(values, growth_slope)``; bounded when the slope is negative.
    """
    vals = np.array([extremal_search(deterministic_cell_table(N, alpha, T), p, q).value for N in N_range])
    return vals, _growth_slope(vals, list(N_range))
