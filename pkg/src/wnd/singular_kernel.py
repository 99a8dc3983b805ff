"""Singular Brownian cell integrals and the discrete bilinear HLS form.

The cell integral

    I_{j,k} = int_{t_j}^{t_j+h} int_{t_k}^{t_k+h} |W_t - W_s|^(-alpha) ds dt

is computed by product integration.  The cell pair is split into
2**r x 2**r panels; on every panel W is replaced by its piecewise-linear
interpolant so the integrand is ``|c + A x - B y|^(-alpha)``, which has a
closed-form double antiderivative.  The singular set {W_t = W_s} is therefore
integrated exactly for the interpolant, with no node ever sitting on it.

Panels on the diagonal of a diagonal cell (t and s in the same sub-interval)
are the exception: there the linear interpolant is a poor model of W (it
collapses |W_t - W_s| ~ |t - s|^(1/2) to ~ |t - s|) and its value has infinite
variance for alpha >= 1/2.  Those panels use the Brownian-bridge conditional
expectation given the two endpoint values instead (tabulated once per alpha).

The depth r is raised until successive sums agree to ``rel_tol`` or the
finest path level is reached.  Sums that reach the finest level unconverged
(always the case for diagonal cells) are Richardson extrapolated from the
last two depths with the self-similar rate h**(1 - alpha/2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import gamma, hyp1f1

from .rng_paths import BrownianPath

__all__ = [
    "ExponentSet",
    "QuadSpec",
    "CellTable",
    "StepFunction",
    "gaussian_abs_moment",
    "panel_mean",
    "self_panel_mean",
    "cell_integral",
    "cell_integrals",
    "cell_samples",
    "cell_table",
    "bilinear_form",
    "normalized_ratio",
    "deterministic_kernel_integral",
    "deterministic_cell_table",
    "dump_cell_table_csv",
]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1) for an integrable kernel, got {alpha}")
    return alpha


@dataclass(frozen=True)
class ExponentSet:
    """Kernel exponent ``alpha`` and integrability exponents ``p``, ``q``."""

    alpha: float
    p: float
    q: float

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (self.p > 1 and self.q > 1):
            raise ValueError("p and q must lie in (1, inf)")

    @property
    def upsilon(self) -> float:
        """Slack 2 - alpha/2 - 1/p - 1/q of the stochastic relation."""
        return 2.0 - self.alpha / 2.0 - 1.0 / self.p - 1.0 / self.q

    @property
    def stochastic_regime(self) -> bool:
        return self.upsilon > 0

    @property
    def classical_regime(self) -> bool:
        return abs(2.0 - self.alpha - 1.0 / self.p - 1.0 / self.q) <= 1e-12


@dataclass(frozen=True)
class QuadSpec:
    """Controls for the adaptive product-integration rule.

    ``max_depth`` caps the panel subdivision depth below the cell,
    ``interp_margin`` is the number of path levels required beyond the cell
    level, ``floor`` clamps |W_t - W_s| from below.
    """

    max_depth: int = 12
    rel_tol: float = 1e-3
    floor: float = 1e-12
    interp_margin: int = 6
    extrapolate: bool = True

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if not self.floor > 0:
            raise ValueError("floor must be positive")
        if self.interp_margin < 0:
            raise ValueError("interp_margin must be >= 0")


@dataclass
class CellTable:
    """Symmetric table I[j-1, k-1] for cells 1 <= j, k <= 2**N - 1."""

    N: int
    alpha: float
    entries: np.ndarray
    T: float = 1.0
    path_seed: object = None

    @property
    def h(self) -> float:
        return self.T / 2**self.N

    @property
    def size(self) -> int:
        return 2**self.N - 1


@dataclass
class StepFunction:
    """Nonnegative step function sum_j f_j 1_[t_j, t_{j+1}), j = 1 .. 2**N - 1."""

    N: int
    coeffs: np.ndarray
    T: float = 1.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (2**self.N - 1,):
            raise ValueError(f"expected {2**self.N - 1} coefficients for level {self.N}")
        if np.any(self.coeffs < 0):
            raise ValueError("step function coefficients must be nonnegative")

    @property
    def h(self) -> float:
        return self.T / 2**self.N

    def norm(self, p: float) -> float:
        if np.isinf(p):
            return float(self.coeffs.max(initial=0.0))
        return float((np.sum(self.coeffs**p) * self.h) ** (1.0 / p))

    @classmethod
    def indicator(cls, N: int, j: int, T: float = 1.0) -> "StepFunction":
        c = np.zeros(2**N - 1)
        c[j - 1] = 1.0
        return cls(N, c, T)

    @classmethod
    def ones(cls, N: int, T: float = 1.0) -> "StepFunction":
        return cls(N, np.ones(2**N - 1), T)


def gaussian_abs_moment(alpha: float) -> float:
    """E|Z|^(-alpha) = 2^(-alpha/2) Gamma((1 - alpha)/2) / Gamma(1/2)."""
    return 2.0 ** (-alpha / 2) * gamma((1.0 - alpha) / 2) / gamma(0.5)


# ---------------------------------------------------------------------------
# panel kernels


def _G(z, a):
    return np.abs(z) ** (2.0 - a) / ((1.0 - a) * (2.0 - a))


def _F(z, a):
    return np.sign(z) * np.abs(z) ** (1.0 - a) / (1.0 - a)


def _mean_F(z0, b, a):
    """Mean of F(z0 - b y) over y in [0, 1], accurate for any size of b."""
    z0, b = np.broadcast_arrays(z0, b)
    near = np.abs(z0) <= 16.0 * np.abs(b)
    m = z0 - 0.5 * b
    with np.errstate(divide="ignore", invalid="ignore"):
        # midpoint value plus the b**2 correction; the next term is O((b/z0)**4)
        far = _F(m, a) - a * b * b / 24.0 * np.sign(m) * np.abs(m) ** (-a - 1.0)
        exact = (_G(z0, a) - _G(z0 - b, a)) / b
    return np.where(b == 0, _F(z0, a), np.where(near, exact, far))


_SMALL = 0.02  # panel variation / |c| below which the integrand is smooth
_TINY = 1e-8  # slopes below this fraction of the panel scale get a one-sided average


def _pow_abs(z, k):
    z = np.abs(z)
    if k == 1.5:  # alpha = 1/2, by far the most used exponent
        return z * np.sqrt(z)
    return z**k


def panel_mean(c, A, B, alpha: float, floor: float = 1e-12) -> np.ndarray:
    """Mean of |c + A x - B y|^(-alpha) over the unit square (x, y).

    Exact for the affine integrand except where noted: near-constant
    integrands use a fourth-order midpoint expansion, and the result is
    capped at ``floor**-alpha``.
    """
    c, A, B = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (c, A, B)))
    shape = c.shape
    c, A, B = c.ravel(), A.ravel(), B.ravel()
    k = 2.0 - alpha
    ca = c + A
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _pow_abs(ca, k)
        out -= _pow_abs(c, k)
        out -= _pow_abs(ca - B, k)
        out += _pow_abs(c - B, k)
        out /= A * B * ((1.0 - alpha) * k)

    ac, aA, aB = np.abs(c), np.abs(A), np.abs(B)
    big = np.maximum(aA, aB)
    scale = np.maximum(ac, big)
    # the closed form loses digits when the panel is nearly flat or nearly
    # constant; those (rare) panels are redone below
    bad = (big <= _SMALL * ac) | (aA <= _TINY * scale) | (aB <= _TINY * scale)
    idx = np.flatnonzero(bad)
    if idx.size:
        cb, Ab, Bb = c[idx], A[idx], B[idx]
        acb, aAb, aBb, sb = ac[idx], aA[idx], aB[idx], scale[idx]
        val = np.empty(idx.size)
        smooth = (np.maximum(aAb, aBb) <= _SMALL * acb) & (acb > 0)
        m = cb + 0.5 * (Ab - Bb)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
            r2 = np.where(smooth, ((Ab / m) ** 2 + (Bb / m) ** 2), 0.0)
            val[smooth] = (np.abs(m) ** (-alpha) * (1.0 + alpha * (alpha + 1.0) / 24.0 * r2))[smooth]
            ta = aAb <= _TINY * sb
            tb = aBb <= _TINY * sb
            sel = ~smooth & ta & ~tb
            val[sel] = ((_mean_F(cb, -Ab, alpha) - _mean_F(cb - Bb, -Ab, alpha)) / Bb)[sel]
            sel = ~smooth & tb & ~ta
            val[sel] = ((_mean_F(cb + Ab, Bb, alpha) - _mean_F(cb, Bb, alpha)) / Ab)[sel]
            sel = ~smooth & ta & tb
            val[sel] = (acb ** (-alpha))[sel]
        out[idx] = val
    # |z| <= 3 * scale everywhere on the panel, so such panels sit under the clamp
    out[3.0 * scale <= floor] = floor ** (-alpha)
    np.minimum(out, floor ** (-alpha), out=out)
    return out.reshape(shape)


def _self_panel_exact(z: float, alpha: float) -> float:
    """E[mean over [0,1]^2 of |B_t - B_s|^-alpha | B_1 = z], B standard Brownian."""
    z2 = z * z

    def f(u):
        return (1.0 - u) * (u * (1.0 - u)) ** (-alpha / 2) * hyp1f1(
            alpha / 2, 0.5, -z2 * u / (2.0 * (1.0 - u))
        )

    return 2.0 * gaussian_abs_moment(alpha) * quad(f, 0.0, 1.0, limit=200)[0]


_Z_MAX = 16.0


@lru_cache(maxsize=64)
def _self_panel_spline(alpha: float) -> CubicSpline:
    zs = np.linspace(0.0, _Z_MAX, 321)
    vals = np.array([_self_panel_exact(z, alpha) for z in zs])
    return CubicSpline(zs, vals, bc_type=((1, 0.0), "not-a-knot"))


def self_panel_mean(z, alpha: float) -> np.ndarray:
    """Bridge-conditioned mean kernel on a unit self-panel with increment ``z``.

    Scales as ``delta**(2 - alpha/2) * self_panel_mean(A / sqrt(delta))`` for a
    panel of width delta and increment A.
    """
    z = np.abs(np.asarray(z, dtype=float))
    spl = _self_panel_spline(float(alpha))
    out = spl(np.minimum(z, _Z_MAX))
    far = z > _Z_MAX
    if np.any(far):
        out = np.array(out, dtype=float)
        out[far] = [_self_panel_exact(v, alpha) for v in z[far]]
    return out


# ---------------------------------------------------------------------------
# cell integrals

_CHUNK_ELEMS = 1 << 20


def _depth_sum(wt, ws, alpha, delta, floor, diag):
    c = wt[:, :-1, None] - ws[:, None, :-1]
    A = np.diff(wt, axis=1)[:, :, None]
    B = np.diff(ws, axis=1)[:, None, :]
    P = panel_mean(c, A, B, alpha, floor)
    if diag:
        n = P.shape[1]
        idx = np.arange(n)
        z = np.abs(A[:, :, 0]) / np.sqrt(delta)
        P[:, idx, idx] = self_panel_mean(z, alpha) * delta ** (-alpha / 2)
    return P.sum(axis=(1, 2)) * delta * delta


def _cells(wt, ws, h, alpha, quad_spec, depth, diag):
    """Adaptive cell integrals for a batch of cell pairs.

    ``wt``/``ws`` hold the 2**depth + 1 finest node values of each t-cell and
    s-cell (shape (B, 2**depth + 1)); ``h`` is the cell width.  Diagonal cells
    never resolve their singular diagonal, so they always run to full depth.
    """
    nb = wt.shape[0]
    out = np.empty(nb)
    if nb == 0:
        return out
    gam = 1.0 - alpha / 2.0
    rich = 1.0 / (2.0**gam - 1.0) if quad_spec.extrapolate else 0.0
    prev = np.full(nb, np.nan)
    ok = np.zeros(nb, dtype=bool)
    active = np.arange(nb)
    # diagonal cells only need the sums that enter the final value
    levels = range(max(depth - 1, 0) if diag else 0, depth + 1)
    if diag and not quad_spec.extrapolate:
        levels = range(depth, depth + 1)
    for r in levels:
        stride = 2 ** (depth - r)
        delta = h / 2**r
        step = max(1, _CHUNK_ELEMS // 4**r)
        cur = np.empty(active.size)
        for i in range(0, active.size, step):
            sel = active[i : i + step]
            cur[i : i + step] = _depth_sum(
                wt[sel, ::stride], ws[sel, ::stride], alpha, delta, quad_spec.floor, diag
            )
        if r == depth:
            out[active] = cur if r == levels[0] else cur + (cur - prev[active]) * rich
            break
        if r > 0 and not diag:
            # two agreeing steps in a row: a single one is often a coincidence
            # of two equally coarse sums on cells where the path crosses itself
            agree = np.abs(cur - prev[active]) <= quad_spec.rel_tol * np.abs(cur)
            done = agree & ok[active]
            ok[active] = agree
            out[active[done]] = cur[done]
            keep = ~done
            prev[active] = cur
            active = active[keep]
            if active.size == 0:
                break
        else:
            prev[active] = cur
    return out


def _resolve_depth(path: BrownianPath, N: int, quad_spec: QuadSpec) -> int:
    R = path.level - N
    if R < quad_spec.interp_margin:
        raise ValueError(
            f"path resolved to level {path.level}; cells at level {N} need level "
            f">= {N + quad_spec.interp_margin} (interp_margin={quad_spec.interp_margin})"
        )
    return min(quad_spec.max_depth, R)


def _gather(values, cells, R, depth):
    offs = np.arange(0, 2**R + 1, 2 ** (R - depth))
    return values[np.asarray(cells)[:, None] * 2**R + offs[None, :]]


def cell_integral(path: BrownianPath, j: int, k: int, alpha: float, quad: QuadSpec | None = None, N: int | None = None) -> float:
    """Integral of |W_t - W_s|^-alpha over cell j (in t) times cell k (in s).

    Cells are those of level ``N`` (default: the path's base grid level), with
    0 <= j, k < 2**N.
    """
    alpha = _check_alpha(alpha)
    quad = quad or QuadSpec()
    N = path.grid.N if N is None else N
    if not (0 <= j < 2**N and 0 <= k < 2**N):
        raise IndexError(f"cell index out of range for level {N}")
    R = path.level - N
    depth = _resolve_depth(path, N, quad)
    w = np.asarray(path.values)
    wt = _gather(w, [j], R, depth)
    ws = _gather(w, [k], R, depth)
    h = path.grid.T / 2**N
    val = _cells(wt, ws, h, alpha, quad, depth, diag=(j == k))[0]
    if not np.isfinite(val):
        raise FloatingPointError("non-finite cell integral despite the clamp floor")
    return float(val)


def cell_integrals(path: BrownianPath, pairs, alpha: float, N: int, quad: QuadSpec | None = None) -> np.ndarray:
    """Vectorised :func:`cell_integral` over an array of (j, k) pairs."""
    alpha = _check_alpha(alpha)
    quad = quad or QuadSpec()
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    R = path.level - N
    depth = _resolve_depth(path, N, quad)
    w = np.asarray(path.values)
    h = path.grid.T / 2**N
    out = np.empty(len(pairs))
    is_diag = pairs[:, 0] == pairs[:, 1]
    for flag in (True, False):
        m = is_diag == flag
        if np.any(m):
            wt = _gather(w, pairs[m, 0], R, depth)
            ws = _gather(w, pairs[m, 1], R, depth)
            out[m] = _cells(wt, ws, h, alpha, quad, depth, diag=flag)
    return out


def cell_samples(paths, j: int, k: int, alpha: float, N: int, quad: QuadSpec | None = None) -> np.ndarray:
    """I_{j,k} at level ``N`` for each path of a batch (all at one level)."""
    alpha = _check_alpha(alpha)
    quad = quad or QuadSpec()
    paths = list(paths)
    if not paths:
        return np.empty(0)
    level = paths[0].level
    if any(p.level != level for p in paths):
        raise ValueError("batched paths must share one refinement level")
    if not (0 <= j < 2**N and 0 <= k < 2**N):
        raise IndexError(f"cell index out of range for level {N}")
    R = level - N
    depth = _resolve_depth(paths[0], N, quad)
    W = np.stack([np.asarray(p.values) for p in paths])
    offs = np.arange(0, 2**R + 1, 2 ** (R - depth))
    wt = W[:, j * 2**R + offs]
    ws = W[:, k * 2**R + offs]
    return _cells(wt, ws, paths[0].grid.T / 2**N, alpha, quad, depth, diag=(j == k))


def cell_table(path: BrownianPath, N: int, alpha: float, quad: QuadSpec | None = None) -> CellTable:
    """Full symmetric table over cells 1 .. 2**N - 1 (upper half computed, mirrored)."""
    n = 2**N - 1
    jj, kk = np.triu_indices(n)
    vals = cell_integrals(path, np.column_stack([jj + 1, kk + 1]), alpha, N, quad)
    I = np.zeros((n, n))
    I[jj, kk] = vals
    I[kk, jj] = vals
    return CellTable(N, float(alpha), I, path.grid.T, path.seed)


def bilinear_form(f: StepFunction, g: StepFunction, table: CellTable) -> float:
    """sum_{j,k} f_j g_k I[j][k]."""
    if f.N != table.N or g.N != table.N:
        raise ValueError(f"level mismatch: f={f.N}, g={g.N}, table={table.N}")
    return float(f.coeffs @ table.entries @ g.coeffs)


def normalized_ratio(f: StepFunction, g: StepFunction, table: CellTable, p: float, q: float) -> float:
    nf, ng = f.norm(p), g.norm(q)
    if nf <= 0 or ng <= 0:
        raise ValueError("normalized ratio undefined for a zero-norm step function")
    return bilinear_form(f, g, table) / (nf * ng)


def deterministic_kernel_integral(alpha: float, rect) -> float:
    """Closed-form integral of |t - s|^-alpha over (a, b) x (c, d) in (t, s)."""
    alpha = _check_alpha(alpha)
    (a, b), (c, d) = rect
    v = _G(b - c, alpha) - _G(a - c, alpha) - _G(b - d, alpha) + _G(a - d, alpha)
    return float(v)


def deterministic_cell_table(N: int, alpha: float, T: float = 1.0) -> CellTable:
    """Cell table of the classical kernel |t - s|^-alpha (depends only on j - k)."""
    alpha = _check_alpha(alpha)
    h = T / 2**N
    n = 2**N - 1
    lag = np.arange(n, dtype=float)
    # integral over [0,h] x [-l h, -l h + h]
    per_lag = (
        _G(h * (lag + 1), alpha) - _G(h * lag, alpha) - _G(h * lag, alpha) + _G(h * (lag - 1), alpha)
    )
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return CellTable(N, alpha, per_lag[idx], T, None)


def dump_cell_table_csv(table: CellTable, dest) -> Path:
    dest = Path(dest)
    with dest.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["N", "alpha", "j", "k", "I"])
        n = table.size
        for j in range(n):
            for k in range(n):
                wr.writerow([table.N, f"{table.alpha:.17g}", j + 1, k + 1, f"{table.entries[j, k]:.17g}"])
    return dest
