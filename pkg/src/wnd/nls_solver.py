"""Nonlinear Schroedinger equation with white-noise dispersion.

    i d psi = -Delta psi o dW + lambda |psi|^(2 sigma) psi dt

Two integrators share the exact random propagator:

* ``split_step_evolve``: Lie splitting, propagator over each Brownian
  increment followed by the exact phase flow of the nonlinearity;
* ``picard_slab`` / ``globalize``: fixed-point iteration of the mild (Duhamel)
  form on short slabs whose length comes from the contraction rule, chained
  over the horizon.

Both are L^2 based; the working norm is L^a_t L^(2 sigma + 2)_x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .propagator import GridSpec, SpectralField, lp_norm
from .rng_paths import BrownianPath

__all__ = [
    "AdmissiblePair",
    "SolverParams",
    "PicardReport",
    "Trajectory",
    "BlowUpError",
    "GlobalizationError",
    "sub_admissible",
    "a_range",
    "radius_rule",
    "slab_length",
    "nonlinear_phase_step",
    "split_step_evolve",
    "picard_slab",
    "globalize",
    "strichartz_norm",
    "calibrate_constants",
]

BLOWUP_FACTOR = 1e6
MAX_HALVINGS = 6


def _frac(x) -> Fraction:
    return Fraction(0) if np.isinf(x) else 1 / Fraction(float(x))


def sub_admissible(q: float, p: float, d: int) -> bool:
    """2/q > (d/2)(1/2 - 1/p), evaluated in exact rational arithmetic."""
    for v in (q, p):
        if not v > 1:
            raise ValueError("q and p must lie in (1, inf]")
    return 2 * _frac(q) > Fraction(d, 2) * (Fraction(1, 2) - _frac(p))


@dataclass(frozen=True)
class AdmissiblePair:
    q: float
    p: float
    d: int

    @property
    def is_sub_admissible(self) -> bool:
        return sub_admissible(self.q, self.p, self.d)


def a_range(d: int, sigma: float):
    """Open window (2(sigma+1), 8(sigma+1)/(d sigma)) for the time exponent a.

    Returns ``()`` when empty, which happens exactly when d sigma >= 4.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if d * sigma >= 4:
        return ()
    return (2.0 * (sigma + 1.0), 8.0 * (sigma + 1.0) / (d * sigma))


def radius_rule(psi0_l2: float, C1_hat: float) -> float:
    """Ball radius R = 2 C1 ||psi0||_2."""
    if not C1_hat > 0:
        raise ValueError("C1_hat must be positive")
    return 2.0 * C1_hat * psi0_l2


def slab_length(R: float, lam: float, sigma: float, a: float, C2_hat: float, safety: float, horizon: float = np.inf) -> float:
    """Largest T with C2 |lam| T^(1 - (2 sigma + 2)/a) R^(2 sigma) = safety.

    Capped at ``horizon``; lam = 0 (linear flow) returns the horizon.
    """
    e = 1.0 - (2.0 * sigma + 2.0) / a
    if not e > 0:
        raise ValueError(f"a = {a} must exceed 2 sigma + 2 = {2 * sigma + 2}")
    if lam == 0 or R == 0:
        return horizon
    T = (safety / (C2_hat * abs(lam) * R ** (2.0 * sigma))) ** (1.0 / e)
    return min(T, horizon)


@dataclass(frozen=True)
class SolverParams:
    """Equation, window and discretisation parameters.

    ``lam`` is the coupling lambda (negative focusing); ``C1_hat``/``C2_hat``
    are empirical Strichartz constants (see :func:`calibrate_constants`).
    """

    d: int
    sigma: float
    lam: float
    a: float
    T: float
    grid: GridSpec
    dt: float
    picard_tol: float = 1e-10
    picard_max_iters: int = 60
    C1_hat: float = 1.0
    C2_hat: float = 1.0
    safety: float = 0.5

    def __post_init__(self):
        if self.grid.d != self.d:
            raise ValueError("grid dimension does not match d")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        if not 0 < self.safety < 1:
            raise ValueError("safety must lie in (0, 1)")
        win = a_range(self.d, self.sigma)
        if win and not win[0] < self.a < win[1]:
            raise ValueError(f"a = {self.a} outside the window {win} for d={self.d}, sigma={self.sigma}")

    @property
    def p_x(self) -> float:
        return 2.0 * self.sigma + 2.0


@dataclass
class PicardReport:
    iterates: int
    residuals: list
    contraction_ratios: list
    converged: bool
    slab_T: float


@dataclass
class Trajectory:
    """Discrete solution: time nodes, path values, norms and snapshots."""

    times: np.ndarray
    W: np.ndarray
    mass: np.ndarray
    norms: dict
    snapshots: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    slab_id: np.ndarray = None
    picard_iters: np.ndarray = None

    @property
    def final(self) -> SpectralField:
        return self.snapshots[-1]

    def norm_series(self, p: float) -> np.ndarray:
        try:
            return self.norms[float(p)]
        except KeyError:
            raise KeyError(f"no cached L^{p} norms; available: {sorted(self.norms)}") from None


class BlowUpError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class GlobalizationError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


def nonlinear_phase_step(field: SpectralField, lam: float, sigma: float, dt: float) -> SpectralField:
    """Exact flow of i psi_t = lam |psi|^(2 sigma) psi over dt (|psi| is conserved)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if lam == 0 or dt == 0:
        return SpectralField(field.grid, field.values.copy())
    v = field.values
    return SpectralField(field.grid, v * np.exp(-1j * lam * dt * np.abs(v) ** (2.0 * sigma)))


def _step_nodes(path: BrownianPath, t0: float, T: float, dt: float):
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt = {dt} does not divide the interval length {T}")
    times = t0 + dt * np.arange(K + 1)
    if times[-1] > path.grid.T * (1 + 1e-12):
        raise ValueError("time grid runs past the path horizon")
    try:
        W = path(times)
    except ValueError:
        raise ValueError(
            f"step grid (dt={dt}) is not aligned with the path nodes (spacing {path.h}); refine the path"
        ) from None
    return times, np.asarray(W, float)


def _lp_rows(V, p, vol):
    a = np.abs(V)
    if np.isinf(p):
        return a.max(axis=tuple(range(1, V.ndim)))
    return (np.sum(a**p, axis=tuple(range(1, V.ndim))) * vol) ** (1.0 / p)


def _trap(y, t):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def _xnorm(rows_pnorm, t, a):
    """L^a_t norm of a sampled series (trapezoid rule)."""
    return _trap(rows_pnorm**a, t) ** (1.0 / a)


def split_step_evolve(psi0: SpectralField, path: BrownianPath, params: SolverParams, stride: int | None = None, norm_ps=None) -> Trajectory:
    """Lie splitting: P(W_{t+dt} - W_t), then the nonlinear phase over dt.

    Mass and the L^(2 sigma + 2) norm (plus ``norm_ps``) are recorded at every
    step; snapshots every ``stride`` steps (default: start and end only).
    """
    times, W = _step_nodes(path, 0.0, params.T, params.dt)
    ps = sorted({params.p_x, 2.0, *(float(p) for p in (norm_ps or ()))})
    K = times.size - 1
    stride = stride or K
    xi2 = params.grid.xi2()
    psi = psi0.values.copy()
    norms = {p: np.empty(K + 1) for p in ps}
    snaps, snap_t = [], []

    def record(k):
        f = SpectralField(params.grid, psi)
        for p in ps:
            norms[p][k] = lp_norm(f, p)
        if k % stride == 0 or k == K:
            snaps.append(SpectralField(params.grid, psi.copy()))
            snap_t.append(times[k])

    record(0)
    ref = max(norms[params.p_x][0], 1e-300)
    for k in range(K):
        tau = W[k + 1] - W[k]
        psi = np.fft.ifftn(np.fft.fftn(psi) * np.exp(-1j * tau * xi2))
        if params.lam != 0:
            psi = psi * np.exp(-1j * params.lam * params.dt * np.abs(psi) ** (2.0 * params.sigma))
        record(k + 1)
        if not np.isfinite(norms[params.p_x][k + 1]) or norms[params.p_x][k + 1] > BLOWUP_FACTOR * ref:
            tr = Trajectory(times[: k + 2], W[: k + 2], norms[2.0][: k + 2], {p: v[: k + 2] for p, v in norms.items()}, snaps, snap_t)
            raise BlowUpError(f"L^{params.p_x} norm grew by more than {BLOWUP_FACTOR:g} at t={times[k + 1]}", tr)
    return Trajectory(times, W, norms[2.0], norms, snaps, snap_t,
                      np.zeros(K + 1, dtype=int), np.zeros(K + 1, dtype=int))


def _free_hat(psi_hat0, W, xi2):
    """Fourier-space free evolution u_k = P(W_k - W_0) psi0 for all nodes."""
    ph = np.exp(-1j * np.multiply.outer(W - W[0], xi2))
    return psi_hat0[None] * ph


def _duhamel(F, W, dt, xi2):
    """D_k = sum_{i<k} dt P(W_k - W_i) F_i via D_{k+1} = P(dW_k)(D_k + dt F_i)."""
    K = F.shape[0] - 1
    D = np.zeros_like(F)
    acc = np.zeros(F.shape[1:], dtype=complex)
    for k in range(K):
        acc = np.fft.ifftn(np.fft.fftn(acc + dt * F[k]) * np.exp(-1j * (W[k + 1] - W[k]) * xi2))
        D[k + 1] = acc
    return D


def picard_slab(psi_init: SpectralField, path: BrownianPath, slab, params: SolverParams, record: bool = True):
    """Fixed-point iteration of the mild form on one slab [t0, t0 + T_slab].

    Gamma(psi)(t) = P_{t0,t} psi_init - i lam int_{t0}^t P_{s,t} |psi|^(2 sigma) psi(s) ds,
    with the integral taken by left-endpoint rectangles on the step grid.
    Starting from the free evolution, iterate until successive iterates are
    closer than ``picard_tol`` in L^a_t L^(2 sigma + 2)_x.

    Returns ``(state at slab end, PicardReport, Trajectory)``.
    """
    t0, T_slab = slab
    times, W = _step_nodes(path, t0, T_slab, params.dt)
    grid = params.grid
    xi2 = grid.xi2()
    axes = tuple(range(1, grid.d + 1))
    vol = grid.cell_volume
    U = np.fft.ifftn(_free_hat(np.fft.fftn(psi_init.values), W, xi2), axes=axes)
    psi = U
    residuals, it, converged = [], 0, False
    s2 = 2.0 * params.sigma
    for it in range(1, params.picard_max_iters + 1):
        if params.lam == 0:
            new = U
        else:
            F = np.abs(psi) ** s2 * psi
            new = U - 1j * params.lam * _duhamel(F, W, params.dt, xi2)
        r = _xnorm(_lp_rows(new - psi, params.p_x, vol), times, params.a)
        residuals.append(r)
        psi = new
        if not np.isfinite(r):
            break
        if r < params.picard_tol:
            converged = True
            break
    ratios = [residuals[i + 1] / residuals[i] for i in range(len(residuals) - 1) if residuals[i] > 0]
    report = PicardReport(it, residuals, ratios, converged, float(T_slab))
    final = SpectralField(grid, psi[-1]) if np.all(np.isfinite(psi[-1])) else None
    traj = None
    if record:
        ps = sorted({params.p_x, 2.0})
        norms = {p: _lp_rows(psi, p, vol) for p in ps}
        traj = Trajectory(times, W, norms[2.0], norms,
                          [SpectralField(grid, psi[0])] + ([final] if final is not None else []),
                          [times[0], times[-1]],
                          np.zeros(times.size, dtype=int), np.full(times.size, it))
    return final, report, traj


def globalize(psi0: SpectralField, path: BrownianPath, params: SolverParams, horizon: float | None = None) -> Trajectory:
    """Chain Picard slabs up to ``horizon`` (default ``params.T``).

    Every slab restarts the radius rule from the current L^2 norm; a slab
    that fails to converge is halved, at most six times.
    """
    if params.d * params.sigma >= 4:
        raise ValueError(f"requires sigma < 4/d (got d={params.d}, sigma={params.sigma})")
    horizon = params.T if horizon is None else horizon
    total = int(round(horizon / params.dt))
    if abs(total * params.dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("dt must divide the horizon")
    psi = psi0
    k = 0
    parts = []
    sid = 0
    while k < total:
        R = radius_rule(lp_norm(psi, 2.0), params.C1_hat)
        Ts = slab_length(R, params.lam, params.sigma, params.a, params.C2_hat, params.safety, horizon)
        K = min(total - k, max(1, int(math.floor(Ts / params.dt + 1e-9))))
        for _ in range(MAX_HALVINGS + 1):
            end, rep, tr = picard_slab(psi, path, (k * params.dt, K * params.dt), params)
            if rep.converged:
                break
            if K == 1:
                break
            K = max(1, K // 2)
        if not rep.converged:
            diag = _concat(parts, sid) if parts else tr
            raise GlobalizationError(
                f"slab at t={k * params.dt:g} did not converge after {MAX_HALVINGS} halvings "
                f"(last residual {rep.residuals[-1]:.3g})", diag)
        ref = parts[0][0].norms[params.p_x][0] if parts else tr.norms[params.p_x][0]
        if np.max(tr.norms[params.p_x]) > BLOWUP_FACTOR * max(ref, 1e-300):
            raise BlowUpError(f"L^{params.p_x} norm exceeded {BLOWUP_FACTOR:g} times its initial value", _concat(parts + [(tr, sid)], sid))
        parts.append((tr, sid))
        sid += 1
        psi = end
        k += K
    return _concat(parts, sid)


def _concat(parts, _sid):
    times, W, mass, iters, sids = [], [], [], [], []
    norms = {}
    snaps, snap_t = [], []
    for n, (tr, sid) in enumerate(parts):
        sl = slice(0 if n == 0 else 1, None)
        times.append(tr.times[sl])
        W.append(tr.W[sl])
        mass.append(tr.mass[sl])
        iters.append(tr.picard_iters[sl])
        sids.append(np.full(tr.times[sl].size, sid))
        for p, v in tr.norms.items():
            norms.setdefault(p, []).append(v[sl])
        if n == 0:
            snaps.append(tr.snapshots[0])
            snap_t.append(tr.snapshot_times[0])
        snaps.append(tr.snapshots[-1])
        snap_t.append(tr.snapshot_times[-1])
    return Trajectory(np.concatenate(times), np.concatenate(W), np.concatenate(mass),
                      {p: np.concatenate(v) for p, v in norms.items()}, snaps, snap_t,
                      np.concatenate(sids), np.concatenate(iters))


def strichartz_norm(traj: Trajectory, a: float, p_x: float) -> float:
    """(int ||psi(t)||_{p_x}^a dt)^(1/a) by the trapezoid rule on the stored nodes."""
    return _xnorm(traj.norm_series(p_x), traj.times, a)


def calibrate_constants(psi0: SpectralField, sigma: float, a: float, paths, dt: float, T: float = 1.0, inflate: float = 1.5):
    """Empirical (C1_hat, C2_hat) from free evolutions along ``paths``.

    C1: max of ||P_{0,.} psi0||_{L^a L^(2 sigma + 2)} / ||psi0||_2.
    C2: max of (2 sigma + 1) ||Duhamel(|u|^(2 sigma) u)|| /
    (T^(1 - (2 sigma + 2)/a) ||u||^(2 sigma + 1)) with u the free evolution,
    the Lipschitz form of the contraction estimate.  Both are inflated by
    ``inflate``.
    """
    grid = psi0.grid
    xi2 = grid.xi2()
    axes = tuple(range(1, grid.d + 1))
    px = 2.0 * sigma + 2.0
    m = lp_norm(psi0, 2.0)
    if m == 0:
        raise ValueError("cannot calibrate on the zero field")
    c1, c2 = 0.0, 0.0
    for path in paths:
        times, W = _step_nodes(path, 0.0, T, dt)
        U = np.fft.ifftn(_free_hat(np.fft.fftn(psi0.values), W, xi2), axes=axes)
        un = _xnorm(_lp_rows(U, px, grid.cell_volume), times, a)
        D = _duhamel(np.abs(U) ** (2 * sigma) * U, W, dt, xi2)
        dn = _xnorm(_lp_rows(D, px, grid.cell_volume), times, a)
        c1 = max(c1, un / m)
        c2 = max(c2, (2 * sigma + 1) * dn / (T ** (1 - px / a) * un ** (2 * sigma + 1)))
    return inflate * c1, inflate * c2
