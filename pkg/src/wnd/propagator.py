"""Random Schroedinger propagator on a periodic spectral grid.

The linear flow between times s and t is the Fourier multiplier
exp(-i |xi|^2 (W_t - W_s)); it depends on the path only through the phase
tau = W_t - W_s, which may be zero or negative.  R^d is truncated to the
periodic box [-L/2, L/2)^d, with L chosen so that test data stays away from
the boundary over the tau range used (see :func:`wrap_tau`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .rng_paths import BrownianPath

__all__ = [
    "GridSpec",
    "SpectralField",
    "apply_propagator",
    "adjoint_propagator",
    "lp_norm",
    "conjugate_exponent",
    "dispersive_ratio",
    "dispersive_slope",
    "wrap_tau",
    "gaussian_field",
    "gaussian_evolved",
    "strichartz_ratio",
    "write_field",
    "read_field",
    "write_norm_series",
]

WNDF_MAGIC = b"WNDF"
WNDF_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid of n**d points on [-L/2, L/2)^d.

    Wavenumbers are xi = 2 pi k / L with k in fftfreq order, so the Nyquist
    wavenumber is pi n / L.
    """

    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"only d = 1 or 2 is supported, got d={self.d}")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two, got {self.n}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def nyquist(self) -> float:
        return np.pi * self.n / self.L

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    def axis(self) -> np.ndarray:
        return -self.L / 2 + self.dx * np.arange(self.n)

    def coords(self) -> list:
        """Meshgrid (ij indexing) of node coordinates."""
        return np.meshgrid(*([self.axis()] * self.d), indexing="ij")

    def xi2(self) -> np.ndarray:
        return _xi2(self)


@lru_cache(maxsize=16)
def _xi2(grid: GridSpec) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(grid.n, d=grid.dx)
    ks = np.meshgrid(*([k] * grid.d), indexing="ij")
    out = sum(kk * kk for kk in ks)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SpectralField:
    """Complex wavefunction sampled at the grid nodes (physical space)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise ValueError(f"values of shape {v.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        object.__setattr__(self, "values", v)

    def __mul__(self, c):
        return SpectralField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        return SpectralField(self.grid, self.values + other.values)

    def __sub__(self, other):
        return SpectralField(self.grid, self.values - other.values)

    def inner(self, other) -> complex:
        """<self, other> = sum conj(self) * other * dx^d."""
        return complex(np.vdot(self.values, other.values) * self.grid.cell_volume)

    @property
    def mass(self) -> float:
        return lp_norm(self, 2.0)


def _multiply(field: SpectralField, tau: float) -> SpectralField:
    tau = float(tau)
    if tau == 0.0:
        return SpectralField(field.grid, field.values.copy())
    phase = np.exp(-1j * tau * field.grid.xi2())
    return SpectralField(field.grid, np.fft.ifftn(np.fft.fftn(field.values) * phase))


def apply_propagator(field: SpectralField, tau: float) -> SpectralField:
    """Multiply each Fourier mode by exp(-i |xi|^2 tau); tau = W_t - W_s."""
    return _multiply(field, tau)


def adjoint_propagator(field: SpectralField, tau: float) -> SpectralField:
    """Adjoint (and inverse) of :func:`apply_propagator`: the phase -tau."""
    return _multiply(field, -tau)


def lp_norm(field: SpectralField, p: float) -> float:
    """(dx^d sum |psi|^p)^(1/p); p = inf is the grid maximum of |psi|."""
    p = float(p)
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    a = np.abs(field.values)
    if np.isinf(p):
        return float(a.max())
    if p == 2.0:
        return float(np.sqrt(np.sum(a * a) * field.grid.cell_volume))
    return float((np.sum(a**p) * field.grid.cell_volume) ** (1.0 / p))


def conjugate_exponent(p: float) -> float:
    p = float(p)
    if p == 1.0:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def dispersive_ratio(field: SpectralField, tau: float, p: float) -> float:
    """||P(tau) phi||_p |tau|^(d(1/2 - 1/p)) / ||phi||_p'."""
    p = float(p)
    if not p >= 2:
        raise ValueError("dispersive estimate needs p in [2, inf]")
    if tau == 0:
        raise ValueError("dispersive ratio undefined at tau = 0")
    d = field.grid.d
    expo = d * (0.5 - (0.0 if np.isinf(p) else 1.0 / p))
    den = lp_norm(field, conjugate_exponent(p))
    return lp_norm(apply_propagator(field, tau), p) * abs(tau) ** expo / den


def dispersive_slope(field: SpectralField, p: float, taus) -> float:
    """Least-squares slope of log ||P(tau) phi||_p against log |tau|."""
    taus = np.asarray(taus, float)
    norms = np.array([lp_norm(apply_propagator(field, t), p) for t in taus])
    return float(np.polyfit(np.log(np.abs(taus)), np.log(norms), 1)[0])


def wrap_tau(grid: GridSpec, xi_cut: float) -> float:
    """Largest |tau| before modes up to ``xi_cut`` starting near the origin wrap around.

    A mode xi moves at speed 2 xi per unit tau, so it reaches the box edge
    L/2 at tau = L / (4 xi).
    """
    return grid.L / (4.0 * xi_cut)


def gaussian_field(grid: GridSpec) -> SpectralField:
    """exp(-|x|^2 / 2) on the grid."""
    r2 = sum(x * x for x in grid.coords())
    return SpectralField(grid, np.exp(-r2 / 2.0))


def gaussian_evolved(grid: GridSpec, tau: float) -> SpectralField:
    """Closed-form P(tau) exp(-|x|^2/2) = (1 + 2i tau)^(-d/2) exp(-|x|^2 / (2 (1 + 2i tau)))."""
    z = 1.0 + 2j * tau
    r2 = sum(x * x for x in grid.coords())
    return SpectralField(grid, z ** (-grid.d / 2) * np.exp(-r2 / (2.0 * z)))


def _trapezoid(y, t):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def strichartz_ratio(psi0: SpectralField, path: BrownianPath, q: float, p: float, time_grid) -> float:
    """||P_{0,.} psi0||_{L^q_t L^p_x} / ||psi0||_2 by trapezoid rule over ``time_grid``.

    ``time_grid`` must consist of path nodes; the zero field gives 0.
    """
    from .nls_solver import sub_admissible

    d = psi0.grid.d
    if not sub_admissible(q, p, d):
        raise ValueError(f"(q, p) = ({q}, {p}) is not sub-admissible in d={d}: need 2/q > (d/2)(1/2 - 1/p)")
    t = np.asarray(time_grid, float)
    m = lp_norm(psi0, 2.0)
    if m == 0.0:
        return 0.0
    w = path(t) - path(np.array([0.0]))[0]
    norms = np.array([lp_norm(apply_propagator(psi0, tau), p) for tau in w])
    if np.isinf(q):
        return float(norms.max() / m)
    return _trapezoid(norms**q, t) ** (1.0 / q) / m


# ---------------------------------------------------------------------------
# I/O


def write_field(field: SpectralField, dest, tau: float = 0.0) -> Path:
    """Binary snapshot: b"WNDF", u32 version, u32 d, u32 n per axis, f64 L,
    f64 tau, then row-major little-endian complex128 values."""
    dest = Path(dest)
    g = field.grid
    head = WNDF_MAGIC + struct.pack("<II", WNDF_VERSION, g.d)
    head += struct.pack(f"<{g.d}I", *g.shape) + struct.pack("<dd", g.L, float(tau))
    dest.write_bytes(head + np.ascontiguousarray(field.values, dtype="<c16").tobytes())
    return dest


def read_field(src):
    """Inverse of :func:`write_field`; returns ``(field, tau)``."""
    raw = Path(src).read_bytes()
    if raw[:4] != WNDF_MAGIC:
        raise ValueError("not a WNDF snapshot")
    version, d = struct.unpack_from("<II", raw, 4)
    if version != WNDF_VERSION:
        raise ValueError(f"unsupported WNDF version {version}")
    off = 12
    shape = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    L, tau = struct.unpack_from("<dd", raw, off)
    off += 16
    if len(set(shape)) != 1:
        raise ValueError("only square grids are supported")
    vals = np.frombuffer(raw, dtype="<c16", offset=off).reshape(shape).astype(complex)
    return SpectralField(GridSpec(d, shape[0], L), vals), tau


def write_norm_series(dest, times, w, norms) -> Path:
    """CSV with columns (t, W_t, Lp_norm)."""
    from .io import emit_csv

    rows = [(t, wt, v) for t, wt, v in zip(times, w, norms)]
    return emit_csv(rows, ["t", "W_t", "Lp_norm"], dest)
