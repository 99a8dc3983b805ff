"""Brownian paths on dyadic time grids.

Paths are built by the Levy (Brownian bridge) construction: W(T) is drawn
first, then every refinement level inserts midpoints conditionally on their
neighbours.  Each level draws its normals from its own counter-based Philox
stream keyed by ``(master_seed, path_index)``, so a path generated directly at
level L is bit-identical to one generated coarser and refined up to L.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DyadicGrid",
    "SeedSpec",
    "BrownianPath",
    "spawn_seed",
    "generate_path",
    "refine_path",
    "increment",
    "dump_path_csv",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DyadicGrid:
    """Uniform partition of [0, T] into 2**N cells of width h = T / 2**N."""

    T: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"time horizon must be positive, got T={self.T}")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError(f"grid level must be a nonnegative integer, got N={self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return self.T / 2**self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(2**self.N + 1) * self.h

    def at_level(self, level: int) -> "DyadicGrid":
        return DyadicGrid(self.T, level)


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one independent random stream: ``(master_seed, path_index)``."""

    master_seed: int
    path_index: int

    @property
    def key(self) -> np.ndarray:
        # 128-bit Philox key; distinct (master, index) pairs give distinct keys.
        return np.array([self.master_seed & _MASK64, self.path_index & _MASK64], dtype=np.uint64)

    def stream(self, level: int) -> np.random.Generator:
        """Generator for the normals of refinement step ``level -> level + 1``.

        Level -1 is reserved for the terminal value W(T).
        """
        counter = np.array([0, 0, 0, level + 1], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))


def spawn_seed(master: int, index: int) -> SeedSpec:
    if index < 0:
        raise ValueError("path index must be nonnegative")
    return SeedSpec(int(master) & _MASK64, int(index))


@dataclass(frozen=True)
class BrownianPath:
    """A sampled Wiener trajectory stored densely at refinement ``level``."""

    grid: DyadicGrid
    values: np.ndarray
    seed: SeedSpec
    level: int = field(default=-1)

    def __post_init__(self):
        if self.level < 0:
            object.__setattr__(self, "level", self.grid.N)
        if self.level < self.grid.N:
            raise ValueError("path level cannot be below its base grid level")
        if self.values.shape != (2**self.level + 1,):
            raise ValueError("values do not match the refinement level")
        self.values.flags.writeable = False

    @property
    def h(self) -> float:
        """Spacing of the stored nodes."""
        return self.grid.T / 2**self.level

    @property
    def times(self) -> np.ndarray:
        return np.arange(2**self.level + 1) * self.h

    def node_index(self, t: float) -> int:
        x = t / self.h
        i = int(round(x))
        if abs(x - i) > 1e-9 * max(1.0, abs(x)) or not 0 <= i <= 2**self.level:
            raise ValueError(f"time {t!r} is not a node of the level-{self.level} grid")
        return i

    def at_level(self, level: int) -> np.ndarray:
        """Node values of the (coarser) level-``level`` subgrid."""
        if level > self.level:
            raise ValueError(f"path only resolved to level {self.level}, asked for {level}")
        return self.values[:: 2 ** (self.level - level)]

    def __call__(self, t):
        """W at node times (vectorised); off-grid times raise."""
        t = np.asarray(t, dtype=float)
        idx = np.rint(t / self.h)
        if np.any(np.abs(t / self.h - idx) > 1e-9 * np.maximum(1.0, np.abs(idx))):
            raise ValueError("off-grid time requested; paths are not interpolated")
        return self.values[idx.astype(int)]


def _bridge_refine(values: np.ndarray, level: int, T: float, seed: SeedSpec, target: int) -> np.ndarray:
    w = values
    for lev in range(level, target):
        h = T / 2**lev
        z = seed.stream(lev).standard_normal(2**lev)
        mid = 0.5 * (w[:-1] + w[1:]) + np.sqrt(h / 4.0) * z
        out = np.empty(2 * w.size - 1)
        out[0::2] = w
        out[1::2] = mid
        w = out
    return w


def generate_path(grid: DyadicGrid, seed: SeedSpec) -> BrownianPath:
    """Sample W on ``grid``; increments are i.i.d. N(0, h) and W(0) = 0."""
    w_T = np.sqrt(grid.T) * seed.stream(-1).standard_normal()
    w = _bridge_refine(np.array([0.0, w_T]), 0, grid.T, seed, grid.N)
    return BrownianPath(grid, w, seed, grid.N)


def refine_path(path: BrownianPath, target_level: int) -> BrownianPath:
    """Insert Brownian-bridge midpoints until ``target_level``.

    Existing node values are copied untouched.
    """
    if target_level < path.level:
        raise ValueError(
            f"cannot refine a level-{path.level} path down to level {target_level}"
        )
    if target_level == path.level:
        return path
    w = _bridge_refine(np.asarray(path.values), path.level, path.grid.T, path.seed, target_level)
    return BrownianPath(path.grid, w, path.seed, target_level)


def increment(path: BrownianPath, s: float, t: float) -> float:
    """W(t) - W(s) for node times s, t."""
    return float(path.values[path.node_index(t)] - path.values[path.node_index(s)])


def dump_path_csv(path: BrownianPath, dest) -> Path:
    """Debug dump with columns (level, j, t, W)."""
    dest = Path(dest)
    with dest.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["level", "j", "t", "W"])
        for j, (t, w) in enumerate(zip(path.times, path.values)):
            wr.writerow([path.level, j, f"{t:.17g}", f"{w:.17g}"])
    return dest
