"""Configured experiments: parse ``key=value`` configs, run, write artifacts.

Every run directory gets its CSVs (17 significant digits, ``\\n`` line ends),
optional WNDF field snapshots, and finally ``manifest.json`` with the config
echo, package version, wall time and SHA-256 checksums of the other files.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .hls_mc import (
    Ensemble,
    anchor_kappa,
    estimate_tail,
    fit_scaling_exponent,
    moment_from_samples,
    sample_cell_integrals,
    verify_inequality,
)
from .io import emit_csv
from .nls_solver import (
    BlowUpError,
    GlobalizationError,
    SolverParams,
    a_range,
    calibrate_constants,
    globalize,
    split_step_evolve,
    strichartz_norm,
    sub_admissible,
)
from .propagator import (
    GridSpec,
    apply_propagator,
    dispersive_slope,
    gaussian_field,
    lp_norm,
    strichartz_ratio,
    write_field,
)
from .rng_paths import DyadicGrid, generate_path, spawn_seed
from .singular_kernel import ExponentSet

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "parse_config",
    "run_experiment",
    "write_manifest",
]

EXPERIMENTS = ("hls-moments", "hls-tails", "hls-extremal", "dispersive", "strichartz", "solve", "sigma-sweep")

EXIT_PASS, EXIT_OPERATIONAL, EXIT_PROPERTY = 0, 1, 2


class ConfigError(ValueError):
    pass


def _parse_levels(s: str) -> tuple:
    s = s.strip()
    if ".." in s:
        lo, hi = s.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in s.split(","))


def _parse_floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(","))


# key -> (attribute, parser)
_KEYS = {
    "experiment": ("experiment", str),
    "seed": ("master_seed", int),
    "paths": ("M", int),
    "N": ("N", int),
    "N_range": ("N_range", _parse_levels),
    "alpha": ("alpha", float),
    "p": ("p", _parse_floats),
    "q": ("q", float),
    "d": ("d", int),
    "sigma": ("sigma", _parse_floats),
    "lambda": ("lam", float),
    "a": ("a", float),
    "T": ("T", float),
    "n": ("n", int),
    "L": ("L", float),
    "dt": ("dt", float),
    "out": ("output_dir", str),
    "epsilon": ("epsilon", float),
    "kappa": ("kappa", float),
    "amp": ("amp", float),
    "tau_min": ("tau_min", float),
    "tau_max": ("tau_max", float),
}

# keys without a usable default, per experiment
_REQUIRED = {"solve": ("d", "sigma", "lambda", "a", "T", "n", "L", "dt")}

_DEFAULTS = {
    "hls-moments": dict(M=10_000, N_range=tuple(range(2, 9)), alpha=0.5, p=(1.0, 2.0)),
    "hls-tails": dict(M=10_000, N_range=tuple(range(4, 9)), alpha=0.5, epsilon=0.1),
    "hls-extremal": dict(M=1_000, N_range=tuple(range(4, 9)), alpha=0.5, p=(1.25,), q=1.25),
    "dispersive": dict(d=1, p=(np.inf,)),
    "strichartz": dict(M=100, d=1, p=(4.0,), q=8.0, T=1.0, n=1024, L=128.0, dt=2.0**-8),
    "solve": dict(M=10, amp=1.0),
    "sigma-sweep": dict(M=50, d=1, sigma=(0.5, 1.0, 2.0, 3.0, 3.5), lam=-1.0, T=1.0, n=512, L=64.0,
                        dt=2.0**-10, amp=1.0),
}

_DISPERSIVE_GRIDS = {1: (8192, 4096.0, 10.0, 100.0), 2: (1024, 512.0, 4.0, 16.0)}


@dataclass
class ExperimentConfig:
    """Validated settings for one run.  Unset fields take per-experiment defaults."""

    experiment: str
    master_seed: int = 0
    M: int = 100
    N: int | None = None
    N_range: tuple = ()
    alpha: float = 0.5
    p: tuple = ()
    q: float | None = None
    d: int = 1
    sigma: tuple = ()
    lam: float = 0.0
    a: float | None = None
    T: float = 1.0
    n: int | None = None
    L: float | None = None
    dt: float | None = None
    output_dir: str = "runs"
    epsilon: float = 0.1
    kappa: float | None = None
    amp: float = 1.0
    tau_min: float | None = None
    tau_max: float | None = None
    given: tuple = field(default=(), repr=False)

    def echo(self) -> dict:
        out = asdict(self)
        out.pop("given")
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items()}

    def single_p(self) -> float:
        if len(self.p) != 1:
            raise ConfigError(f"{self.experiment} takes a single p, got {self.p}")
        return self.p[0]


def _parse_lines(text: str) -> dict:
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    return kv


def parse_config(text: str = "", overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from ``key=value`` lines; ``overrides`` (flags) win.

    Unknown keys, unparsable values and violated preconditions raise
    :class:`ConfigError` naming the offending key or constraint.
    """
    kv = _parse_lines(text or "")
    for k, v in (overrides or {}).items():
        if v is not None:
            kv[k] = str(v)
    unknown = sorted(set(kv) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)} (known: {', '.join(_KEYS)})")
    exp = kv.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose one of {', '.join(EXPERIMENTS)}")
    missing = [k for k in _REQUIRED.get(exp, ()) if k not in kv]
    if missing:
        raise ConfigError(f"{exp} requires keys: {', '.join(missing)}")
    vals = dict(_DEFAULTS[exp])
    for k, v in kv.items():
        attr, conv = _KEYS[k]
        try:
            vals[attr] = conv(v)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    vals["experiment"] = exp
    cfg = ExperimentConfig(**vals, given=tuple(sorted(kv)))
    _validate(cfg)
    return cfg


def _pow2(x) -> bool:
    return x is not None and x >= 1 and int(x) == x and int(x) & (int(x) - 1) == 0


def _check(ok, msg):
    if not ok:
        raise ConfigError(msg)


def _validate(c: ExperimentConfig):
    _check(c.M >= 1, "paths must be >= 1")
    _check(c.master_seed >= 0, "seed must be nonnegative")
    e = c.experiment
    if e.startswith("hls-"):
        _check(0 < c.alpha < 1, "requires 0 < alpha < 1 (integrable kernel)")
        _check(len(c.N_range) >= 1 and min(c.N_range) >= 0, "N_range must list nonnegative levels")
    if e == "hls-moments":
        _check(all(float(p).is_integer() and 1 <= p <= 6 for p in c.p), "moment orders p must be integers in 1..6")
        _check(len(set(c.N_range)) >= 4, "scaling fit requires at least 4 levels in N_range")
    if e == "hls-tails":
        _check(0 < c.epsilon < 1, "requires 0 < epsilon < 1")
        _check(c.kappa is None or c.kappa > 0, "requires kappa > 0")
        _check(len(c.N_range) >= 2, "tail trend requires at least 2 levels")
    if e == "hls-extremal":
        p = c.single_p()
        _check(p > 1 and c.q is not None and c.q > 1, "requires p, q in (1, inf)")
        s = 1 / p + 1 / c.q
        _check(s < 2 - c.alpha / 2,
               f"requires 1/p + 1/q < 2 - alpha/2 (got {s:.6g} >= {2 - c.alpha / 2:.6g})")
    if e in ("dispersive", "strichartz", "solve", "sigma-sweep"):
        _check(c.d in (1, 2), "requires d in {1, 2}")
    if e == "dispersive":
        _check(c.single_p() >= 2, "requires p in [2, inf]")
        _check(c.n is None or _pow2(c.n), "grid n must be a power of two")
        _check(c.L is None or c.L > 0, "grid L must be positive")
    if e in ("strichartz", "solve", "sigma-sweep"):
        _check(_pow2(c.n), "grid n must be a power of two")
        _check(c.L > 0 and c.T > 0 and c.dt > 0, "L, T and dt must be positive")
        span = 2 * c.T if e == "strichartz" else c.T
        _check(_pow2(span / c.dt), f"dt must equal {span:g} / 2^k so steps sit on dyadic path nodes")
    if e == "strichartz":
        p = c.single_p()
        _check(p > 1 and c.q > 1 and sub_admissible(c.q, p, c.d),
               f"requires a sub-admissible pair: 2/q > (d/2)(1/2 - 1/p), got (q, p) = ({c.q}, {p})")
    if e in ("solve", "sigma-sweep"):
        for s in c.sigma:
            _check(s > 0, "requires sigma > 0")
            _check(c.d * s < 4, f"requires sigma < 4/d (got sigma={s}, d={c.d})")
    if e == "solve":
        _check(len(c.sigma) == 1, "solve takes a single sigma")
        lo, hi = a_range(c.d, c.sigma[0])
        _check(lo < c.a < hi, f"requires a in ({lo:g}, {hi:g}), i.e. d sigma/4 < 2(sigma+1)/a < 1")


# ---------------------------------------------------------------------------
# runners; each returns (files, verdict or None, summary dict)


def _level_for(span, dt):
    return int(round(math.log2(span / dt)))


def _run_moments(c: ExperimentConfig, out: Path):
    ens = Ensemble(DyadicGrid(c.T, 0), c.M, c.master_seed)
    rows, fits = [], []
    est = {int(p): [] for p in c.p}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for N in c.N_range:
            x = sample_cell_integrals(ens, 0, 0, c.alpha, N=N)
            for p in est:
                m = moment_from_samples(x, p, c.alpha, N, c.T / 2**N)
                est[p].append(m)
                rows.append((c.alpha, p, N, m.mean, m.std_err, m.M))
    ok = True
    for p, es in est.items():
        slope, icpt, (lo, hi) = fit_scaling_exponent(es)
        expect = p * (2 - c.alpha / 2)
        ok &= abs(slope - expect) <= 0.05
        fits.append((c.alpha, p, slope, icpt, lo, hi, expect))
    f1 = emit_csv(rows, ["alpha", "p", "N", "mean", "stderr", "M"], out / "moments.csv")
    f2 = emit_csv(fits, ["alpha", "p", "slope", "intercept", "ci_lo", "ci_hi", "expected"], out / "moment_fit.csv")
    return [f1, f2], ok, {f"slope_p{int(r[1])}": r[2] for r in fits}


def _run_tails(c: ExperimentConfig, out: Path):
    ens = Ensemble(DyadicGrid(c.T, 0), c.M, c.master_seed)
    kappa = c.kappa if c.kappa is not None else anchor_kappa(ens, c.alpha, N=c.N_range[0])
    te = estimate_tail(ens, c.alpha, kappa, c.N_range, epsilon=c.epsilon)
    rows = [(c.alpha, kappa, N, int(k), c.M) for N, k in zip(c.N_range, te.counts)]
    f1 = emit_csv(rows, ["alpha", "kappa", "N", "count", "M"], out / "tails.csv")
    summ = dict(kappa=kappa, trend_slope=te.trend_slope, trend_pvalue=te.trend_pvalue,
                strictly_decreasing=te.strictly_decreasing, fitted_rate=te.fitted_rate,
                N_epsilon=te.N_epsilon, epsilon=c.epsilon, kappa_epsilon=te.kappa_epsilon,
                omega_coverage=te.omega_coverage, below_resolution=te.below_resolution)
    f2 = emit_csv([summ], list(summ), out / "tail_summary.csv")
    ok = (te.trend_pvalue < 0.05 and te.strictly_decreasing and te.omega_coverage >= 1 - c.epsilon)
    return [f1, f2], bool(ok), summ


def _run_extremal(c: ExperimentConfig, out: Path):
    p = c.single_p()
    ens = Ensemble(DyadicGrid(c.T, 0), c.M, c.master_seed)
    rep = verify_inequality(ens, ExponentSet(c.alpha, p, c.q), c.N_range)
    rows = [(c.alpha, p, c.q, N, i, rep.values[i, l], int(rep.iterations[i, l]))
            for i in range(c.M) for l, N in enumerate(c.N_range)]
    f1 = emit_csv(rows, ["alpha", "p", "q", "N", "path_index", "value", "iters"], out / "extremal.csv")
    qs = rep.quantiles()
    summ_rows = [(N, rep.maxima[l], qs[0.5][l], qs[0.9][l], qs[0.99][l]) for l, N in enumerate(c.N_range)]
    f2 = emit_csv(summ_rows, ["N", "max", "q50", "q90", "q99"], out / "extremal_summary.csv")
    return [f1, f2], rep.verdict == "PASS", dict(growth_slope=rep.growth_slope, verdict=rep.verdict)


def _run_dispersive(c: ExperimentConfig, out: Path):
    n0, L0, t0, t1 = _DISPERSIVE_GRIDS[c.d]
    grid = GridSpec(c.d, c.n or n0, c.L or L0)
    p = c.single_p()
    taus = np.geomspace(c.tau_min or t0, c.tau_max or t1, 12)
    psi0 = gaussian_field(grid)
    norms = [lp_norm(apply_propagator(psi0, t), p) for t in taus]
    exact = [(1 + 4 * t * t) ** (-c.d / 4) if np.isinf(p) else float("nan") for t in taus]
    f1 = emit_csv(list(zip(taus, norms, exact)), ["tau", "Lp_norm", "closed_form"], out / "dispersive.csv")
    slope = dispersive_slope(psi0, p, taus)
    expect = -c.d * (0.5 - (0 if np.isinf(p) else 1 / p))
    ok = abs(slope - expect) <= 0.05
    if np.isinf(p):
        ok &= max(abs(a - b) for a, b in zip(norms, exact)) <= 1e-8
    return [f1], bool(ok), dict(slope=slope, expected=expect)


def _run_strichartz(c: ExperimentConfig, out: Path):
    p = c.single_p()
    grid = GridSpec(c.d, c.n, c.L)
    psi0 = gaussian_field(grid)
    level = _level_for(2 * c.T, c.dt)
    rows, r1, r2 = [], [], []
    for i in range(c.M):
        path = generate_path(DyadicGrid(2 * c.T, level), spawn_seed(c.master_seed, i))
        t = path.times
        a = strichartz_ratio(psi0, path, c.q, p, t[t <= c.T + 1e-12])
        b = strichartz_ratio(psi0, path, c.q, p, t)
        r1.append(a)
        r2.append(b)
        rows += [(i, c.T, a), (i, 2 * c.T, b)]
    f1 = emit_csv(rows, ["path_index", "T", "ratio"], out / "strichartz.csv")
    r1, r2 = np.array(r1), np.array(r2)
    spread = float(r1.max() / np.median(r1))
    growth = float(np.median(r2) / np.median(r1))
    ok = spread < 10 and growth <= 2 ** (1 / c.q)
    return [f1], bool(ok), dict(max_over_median=spread, median_growth_2T=growth, isometric_growth=2 ** (1 / c.q))


def _traj_rows(tr, px):
    return [(t, w, m, v, int(s), int(k)) for t, w, m, v, s, k in
            zip(tr.times, tr.W, tr.mass, tr.norm_series(px), tr.slab_id, tr.picard_iters)]


_TRAJ_COLS = ["t", "W_t", "mass", "Lp_norm", "slab_id", "picard_iters"]


def _run_solve(c: ExperimentConfig, out: Path):
    sigma = c.sigma[0]
    grid = GridSpec(c.d, c.n, c.L)
    psi0 = gaussian_field(grid) * c.amp
    level = _level_for(c.T, c.dt)
    cal = [generate_path(DyadicGrid(c.T, level), spawn_seed(c.master_seed, 1 + i)) for i in range(c.M)]
    C1, C2 = calibrate_constants(psi0, sigma, c.a, cal, c.dt, c.T)
    prm = SolverParams(c.d, sigma, c.lam, c.a, c.T, grid, c.dt, C1_hat=C1, C2_hat=C2)
    path = generate_path(DyadicGrid(c.T, level), spawn_seed(c.master_seed, 0))
    ss = split_step_evolve(psi0, path, prm)
    pic = globalize(psi0, path, prm)
    px = prm.p_x
    files = [
        emit_csv(_traj_rows(pic, px), _TRAJ_COLS, out / "trajectory_picard.csv"),
        emit_csv(_traj_rows(ss, px), _TRAJ_COLS, out / "trajectory_split.csv"),
        write_field(pic.final, out / "picard_final.wndf", tau=float(path(c.T))),
        write_field(ss.final, out / "split_final.wndf", tau=float(path(c.T))),
    ]
    drift = float(np.max(np.abs(ss.mass - ss.mass[0])))
    summ = dict(C1_hat=C1, C2_hat=C2, slabs=int(pic.slab_id.max() + 1),
                max_picard_iters=int(pic.picard_iters.max()),
                strichartz_picard=strichartz_norm(pic, c.a, px),
                strichartz_split=strichartz_norm(ss, c.a, px),
                terminal_difference=lp_norm(pic.final - ss.final, 2.0),
                split_mass_drift=drift)
    files.append(emit_csv([summ], list(summ), out / "solve_summary.csv"))
    return files, drift <= 1e-10, summ


def sigma_sweep_table(c: ExperimentConfig) -> list:
    """Per-sigma Strichartz norms of split-step solutions over ``c.M`` paths."""
    grid = GridSpec(c.d, c.n, c.L)
    psi0 = gaussian_field(grid) * c.amp
    level = _level_for(c.T, c.dt)
    paths = [generate_path(DyadicGrid(c.T, level), spawn_seed(c.master_seed, i)) for i in range(c.M)]
    rows = []
    for sigma in c.sigma:
        lo, hi = a_range(c.d, sigma)
        a = 0.5 * (lo + hi)
        prm = SolverParams(c.d, sigma, c.lam, a, c.T, grid, c.dt)
        px = prm.p_x
        full, half, free, peak = [], [], [], []
        failures = 0
        for path in paths:
            try:
                tr = split_step_evolve(psi0, path, prm)
            except BlowUpError:
                failures += 1
                continue
            nrm = tr.norm_series(px)
            k = tr.times.size // 2
            full.append(strichartz_norm(tr, a, px))
            half.append((np.sum(0.5 * (nrm[1:k + 1] ** a + nrm[:k] ** a)) * c.dt) ** (1 / a))
            peak.append(nrm.max() / nrm[0])
            lin = replace(prm, lam=0.0)
            free.append(strichartz_norm(split_step_evolve(psi0, path, lin), a, px))
        full, half, free, peak = map(np.array, (full, half, free, peak))
        ok = full.size > 0
        rows.append(dict(
            sigma=sigma, a=a, p_x=px, M=c.M, failures=failures,
            median_norm=float(np.median(full)) if ok else float("nan"),
            max_norm=float(full.max()) if ok else float("nan"),
            median_free_norm=float(np.median(free)) if ok else float("nan"),
            median_growth_half_to_full=float(np.median(full / half)) if ok else float("nan"),
            max_peak_ratio=float(peak.max()) if ok else float("nan"),
        ))
    return rows


def _run_sweep(c: ExperimentConfig, out: Path):
    rows = sigma_sweep_table(c)
    f = emit_csv(rows, list(rows[0]), out / "sigma_sweep.csv")
    # exploratory: reported, never gated
    return [f], None, {f"sigma={r['sigma']:g}": r["median_norm"] for r in rows}


_RUNNERS = {
    "hls-moments": _run_moments,
    "hls-tails": _run_tails,
    "hls-extremal": _run_extremal,
    "dispersive": _run_dispersive,
    "strichartz": _run_strichartz,
    "solve": _run_solve,
    "sigma-sweep": _run_sweep,
}


@dataclass
class RunResult:
    directory: Path
    exit_code: int
    verdict: bool | None
    summary: dict


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: Path, cfg: ExperimentConfig, files, wall_time: float, verdict, summary) -> Path:
    """Manifest written after every other file: config, version, wall time, checksums."""
    directory = Path(directory)
    man = dict(
        config=cfg.echo(),
        code_version=__version__,
        wall_time_s=wall_time,
        verdict=None if verdict is None else ("PASS" if verdict else "FAIL"),
        summary={k: (v.item() if isinstance(v, np.generic) else v) for k, v in summary.items()},
        files={Path(f).name: _sha256(Path(f)) for f in files},
    )
    dest = directory / "manifest.json"
    dest.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    return dest


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run ``cfg`` into ``<output_dir>/<experiment>``; exit code 0 PASS, 2 FAIL."""
    out = Path(cfg.output_dir) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "manifest.json"
    if stale.exists():
        stale.unlink()
    t0 = time.perf_counter()
    files, verdict, summary = _RUNNERS[cfg.experiment](cfg, out)
    write_manifest(out, cfg, files, time.perf_counter() - t0, verdict, summary)
    code = EXIT_PASS if verdict in (True, None) else EXIT_PROPERTY
    return RunResult(out, code, verdict, summary)
