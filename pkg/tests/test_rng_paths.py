import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from wnd.rng_paths import (
    BrownianPath,
    DyadicGrid,
    SeedSpec,
    dump_path_csv,
    generate_path,
    increment,
    refine_path,
    spawn_seed,
)


def _ensemble_values(M, N, master=2024, T=1.0):
    return np.stack([generate_path(DyadicGrid(T, N), spawn_seed(master, i)).values for i in range(M)])


def test_grid_nodes():
    g = DyadicGrid(2.0, 5)
    t = g.times
    assert t[0] == 0.0 and t[-1] == 2.0
    assert np.all(np.diff(t) > 0)
    assert g.h * 2**g.N == pytest.approx(g.T, rel=1e-16)


@pytest.mark.parametrize("T,N", [(0.0, 3), (-1.0, 3), (1.0, -1), (1.0, 2.5)])
def test_grid_rejects_bad_input(T, N):
    with pytest.raises(ValueError):
        DyadicGrid(T, N)


def test_starts_at_zero_and_is_deterministic():
    g = DyadicGrid(1.0, 8)
    a = generate_path(g, spawn_seed(7, 3))
    b = generate_path(g, spawn_seed(7, 3))
    assert a.values[0] == 0.0
    assert np.array_equal(a.values, b.values)


def test_values_read_only():
    p = generate_path(DyadicGrid(1.0, 3), spawn_seed(1, 0))
    with pytest.raises(ValueError):
        p.values[1] = 0.0


def test_terminal_variance():
    W1 = _ensemble_values(10_000, 10)[:, -1]
    assert abs(W1.var(ddof=1) - 1.0) <= 0.05


def test_increments_are_iid_normal():
    V = _ensemble_values(2000, 6, master=5)
    inc = np.diff(V, axis=1) / np.sqrt(1 / 64)
    assert stats.kstest(inc.ravel(), "norm").pvalue > 0.01


def test_refine_noop_and_refusal():
    p = generate_path(DyadicGrid(1.0, 4), spawn_seed(0, 0))
    assert refine_path(p, 4) is p
    q = refine_path(p, 6)
    with pytest.raises(ValueError):
        refine_path(q, 5)


def test_refine_preserves_old_nodes():
    p = generate_path(DyadicGrid(1.0, 4), spawn_seed(0, 9))
    q = refine_path(p, 7)
    assert np.array_equal(q.values[::8], p.values)


@given(st.integers(0, 2**63), st.integers(0, 2**31), st.integers(0, 6), st.integers(0, 5))
def test_refinement_consistency(master, index, N, m):
    """A path generated at a fine level equals one refined up from coarse."""
    s = spawn_seed(master, index)
    fine = generate_path(DyadicGrid(1.0, N + m), s)
    up = refine_path(generate_path(DyadicGrid(1.0, N), s), N + m)
    assert np.array_equal(fine.values, up.values)
    assert np.array_equal(fine.at_level(N), generate_path(DyadicGrid(1.0, N), s).values)


def test_bridge_midpoint_variance():
    coarse = np.array([0.0, 0.3, -0.2])
    g = DyadicGrid(1.0, 1)
    mids = np.array([
        refine_path(BrownianPath(g, coarse.copy(), spawn_seed(11, i)), 2).values[1] for i in range(10_000)
    ])
    h = 0.5
    assert abs(mids.mean() - 0.15) < 4 * np.sqrt(h / 4 / 10_000)
    assert abs(mids.var(ddof=1) / (h / 4) - 1) <= 0.05


def test_brownian_scaling_ks():
    V = _ensemble_values(10_000, 6, master=77)
    half = 5000
    c = 4
    for j in (2, 4, 8):  # t = j/64, ct = 4j/64
        a = V[:half, j]
        b = V[half:, c * j] / np.sqrt(c)
        assert stats.ks_2samp(a, b).pvalue > 0.01


def test_disjoint_increments_uncorrelated():
    V = _ensemble_values(10_000, 4, master=31)
    d1 = V[:, 4] - V[:, 0]
    d2 = V[:, 12] - V[:, 8]
    assert abs(np.corrcoef(d1, d2)[0, 1]) < 0.05


def test_increment_contract():
    p = generate_path(DyadicGrid(1.0, 5), spawn_seed(3, 3))
    assert increment(p, 0.25, 0.25) == 0.0
    assert increment(p, 0.25, 0.75) == -increment(p, 0.75, 0.25)
    assert increment(p, 0.0, 1.0) == p.values[-1]
    with pytest.raises(ValueError):
        increment(p, 0.0, 0.3)
    with pytest.raises(ValueError):
        p(np.array([0.01]))


def test_spawn_seed_streams():
    assert spawn_seed(5, 2) == spawn_seed(5, 2)
    draw = lambda s: s.stream(0).random(64)
    a, b, c = draw(spawn_seed(5, 0)), draw(spawn_seed(5, 1)), draw(spawn_seed(6, 0))
    assert np.all(a != b) and np.all(a != c)
    with pytest.raises(ValueError):
        spawn_seed(5, -1)


def test_seed_levels_use_distinct_streams():
    s = SeedSpec(1, 1)
    assert s.stream(0).random() != s.stream(1).random()


def test_dump_csv(tmp_path):
    p = generate_path(DyadicGrid(1.0, 3), spawn_seed(1, 1))
    f = dump_path_csv(p, tmp_path / "p.csv")
    lines = f.read_text().split("\n")
    assert lines[0] == "level,j,t,W"
    assert len([l for l in lines if l]) == 1 + 9
    vals = [float(l.split(",")[3]) for l in lines[1:] if l]
    assert np.array_equal(vals, p.values)
