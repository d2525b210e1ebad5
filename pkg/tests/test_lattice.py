import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twosep.lattice import (
    AxisBlocks,
    BadSplit,
    Bernoulli,
    FixedCount,
    LatticeGeometry,
    LatticeState,
    OverfullLattice,
    SinusoidalPotential,
    SpeciesParams,
    TabulatedPotential,
    ZeroPotential,
    init_state,
    potential_from_dict,
    site_coords,
    validate_state,
    wrap_index,
)

TWO = (SpeciesParams("red", 1.0), SpeciesParams("blue", 1.0))


def test_geometry_guards():
    with pytest.raises(ValueError):
        LatticeGeometry(1, 10)
    with pytest.raises(ValueError):
        LatticeGeometry(4, 10)
    with pytest.raises(ValueError):
        LatticeGeometry(2, 1)
    geo = LatticeGeometry(3, 4)
    assert geo.h * geo.L == 1
    assert geo.n_sites == 64


def test_wrap_examples():
    geo = LatticeGeometry(2, 10)
    assert wrap_index(geo, (10, 0)) == wrap_index(geo, (0, 0))
    assert wrap_index(geo, (-1, 3)) == wrap_index(geo, (9, 3))
    small = LatticeGeometry(2, 3)
    assert 0 <= wrap_index(small, (1, 2)) < 9
    assert len({wrap_index(small, (i, j)) for i in range(3) for j in range(3)}) == 9


@given(st.integers(2, 3), st.integers(2, 9), st.lists(st.integers(-50, 50), min_size=3, max_size=3))
def test_wrap_roundtrip(d, L, x):
    geo = LatticeGeometry(d, L)
    x = np.array(x[:d])
    idx = wrap_index(geo, x)
    assert np.array_equal(site_coords(geo, idx), np.mod(x, L))
    assert wrap_index(geo, x + L * np.arange(1, d + 1)) == idx


def test_neighbors_are_adjacent():
    geo = LatticeGeometry(2, 5)
    c = site_coords(geo, np.arange(geo.n_sites))
    for j, e in enumerate(geo.directions):
        assert np.array_equal(site_coords(geo, geo.neighbors[:, j]), np.mod(c + e, 5))


def test_potentials():
    geo = LatticeGeometry(2, 8)
    v = SinusoidalPotential(2.0, (1, 0))
    x = np.arange(8) / 8
    assert np.allclose(v.values(geo)[:, 3], 2 * np.sin(2 * np.pi * x))
    assert np.allclose(v.edge_gradient(geo, 0)[:, 0], 4 * np.pi * np.cos(2 * np.pi * (x + 1 / 16)))
    assert np.allclose(v.edge_gradient(geo, 1), 0)
    assert ZeroPotential().is_zero and not np.any(ZeroPotential().values(geo))
    tab = TabulatedPotential(v.values(geo))
    assert np.allclose(tab.edge_gradient(geo, 0), (np.roll(tab.grid, -1, 0) - tab.grid) * 8)
    with pytest.raises(ValueError):
        TabulatedPotential(np.zeros((3, 3))).values(geo)
    for p in (v, ZeroPotential()):
        assert potential_from_dict(p.to_dict()) == p


def test_species_requires_positive_D():
    with pytest.raises(ValueError):
        SpeciesParams("red", 0.0)


def test_fixed_count_fig5_scale():
    geo = LatticeGeometry(2, 100)
    s = init_state(geo, TWO, FixedCount((2500, 2500)), seed=1)
    assert list(s.counts()) == [2500, 2500]
    assert validate_state(s, (2500, 2500)) == []
    assert s.time == 0 and not s.disp.any()


def test_empty_and_overfull():
    geo = LatticeGeometry(2, 4)
    assert init_state(geo, TWO, Bernoulli((0.0, 0.0)), seed=0).n_particles == 0
    with pytest.raises(OverfullLattice):
        init_state(geo, TWO, FixedCount((10, 7)), seed=0)
    with pytest.raises(OverfullLattice):
        init_state(geo, TWO, Bernoulli((0.7, 0.5)), seed=0)


def test_axis_blocks():
    geo = LatticeGeometry(2, 50)
    s = init_state(geo, TWO, AxisBlocks((0.5, 0.5), axis=1), seed=3)
    red = site_coords(geo, s.site[s.kind == 0])[:, 1]
    x = np.where(red == 0, 1.0, red * geo.h)
    assert np.all((x > 0) & (x <= 0.5))
    blue = site_coords(geo, s.site[s.kind == 1])[:, 1]
    assert np.all((blue == 0) | (blue * geo.h > 0.5))
    assert list(s.counts()) == [625, 625]
    with pytest.raises(BadSplit):
        init_state(geo, TWO, AxisBlocks((0.5, 0.5), split=1.0))
    with pytest.raises(BadSplit):
        init_state(geo, TWO, AxisBlocks((0.5, 0.5), intervals=((0.0, 0.6), (0.4, 1.0))))


def test_seed_determinism():
    geo = LatticeGeometry(2, 20)
    a = init_state(geo, TWO, FixedCount((50, 60)), seed=42)
    b = init_state(geo, TWO, FixedCount((50, 60)), seed=42)
    assert np.array_equal(a.site, b.site) and np.array_equal(a.kind, b.kind)


def test_fixed_count_marginals():
    # each site is red with probability N_r / L^d
    geo = LatticeGeometry(2, 6)
    n, reps = 9, 4000
    hits = np.zeros(geo.n_sites)
    for k in range(reps):
        s = init_state(geo, TWO, FixedCount((n, 0)), seed=k)
        hits += s.occupation(0).ravel()
    p = n / geo.n_sites
    sigma = np.sqrt(p * (1 - p) / reps)
    assert np.all(np.abs(hits / reps - p) < 4 * sigma)


def test_validate_detects_problems():
    geo = LatticeGeometry(2, 4)
    s = init_state(geo, TWO, FixedCount((3, 2)), seed=0)
    bad = s.copy()
    bad.site[1] = bad.site[0]
    assert any("exclusion" in v.reason for v in validate_state(bad))
    ghost = s.copy()
    ghost.occupant[ghost.site[2]] = -1
    assert validate_state(ghost)
    assert validate_state(s, (3, 3))


def test_tags_and_tagged():
    geo = LatticeGeometry(2, 4)
    s = LatticeState.from_sites(geo, TWO, [[0, 1], [5]], tagged=[True, False, True])
    tags = s.tags.ravel()
    assert tags[0] == 3 and tags[1] == 1 and tags[5] == 4 and tags[2] == 0
    with pytest.raises(OverfullLattice):
        LatticeState.from_sites(geo, TWO, [[0], [0]])
