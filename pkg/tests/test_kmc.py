import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from twosep.kmc import (
    EmptySystem,
    KmcRunParams,
    REBUILD_INTERVAL,
    NotAdjacent,
    ProposalTable,
    hop_rate,
    kmc_step,
    realization_seeds,
    run_realization,
    sample_sites_at,
)
from twosep.lattice import (
    Bernoulli,
    FixedCount,
    LatticeGeometry,
    LatticeState,
    SinusoidalPotential,
    SpeciesParams,
    init_state,
    validate_state,
)

FLAT = (SpeciesParams("red", 1.0), SpeciesParams("blue", 1.0))


def tilted(amp=1.0, D_r=1.0, D_b=1.0):
    return (
        SpeciesParams("red", D_r, SinusoidalPotential(amp, (1, 0))),
        SpeciesParams("blue", D_b, SinusoidalPotential(-amp, (1, 0))),
    )


def test_hop_rate_examples():
    geo = LatticeGeometry(2, 10)
    assert hop_rate(geo, FLAT[0], (0, 0), (1, 0)) == pytest.approx(100.0, rel=1e-14)
    fine = LatticeGeometry(2, 100)
    sp = SpeciesParams("red", 1.0, SinusoidalPotential(1.0, (1, 0)))
    # 1e4 exp(-sin(0.02 pi)/2), 30-digit evaluation
    assert hop_rate(fine, sp, (0, 0), (1, 0)) == pytest.approx(9690.92454109915598908373177299, rel=1e-14)
    with pytest.raises(NotAdjacent):
        hop_rate(geo, FLAT[0], (0, 0), (2, 0))
    with pytest.raises(NotAdjacent):
        hop_rate(geo, FLAT[0], (0, 0), (1, 1))
    # the periodic wrap is a neighbour
    assert hop_rate(geo, FLAT[0], (0, 0), (9, 0)) == pytest.approx(100.0)


@given(st.floats(-3, 3), st.integers(0, 7), st.integers(0, 7), st.integers(0, 3))
def test_hop_rate_ratio(amp, x0, x1, j):
    geo = LatticeGeometry(2, 8)
    sp = SpeciesParams("red", 1.3, SinusoidalPotential(amp, (1, 1)))
    x = np.array([x0, x1])
    y = x + geo.directions[j]
    v = sp.V.values(geo)
    ratio = hop_rate(geo, sp, x, y) / hop_rate(geo, sp, y, x)
    assert ratio == pytest.approx(math.exp(v[tuple(x)] - v[tuple(y % 8)]), rel=1e-12)


def test_proposal_table_totals():
    geo = LatticeGeometry(2, 3)
    s = LatticeState.from_sites(geo, FLAT[:1], [[4]])
    t = ProposalTable(s)
    assert t.total == pytest.approx(36.0)
    assert t.uniform and t.static
    s2 = init_state(LatticeGeometry(2, 6), tilted(), FixedCount((5, 5)), seed=1)
    t2 = ProposalTable(s2)
    assert not t2.uniform
    assert t2.consistent_with(s2)
    for p in range(s2.n_particles):
        x = np.unravel_index(s2.site[p], s2.geometry.shape)
        for j, e in enumerate(s2.geometry.directions):
            assert t2.rate(s2, p, j) == pytest.approx(hop_rate(s2.geometry, s2.species[s2.kind[p]], x, np.add(x, e)), rel=1e-13)


def test_waiting_time_mean():
    geo = LatticeGeometry(2, 3)
    s = LatticeState.from_sites(geo, FLAT[:1], [[4]])
    t = ProposalTable(s)
    rng = np.random.default_rng(0)
    dts = np.array([kmc_step(s, t, rng).dt for _ in range(20000)])
    assert abs(dts.mean() - 1 / 36) < 4 * (1 / 36) / math.sqrt(len(dts))


def test_blocked_proposal_keeps_positions():
    geo = LatticeGeometry(2, 2)
    # three particles on a 2x2 torus: every proposal of (0,0) toward (0,1) or (1,0) is blocked
    s = LatticeState.from_sites(geo, FLAT, [[0, 1], [2]])
    t = ProposalTable(s)
    rng = np.random.default_rng(5)
    seen_blocked = False
    for _ in range(200):
        before = s.site.copy()
        t0 = s.time
        r = kmc_step(s, t, rng)
        assert s.time > t0
        target_empty = r.executed
        if not target_empty:
            seen_blocked = True
            assert np.array_equal(before, s.site)
    assert seen_blocked
    assert validate_state(s, (2, 1)) == []


def test_uniform_proposals_chisquare():
    geo = LatticeGeometry(2, 8)
    s = init_state(geo, FLAT, FixedCount((3, 2)), seed=11)
    t = ProposalTable(s)
    rng = np.random.default_rng(2024)
    n = 100_000
    cells = np.zeros(s.n_particles * 4)
    for _ in range(n):
        r = kmc_step(s, t, rng)
        cells[r.particle * 4 + r.direction] += 1
    assert chisquare(cells).pvalue > 0.01


def test_weighted_proposals_follow_rates():
    geo = LatticeGeometry(2, 4)
    s0 = init_state(geo, tilted(1.5, 1.0, 0.5), FixedCount((2, 2)), seed=3)
    t = ProposalTable(s0)
    rates = t.particle_rates(s0).ravel()
    rng = np.random.default_rng(77)
    n = 60_000
    cells = np.zeros(rates.size)
    for _ in range(n):
        s = s0.copy()
        t.refresh(s)
        r = kmc_step(s, t, rng)
        cells[r.particle * 4 + r.direction] += 1
    assert chisquare(cells, rates / rates.sum() * n).pvalue > 0.01


def test_empty_system():
    geo = LatticeGeometry(2, 4)
    s = init_state(geo, FLAT, FixedCount((0, 0)), seed=0)
    with pytest.raises(EmptySystem):
        kmc_step(s, ProposalTable(s), np.random.default_rng())


def test_run_params_guards():
    with pytest.raises(ValueError):
        KmcRunParams(T_end=-1)
    with pytest.raises(ValueError):
        KmcRunParams(T_end=1, snapshot_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        KmcRunParams(T_end=1, snapshot_times=(2.0,))


def test_zero_horizon_returns_initial():
    geo = LatticeGeometry(2, 5)
    s = init_state(geo, FLAT, FixedCount((4, 4)), seed=0)
    r = run_realization(s, KmcRunParams(T_end=0.0, snapshot_times=(0.0,)))
    assert r.events == 0
    assert np.array_equal(r.states[0].site, s.site)
    assert not r.displacements.any()


def test_full_lattice_never_moves():
    geo = LatticeGeometry(2, 4)
    s = init_state(geo, FLAT, FixedCount((8, 8)), seed=0)
    r = run_realization(s, KmcRunParams(T_end=0.05, seed=1))
    assert r.events > 0 and r.executed == 0
    assert np.array_equal(r.final.site, s.site)


def test_snapshots_at_exact_times_and_invariants():
    geo = LatticeGeometry(2, 10)
    s = init_state(geo, tilted(), FixedCount((20, 25)), seed=4)
    times = (0.001, 0.01, 0.02)
    r = run_realization(s, KmcRunParams(T_end=0.03, seed=9, snapshot_times=times))
    assert [x.time for x in r.states] == list(times)
    for st_ in r.states + [r.final]:
        assert validate_state(st_, (20, 25)) == []
    assert r.final.time == 0.03
    assert r.displacements.shape == (3, 45, 2)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.4), st.floats(0.0, 0.4), st.floats(-2, 2))
def test_fuzz_runs_keep_state_valid(seed, pr, pb, amp):
    geo = LatticeGeometry(2, 6)
    s = init_state(geo, tilted(amp), Bernoulli((pr, pb)), seed=seed)
    counts = tuple(s.counts())
    if s.n_particles == 0:
        return
    r = run_realization(s, KmcRunParams(T_end=0.02, seed=seed + 1, snapshot_times=(0.01,)))
    assert validate_state(r.final, counts) == []
    assert validate_state(r.states[0], counts) == []


def test_seed_determinism():
    geo = LatticeGeometry(2, 10)
    s = init_state(geo, tilted(), FixedCount((10, 10)), seed=1)
    p = KmcRunParams(T_end=0.02, seed=123, snapshot_times=(0.01,))
    a, b = run_realization(s, p), run_realization(s, p)
    assert a.events == b.events
    assert np.array_equal(a.final.site, b.final.site)
    assert np.array_equal(a.displacements, b.displacements)
    c = run_realization(s, KmcRunParams(T_end=0.02, seed=124))
    assert not np.array_equal(a.final.site, c.final.site)


def test_realization_seeds_independent():
    a = realization_seeds(7, 0)
    b = realization_seeds(7, 1)
    draws = {np.random.default_rng(x).integers(2**63) for x in a + b}
    assert len(draws) == 4
    assert np.random.default_rng(realization_seeds(7, 0)[0]).integers(2**63) == np.random.default_rng(a[0]).integers(2**63)


def test_free_particle_msd():
    # one walker: MSD / (2 d T) estimates D = 1
    geo = LatticeGeometry(2, 10)
    s = LatticeState.from_sites(geo, FLAT[:1], [[0]])
    T = 100.0
    vals = []
    for k in range(10):
        r = run_realization(s, KmcRunParams(T_end=T, seed=realization_seeds(3, k)[1], snapshot_times=(T,), keep_states=False))
        X = r.displacements[0, 0] * geo.h
        vals.append((X**2).sum() / (4 * T))
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - 1.0) < 3 * se


def test_particle_numbers_conserved_long_run():
    geo = LatticeGeometry(2, 20)
    s = init_state(geo, tilted(2.0, 1.5, 0.5), FixedCount((60, 40)), seed=8)
    r = run_realization(s, KmcRunParams(T_end=6.5, seed=2))
    assert r.events > REBUILD_INTERVAL  # crosses one full weight rebuild
    assert ProposalTable(r.final).consistent_with(r.final)
    assert list(r.final.counts()) == [60, 40]
    assert validate_state(r.final) == []


def test_sample_sites_matches_run_realization_law():
    geo = LatticeGeometry(2, 3)
    s = LatticeState.from_sites(geo, FLAT, [[0], [4]])
    sites = sample_sites_at(s, 0.01, 4000, seed=1)
    assert sites.shape == (4000, 2)
    assert np.all(sites[:, 0] != sites[:, 1])
