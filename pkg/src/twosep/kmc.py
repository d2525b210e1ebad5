"""Rejection kinetic Monte Carlo for the multi-species exclusion process.

Every particle proposes a jump in each of the ``2d`` lattice directions at
its bare rate; a proposal is drawn with probability proportional to its rate
after an exponential waiting time with the total rate, and it is executed
only if the target site is empty.  Blocked proposals are self-loops of the
Markov chain, so the algorithm samples the process exactly.

Proposal sampling uses a Fenwick tree over per-particle total rates.  When
all proposal rates are equal it degenerates to a uniform draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .lattice import LatticeGeometry, LatticeState, SpeciesParams

__all__ = [
    "NotAdjacent",
    "EmptySystem",
    "hop_rate",
    "rate_table",
    "ProposalTable",
    "StepResult",
    "kmc_step",
    "KmcRunParams",
    "KmcResult",
    "run_realization",
    "realization_seeds",
    "sample_sites_at",
    "occupancy_rows",
    "REBUILD_INTERVAL",
]

REBUILD_INTERVAL = 1_000_000
_CHUNK = 1 << 16


class NotAdjacent(ValueError):
    pass


class EmptySystem(RuntimeError):
    pass


def hop_rate(geometry: LatticeGeometry, species: SpeciesParams, x, y) -> float:
    """Bare proposal rate ``(D/h^2) exp((V(x) - V(y))/2)`` for adjacent ``x -> y``.

    ``x`` and ``y`` are integer site coordinates.
    """
    x = np.mod(np.asarray(x, dtype=np.int64), geometry.L)
    y = np.mod(np.asarray(y, dtype=np.int64), geometry.L)
    diff = np.mod(y - x, geometry.L)
    steps = np.minimum(diff, geometry.L - diff)
    if steps.sum() != 1:
        raise NotAdjacent(f"sites {tuple(x)} and {tuple(y)} are not nearest neighbours")
    v = species.V.values(geometry)
    dv = v[tuple(x)] - v[tuple(y)]
    return species.D / geometry.h**2 * math.exp(dv / 2)


def rate_table(geometry: LatticeGeometry, species: Sequence[SpeciesParams]) -> np.ndarray:
    """Proposal rates ``rates[s, site, j]`` for every species, site and direction."""
    nb = geometry.neighbors
    rates = np.empty((len(species), geometry.n_sites, nb.shape[1]))
    for s, sp in enumerate(species):
        v = sp.V.values(geometry).ravel()
        rates[s] = sp.D / geometry.h**2 * np.exp((v[:, None] - v[nb]) / 2)
    return rates


# -- compiled kernels ----------------------------------------------------------


@njit(cache=True, nogil=True)
def _fenwick_build(weights, tree):
    n = weights.shape[0]
    tree[:] = 0.0
    for i in range(1, n + 1):
        tree[i] += weights[i - 1]
        j = i + (i & -i)
        if j <= n:
            tree[j] += tree[i]


@njit(cache=True, nogil=True)
def _fenwick_add(tree, i, delta):
    i += 1
    n = tree.shape[0]
    while i < n:
        tree[i] += delta
        i += i & -i


@njit(cache=True, nogil=True)
def _fenwick_find(tree, target):
    # returns (index, remainder) with prefix(index) <= target < prefix(index + 1)
    n = tree.shape[0] - 1
    pos = 0
    bit = 1
    while bit * 2 <= n:
        bit *= 2
    while bit > 0:
        nxt = pos + bit
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        bit //= 2
    if pos >= n:
        pos = n - 1
        target = 0.0
    return pos, target


@njit(cache=True, nogil=True)
def _advance(
    kind,
    site,
    disp,
    occupant,
    neighbors,
    dirs,
    rates,
    weights,
    tree,
    state_f,
    counters,
    uniform,
    static,
    t_stop,
    max_events,
    exp_buf,
    uni_buf,
    log,
):
    """Run events until ``t_stop``, ``max_events`` or the random buffers run out.

    ``state_f = [time, total_rate]`` and ``counters = [events, executed,
    since_rebuild, buffer_pos, last_particle, last_direction]`` are updated
    in place.  Returns 0 when the clock reached ``t_stop`` (the pending
    waiting time is discarded, which is exact by memorylessness), 1 when the
    buffers are exhausted, 2 when ``max_events`` were performed.
    """
    n = site.shape[0]
    nd = neighbors.shape[1]
    d = dirs.shape[1]
    t = state_f[0]
    total = state_f[1]
    pos = counters[3]
    done = 0
    nlog = log.shape[0]
    status = 2
    while done < max_events:
        if pos >= exp_buf.shape[0]:
            status = 1
            break
        tau = exp_buf[pos] / total
        u = uni_buf[pos]
        pos += 1
        if t + tau > t_stop:
            t = t_stop
            status = 0
            break
        t += tau
        if uniform:
            k = int(u * n * nd)
            if k >= n * nd:
                k = n * nd - 1
            p = k // nd
            j = k - p * nd
        else:
            p, rem = _fenwick_find(tree, u * total)
            s0 = site[p]
            sp = kind[p]
            j = nd - 1
            acc = 0.0
            for jj in range(nd):
                acc += rates[sp, s0, jj]
                if rem < acc:
                    j = jj
                    break
        if counters[0] < nlog:
            log[counters[0]] = p * nd + j
        counters[0] += 1
        counters[4] = p
        counters[5] = j
        done += 1
        x = site[p]
        y = neighbors[x, j]
        if occupant[y] < 0:
            occupant[x] = -1
            occupant[y] = p
            site[p] = y
            for a in range(d):
                disp[p, a] += dirs[j, a]
            counters[1] += 1
            if not uniform and not static:
                w = 0.0
                for jj in range(nd):
                    w += rates[kind[p], y, jj]
                delta = w - weights[p]
                weights[p] = w
                _fenwick_add(tree, p, delta)
                total += delta
        if not uniform:
            counters[2] += 1
            if counters[2] >= REBUILD_INTERVAL:
                for q in range(n):
                    w = 0.0
                    for jj in range(nd):
                        w += rates[kind[q], site[q], jj]
                    weights[q] = w
                _fenwick_build(weights, tree)
                total = 0.0
                for q in range(n):
                    total += weights[q]
                counters[2] = 0
    state_f[0] = t
    state_f[1] = total
    counters[3] = pos
    return status


# -- proposal bookkeeping --------------------------------------------------------


class ProposalTable:
    """Per-particle, per-direction proposal rates with a partial-sum tree.

    ``rates[s, site, j]`` is tabulated once per lattice; a particle's
    proposal rates are read from the row of its current site, so only the
    moving particle's entry changes after an executed jump.
    """

    def __init__(self, state: LatticeState):
        self.geometry = state.geometry
        self.rates = rate_table(state.geometry, state.species)
        self.uniform = bool(np.ptp(self.rates) == 0) if self.rates.size else True
        self.static = all(sp.V.is_zero for sp in state.species)
        self.weights = np.empty(state.n_particles)
        self.tree = np.zeros(state.n_particles + 1)
        self.refresh(state)

    def refresh(self, state: LatticeState) -> None:
        """Recompute every per-particle total and the tree from scratch."""
        self.weights[:] = self.rates[state.kind, state.site].sum(axis=1)
        _fenwick_build(self.weights, self.tree)
        self.total = float(self.weights.sum())

    def rate(self, state: LatticeState, particle: int, direction: int) -> float:
        return float(self.rates[state.kind[particle], state.site[particle], direction])

    def particle_rates(self, state: LatticeState) -> np.ndarray:
        """All ``2Nd`` proposal rates as an ``(N, 2d)`` array."""
        return self.rates[state.kind, state.site]

    def consistent_with(self, state: LatticeState, rtol: float = 1e-12) -> bool:
        expect = self.rates[state.kind, state.site].sum(axis=1)
        return bool(
            np.allclose(self.weights, expect, rtol=rtol, atol=0)
            and math.isclose(self.total, expect.sum(), rel_tol=rtol)
        )


class _Stream:
    """Buffers of exponential and uniform variates drawn from a numpy Generator."""

    def __init__(self, rng: np.random.Generator, chunk: int = _CHUNK):
        self.rng = rng
        self.chunk = chunk
        self.exp = np.empty(0)
        self.uni = np.empty(0)

    def refill(self, counters):
        self.exp = self.rng.standard_exponential(self.chunk)
        self.uni = self.rng.random(self.chunk)
        counters[3] = 0


_NO_LOG = np.zeros(0, dtype=np.int64)


def _run_until(state, table, stream, counters, t_stop, max_events=np.iinfo(np.int64).max, log=_NO_LOG):
    if state.n_particles == 0 or table.total <= 0:
        raise EmptySystem("no particles to move: total proposal rate is zero")
    geo = state.geometry
    state_f = np.array([state.time, table.total])
    while True:
        if counters[3] >= len(stream.exp):
            stream.refill(counters)
        before = counters[0]
        status = _advance(
            state.kind,
            state.site,
            state.disp,
            state.occupant,
            geo.neighbors,
            geo.directions,
            table.rates,
            table.weights,
            table.tree,
            state_f,
            counters,
            table.uniform,
            table.static,
            t_stop,
            max_events,
            stream.exp,
            stream.uni,
            log,
        )
        max_events -= counters[0] - before
        if status != 1:
            break
    state.time = float(state_f[0])
    table.total = float(state_f[1])
    return status


def _new_counters():
    return np.zeros(6, dtype=np.int64)


@dataclass(frozen=True)
class StepResult:
    dt: float
    executed: bool
    particle: int
    direction: int


def kmc_step(state: LatticeState, proposals: ProposalTable, rng: np.random.Generator) -> StepResult:
    """Advance ``state`` in place by one proposal event.

    Time always advances by an exponential waiting time; the sampled
    particle moves only when its target site is empty.
    """
    if state.n_particles == 0 or proposals.total <= 0:
        raise EmptySystem("no particles to move: total proposal rate is zero")
    stream = _Stream(rng, chunk=1)
    counters = _new_counters()
    t0 = state.time
    stream.refill(counters)
    _run_until(state, proposals, stream, counters, np.inf, max_events=1)
    return StepResult(state.time - t0, bool(counters[1]), int(counters[4]), int(counters[5]))


@dataclass(frozen=True)
class KmcRunParams:
    """Horizon, seed and recording options for one realisation.

    ``record_tracers`` selects the species whose unwrapped displacements are
    stored at each snapshot (``None`` = all particles).
    """

    T_end: float
    seed: int | np.random.SeedSequence | None = None
    snapshot_times: tuple[float, ...] = ()
    record_tracers: tuple[int, ...] | None = None
    keep_states: bool = True

    def __post_init__(self):
        if self.T_end < 0:
            raise ValueError("T_end must be non-negative")
        times = tuple(float(t) for t in self.snapshot_times)
        if list(times) != sorted(times):
            raise ValueError("snapshot times must be sorted")
        if times and (times[0] < 0 or times[-1] > self.T_end):
            raise ValueError("snapshot times must lie in [0, T_end]")
        object.__setattr__(self, "snapshot_times", times)


@dataclass
class KmcResult:
    """Snapshots of one realisation.

    ``displacements[i]`` holds the unwrapped displacement (lattice units) of
    the recorded particles at ``times[i]``; ``tracers`` are their indices.
    """

    times: np.ndarray
    states: list[LatticeState]
    displacements: np.ndarray
    tracers: np.ndarray
    final: LatticeState
    events: int = 0
    executed: int = 0
    seed_entropy: object = None
    h: float = field(default=0.0)
    t0: float = 0.0

    @property
    def tracer_kind(self) -> np.ndarray:
        return self.final.kind[self.tracers]


def realization_seeds(master_seed: int, index: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent (initialisation, dynamics) seed streams for realisation ``index``."""
    root = np.random.SeedSequence(master_seed, spawn_key=(index,))
    init, dyn = root.spawn(2)
    return init, dyn


def run_realization(state: LatticeState, params: KmcRunParams) -> KmcResult:
    """Simulate a copy of ``state`` up to ``params.T_end``.

    Each snapshot is the configuration holding at exactly the requested time
    (all events with earlier times applied, none later).
    """
    state = state.copy()
    t0 = state.time
    rng = np.random.default_rng(params.seed)
    if params.record_tracers is None:
        tracers = np.arange(state.n_particles)
    else:
        tracers = np.flatnonzero(np.isin(state.kind, params.record_tracers))
    times = [t for t in params.snapshot_times]
    states, disps = [], []

    counters = _new_counters()
    active = state.n_particles > 0 and params.T_end > 0
    table = ProposalTable(state) if active else None
    stream = _Stream(rng)
    for i, t in enumerate(times + [params.T_end]):
        if active and t > state.time:
            _run_until(state, table, stream, counters, t)
        state.time = max(state.time, t)
        if i < len(times):
            if params.keep_states:
                states.append(state.copy())
            disps.append(state.disp[tracers].copy())
    return KmcResult(
        np.asarray(times, dtype=float),
        states,
        np.asarray(disps, dtype=np.int64).reshape(len(times), len(tracers), state.geometry.d),
        tracers,
        state,
        events=int(counters[0]),
        executed=int(counters[1]),
        seed_entropy=getattr(params.seed, "entropy", params.seed),
        h=state.geometry.h,
        t0=t0,
    )


def sample_sites_at(state: LatticeState, t: float, n_samples: int, seed=None) -> np.ndarray:
    """Particle sites at time ``t`` in ``n_samples`` independent runs from ``state``.

    Equivalent to calling :func:`run_realization` repeatedly but shares one
    rate table; returns an ``(n_samples, N)`` array of linear sites.
    """
    if state.n_particles == 0:
        return np.zeros((n_samples, 0), dtype=np.int64)
    table = ProposalTable(state)
    rng = np.random.default_rng(seed)
    stream = _Stream(rng, chunk=256)
    out = np.empty((n_samples, state.n_particles), dtype=np.int64)
    for k in range(n_samples):
        st = state.copy()
        table.refresh(st)
        counters = _new_counters()
        stream.refill(counters)
        _run_until(st, table, stream, counters, st.time + t)
        out[k] = st.site
    return out


def occupancy_rows(state: LatticeState) -> np.ndarray:
    """``(site index, tag)`` for every occupied site, sorted by site; tags as in :attr:`LatticeState.tags`."""
    tags = state.tags.ravel()
    occ = np.flatnonzero(tags)
    return np.column_stack([occ, tags[occ]])
