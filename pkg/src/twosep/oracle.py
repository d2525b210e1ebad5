"""Exact continuous-time Markov generator for tiny exclusion systems.

Used as a brute-force reference for the KMC engine: every configuration
with the requested particle numbers is enumerated, and the generator is
built with one transition per (particle, direction) proposal, exactly as
the simulator proposes them.  For ``L >= 3`` this coincides with summing the
rates over adjacent sites; on an ``L = 2`` torus the two directions along an
axis reach the same site and their rates add.
"""
from __future__ import annotations

from itertools import combinations
from math import comb
from typing import Sequence

import numpy as np
import scipy.linalg

from .kmc import rate_table
from .lattice import LatticeGeometry, LatticeState, SpeciesParams

__all__ = ["TooLarge", "ExactGenerator", "exact_generator_oracle"]

MAX_CONFIGS = 100_000


class TooLarge(ValueError):
    pass


def _count_configs(n_sites, counts):
    total, free = 1, n_sites
    for c in counts:
        total *= comb(free, c)
        free -= c
    return total


def _enumerate(n_sites, counts):
    def rec(free, rest):
        if not rest:
            yield ()
            return
        for chosen in combinations(free, rest[0]):
            left = tuple(s for s in free if s not in chosen)
            for tail in rec(left, rest[1:]):
                yield (chosen,) + tail

    yield from rec(tuple(range(n_sites)), tuple(counts))


class ExactGenerator:
    """Dense generator ``Q`` over all configurations with fixed species counts.

    A configuration is a tuple holding, per species, the sorted tuple of
    occupied linear sites.  ``Q[a, b]`` is the rate of ``a -> b`` and rows
    sum to zero.
    """

    def __init__(self, geometry: LatticeGeometry, species: Sequence[SpeciesParams], counts: Sequence[int]):
        if geometry.L > 4:
            raise TooLarge(f"exact oracle is limited to L <= 4, got L={geometry.L}")
        n_conf = _count_configs(geometry.n_sites, counts)
        if sum(counts) > geometry.n_sites:
            raise ValueError("more particles than sites")
        if n_conf > MAX_CONFIGS:
            raise TooLarge(f"{n_conf} configurations exceed the limit of {MAX_CONFIGS}")
        self.geometry = geometry
        self.species = tuple(species)
        self.counts = tuple(int(c) for c in counts)
        self.configs = list(_enumerate(geometry.n_sites, self.counts))
        self._index = {c: i for i, c in enumerate(self.configs)}
        self.Q = self._build()

    def __len__(self):
        return len(self.configs)

    def index(self, config) -> int:
        return self._index[tuple(tuple(sorted(int(s) for s in sites)) for sites in config)]

    def index_of_state(self, state: LatticeState) -> int:
        return self.index([state.site[state.kind == s] for s in range(len(self.species))])

    def _build(self):
        nb = self.geometry.neighbors
        rates = rate_table(self.geometry, self.species)
        Q = np.zeros((len(self.configs), len(self.configs)))
        for a, conf in enumerate(self.configs):
            occupied = {s for sites in conf for s in sites}
            for sp, sites in enumerate(conf):
                for i, x in enumerate(sites):
                    for j in range(nb.shape[1]):
                        y = int(nb[x, j])
                        if y in occupied:
                            continue
                        moved = sites[:i] + sites[i + 1 :] + (y,)
                        target = conf[:sp] + (tuple(sorted(moved)),) + conf[sp + 1 :]
                        Q[a, self._index[target]] += rates[sp, x, j]
        Q[np.diag_indices_from(Q)] = -Q.sum(axis=1)
        return Q

    def stationary(self) -> np.ndarray:
        """Normalised null vector of ``Q^T``."""
        ns = scipy.linalg.null_space(self.Q.T)
        if ns.shape[1] != 1:
            raise RuntimeError(f"generator has a {ns.shape[1]}-dimensional null space")
        pi = ns[:, 0]
        return pi / pi.sum()

    def boltzmann(self) -> np.ndarray:
        """``pi(eta) ~ exp(-sum_x,s V_s(x) eta_s(x))`` evaluated on each configuration."""
        v = [sp.V.values(self.geometry).ravel() for sp in self.species]
        energy = np.array([sum(v[s][list(sites)].sum() for s, sites in enumerate(conf)) for conf in self.configs])
        w = np.exp(-(energy - energy.min()))
        return w / w.sum()

    def distribution(self, t: float, initial) -> np.ndarray:
        """Law at time ``t`` from a configuration index or a probability vector."""
        p0 = np.zeros(len(self.configs))
        if np.ndim(initial) == 0:
            p0[int(initial)] = 1.0
        else:
            p0[:] = initial
        return p0 @ scipy.linalg.expm(self.Q * t)

    def site_marginals(self, p: np.ndarray) -> np.ndarray:
        """``out[s, x]``: probability that site ``x`` holds a particle of species ``s``."""
        out = np.zeros((len(self.species), self.geometry.n_sites))
        for w, conf in zip(p, self.configs):
            for s, sites in enumerate(conf):
                out[s, list(sites)] += w
        return out


def exact_generator_oracle(geometry, species, counts) -> ExactGenerator:
    return ExactGenerator(geometry, species, counts)
