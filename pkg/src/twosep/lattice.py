"""Periodic lattice geometry, species parameters and microscopic states.

Sites are addressed either by integer coordinates in ``{0, ..., L-1}^d`` or by
the row-major linear index of those coordinates.  The physical position of
the node with coordinates ``c`` is ``c * h`` on the unit torus, with
``h = 1 / L``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "LatticeGeometry",
    "ZeroPotential",
    "SinusoidalPotential",
    "TabulatedPotential",
    "SpeciesParams",
    "LatticeState",
    "FixedCount",
    "Bernoulli",
    "AxisBlocks",
    "Violation",
    "OverfullLattice",
    "BadSplit",
    "wrap_index",
    "site_coords",
    "init_state",
    "validate_state",
    "EMPTY",
    "RED",
    "BLUE",
    "TAGGED_RED",
    "TAGGED_BLUE",
]

# per-site tags returned by LatticeState.tags
EMPTY, RED, BLUE, TAGGED_RED, TAGGED_BLUE = 0, 1, 2, 3, 4


class OverfullLattice(ValueError):
    pass


class BadSplit(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGeometry:
    """Hypercubic periodic lattice with ``L**d`` sites and spacing ``1/L``."""

    d: int
    L: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"only d=2 or d=3 is supported, got d={self.d}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")

    @property
    def h(self) -> float:
        return 1.0 / self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit jumps ``+e_0, -e_0, +e_1, -e_1, ...`` as a ``(2d, d)`` array."""
        dirs = np.zeros((2 * self.d, self.d), dtype=np.int64)
        for k in range(self.d):
            dirs[2 * k, k] = 1
            dirs[2 * k + 1, k] = -1
        return dirs

    @cached_property
    def neighbors(self) -> np.ndarray:
        """``neighbors[s, j]`` is the site reached from ``s`` by direction ``j``."""
        coords = site_coords(self, np.arange(self.n_sites))
        nb = np.empty((self.n_sites, 2 * self.d), dtype=np.int64)
        for j, e in enumerate(self.directions):
            nb[:, j] = wrap_index(self, coords + e)
        return nb

    def node_positions(self) -> list[np.ndarray]:
        """Coordinate grids ``x_k = c_k h`` broadcastable to :attr:`shape`."""
        return list(np.meshgrid(*([np.arange(self.L) * self.h] * self.d), indexing="ij", sparse=True))


def wrap_index(geometry: LatticeGeometry, x) -> np.ndarray | int:
    """Linear index of the site ``x mod L``; ``x`` has shape ``(..., d)``."""
    x = np.mod(np.asarray(x, dtype=np.int64), geometry.L)
    idx = np.ravel_multi_index(tuple(np.moveaxis(x, -1, 0)), geometry.shape)
    return int(idx) if np.ndim(idx) == 0 else idx


def site_coords(geometry: LatticeGeometry, index) -> np.ndarray:
    """Inverse of :func:`wrap_index` on one period."""
    return np.stack(np.unravel_index(np.asarray(index), geometry.shape), axis=-1)


# -- potentials --------------------------------------------------------------


@dataclass(frozen=True)
class ZeroPotential:
    def values(self, geometry: LatticeGeometry) -> np.ndarray:
        return np.zeros(geometry.shape)

    def edge_gradient(self, geometry: LatticeGeometry, axis: int) -> np.ndarray:
        return np.zeros(geometry.shape)

    @property
    def is_zero(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {"kind": "zero"}


@dataclass(frozen=True)
class SinusoidalPotential:
    """``V(x) = amplitude * sin(2 pi k.x)``."""

    amplitude: float
    wavevector: tuple[int, ...]

    def _phase(self, geometry, shift_axis=None):
        if len(self.wavevector) != geometry.d:
            raise ValueError("wavevector length does not match lattice dimension")
        xs = geometry.node_positions()
        if shift_axis is not None:
            xs[shift_axis] = xs[shift_axis] + 0.5 * geometry.h
        return 2 * np.pi * sum(k * x for k, x in zip(self.wavevector, xs))

    def values(self, geometry: LatticeGeometry) -> np.ndarray:
        return np.broadcast_to(self.amplitude * np.sin(self._phase(geometry)), geometry.shape).copy()

    def edge_gradient(self, geometry: LatticeGeometry, axis: int) -> np.ndarray:
        """Analytic ``d_axis V`` at the edge midpoints ``x + h/2 e_axis``."""
        k = self.wavevector[axis]
        g = self.amplitude * 2 * np.pi * k * np.cos(self._phase(geometry, shift_axis=axis))
        return np.broadcast_to(g, geometry.shape).copy()

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0 or not any(self.wavevector)

    def to_dict(self) -> dict:
        return {"kind": "sinusoidal", "amplitude": self.amplitude, "wavevector": list(self.wavevector)}


@dataclass(frozen=True, eq=False)
class TabulatedPotential:
    grid: np.ndarray

    def values(self, geometry: LatticeGeometry) -> np.ndarray:
        if self.grid.shape != geometry.shape:
            raise ValueError(f"tabulated potential has shape {self.grid.shape}, lattice is {geometry.shape}")
        return np.array(self.grid, dtype=float)

    def edge_gradient(self, geometry: LatticeGeometry, axis: int) -> np.ndarray:
        v = self.values(geometry)
        return (np.roll(v, -1, axis=axis) - v) / geometry.h

    @property
    def is_zero(self) -> bool:
        return not np.any(self.grid)

    def to_dict(self) -> dict:
        return {"kind": "tabulated", "values": np.asarray(self.grid).tolist()}


def potential_from_dict(spec: dict | None):
    if spec is None or spec.get("kind", "zero") == "zero":
        return ZeroPotential()
    if spec["kind"] == "sinusoidal":
        return SinusoidalPotential(float(spec["amplitude"]), tuple(int(k) for k in spec["wavevector"]))
    if spec["kind"] == "tabulated":
        return TabulatedPotential(np.asarray(spec["values"], dtype=float))
    raise ValueError(f"unknown potential kind {spec['kind']!r}")


@dataclass(frozen=True)
class SpeciesParams:
    name: str
    D: float
    V: ZeroPotential | SinusoidalPotential | TabulatedPotential = field(default_factory=ZeroPotential)

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"diffusivity must be positive, got D={self.D}")


# -- microscopic state -------------------------------------------------------


@dataclass
class LatticeState:
    """Occupancy of the torus together with the particle list.

    ``site[p]`` is the current linear site of particle ``p`` and ``origin[p]``
    its site at time zero; ``disp[p]`` is the unwrapped displacement in
    lattice units, so ``wrap(origin + disp) == site`` always holds.
    ``occupant[s]`` is the particle on site ``s`` or ``-1``.
    """

    geometry: LatticeGeometry
    species: tuple[SpeciesParams, ...]
    kind: np.ndarray
    site: np.ndarray
    origin: np.ndarray
    disp: np.ndarray
    occupant: np.ndarray
    tagged: np.ndarray
    time: float = 0.0

    @property
    def n_particles(self) -> int:
        return len(self.site)

    def counts(self) -> np.ndarray:
        return np.bincount(self.kind, minlength=len(self.species))

    @property
    def tags(self) -> np.ndarray:
        """Per-site tag (EMPTY, RED, BLUE, TAGGED_RED, TAGGED_BLUE) on the grid."""
        tags = np.zeros(self.geometry.n_sites, dtype=np.int8)
        tags[self.site] = self.kind + 1 + 2 * self.tagged
        return tags.reshape(self.geometry.shape)

    def occupation(self, species: int) -> np.ndarray:
        """Indicator grid of sites holding a particle of ``species``."""
        eta = np.zeros(self.geometry.n_sites)
        eta[self.site[self.kind == species]] = 1.0
        return eta.reshape(self.geometry.shape)

    def copy(self) -> "LatticeState":
        return LatticeState(
            self.geometry,
            self.species,
            self.kind.copy(),
            self.site.copy(),
            self.origin.copy(),
            self.disp.copy(),
            self.occupant.copy(),
            self.tagged.copy(),
            self.time,
        )

    @classmethod
    def from_sites(cls, geometry, species, sites_per_species: Sequence[Sequence[int]], tagged=None):
        kind = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(sites_per_species)])
        site = np.concatenate([np.asarray(s, dtype=np.int64) for s in sites_per_species])
        occupant = np.full(geometry.n_sites, -1, dtype=np.int64)
        if len(np.unique(site)) != len(site):
            raise OverfullLattice("two particles placed on the same site")
        occupant[site] = np.arange(len(site))
        tagged = np.zeros(len(site), dtype=bool) if tagged is None else np.asarray(tagged, dtype=bool)
        return cls(
            geometry,
            tuple(species),
            kind,
            site,
            site.copy(),
            np.zeros((len(site), geometry.d), dtype=np.int64),
            occupant,
            tagged,
        )


# -- initialisation modes ----------------------------------------------------


@dataclass(frozen=True)
class FixedCount:
    """Exactly ``counts[s]`` particles of species ``s`` on uniformly random distinct sites."""

    counts: tuple[int, ...]


@dataclass(frozen=True)
class Bernoulli:
    """Each site independently holds species ``s`` with probability ``phis[s]``."""

    phis: tuple[float, ...]


@dataclass(frozen=True)
class AxisBlocks:
    """Species 0 fills ``split`` side ``0 < x_axis <= split``, species 1 the rest.

    Inside its block a species sits at density ``phis[s]``; with
    ``fixed_count`` the number placed is exactly ``round(phi * block_sites)``,
    otherwise each block site is filled independently.  ``intervals`` may
    override the default blocks with explicit half-open ``(lo, hi]`` ranges.
    """

    phis: tuple[float, ...]
    axis: int = 0
    split: float = 0.5
    fixed_count: bool = True
    intervals: tuple[tuple[float, float], ...] | None = None

    def block_masks(self, geometry: LatticeGeometry) -> list[np.ndarray]:
        if not 0 < self.split < 1:
            raise BadSplit(f"split must lie in (0, 1), got {self.split}")
        if not 0 <= self.axis < geometry.d:
            raise BadSplit(f"axis {self.axis} out of range for d={geometry.d}")
        intervals = self.intervals or ((0.0, self.split), (self.split, 1.0))
        if len(intervals) != len(self.phis):
            raise BadSplit("need exactly one block interval per species")
        x = np.arange(geometry.L) * geometry.h
        x = np.where(x == 0, 1.0, x)  # node 0 is the point x = 1 of (0, 1]
        masks = []
        for lo, hi in intervals:
            if not 0 <= lo < hi <= 1:
                raise BadSplit(f"invalid block interval ({lo}, {hi}]")
            line = (x > lo + 1e-12) & (x <= hi + 1e-12)
            shape = [1] * geometry.d
            shape[self.axis] = geometry.L
            masks.append(np.broadcast_to(line.reshape(shape), geometry.shape).ravel())
        total = np.sum(masks, axis=0)
        if np.any(total > 1):
            raise BadSplit("block intervals overlap")
        return masks


def _draw_categories(rng, n_sites, probs):
    u = rng.random(n_sites)
    edges = np.cumsum(probs)
    return np.searchsorted(edges, u, side="right")  # len(probs) means empty


def init_state(
    geometry: LatticeGeometry,
    species: Sequence[SpeciesParams],
    mode: FixedCount | Bernoulli | AxisBlocks,
    seed=None,
    tagged: Sequence[int] | None = None,
) -> LatticeState:
    """Populate the lattice according to ``mode``.

    ``seed`` may be an integer, a ``SeedSequence`` or a ``Generator``.
    ``tagged[s]`` particles of species ``s`` (chosen at random) carry the
    tagged flag, which does not change their dynamics.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = geometry.n_sites
    if isinstance(mode, FixedCount):
        counts = [int(c) for c in mode.counts]
        if len(counts) != len(species):
            raise ValueError("one count per species required")
        if any(c < 0 for c in counts):
            raise ValueError("particle counts must be non-negative")
        if sum(counts) > n:
            raise OverfullLattice(f"{sum(counts)} particles do not fit on {n} sites")
        sites = rng.permutation(n)[: sum(counts)]
        bounds = np.cumsum([0] + counts)
        per_species = [np.sort(sites[bounds[i] : bounds[i + 1]]) for i in range(len(counts))]
    elif isinstance(mode, Bernoulli):
        phis = np.asarray(mode.phis, dtype=float)
        if len(phis) != len(species):
            raise ValueError("one density per species required")
        if np.any(phis < 0) or phis.sum() > 1 + 1e-12:
            raise OverfullLattice(f"densities {tuple(phis)} exceed lattice capacity")
        cat = _draw_categories(rng, n, phis)
        per_species = [np.flatnonzero(cat == i) for i in range(len(phis))]
    elif isinstance(mode, AxisBlocks):
        if len(mode.phis) != len(species):
            raise ValueError("one density per species required")
        masks = mode.block_masks(geometry)
        per_species = []
        for phi, mask in zip(mode.phis, masks):
            if not 0 <= phi <= 1:
                raise OverfullLattice(f"block density {phi} outside [0, 1]")
            block = np.flatnonzero(mask)
            if mode.fixed_count:
                k = int(round(phi * len(block)))
                per_species.append(np.sort(rng.choice(block, size=k, replace=False)))
            else:
                per_species.append(block[rng.random(len(block)) < phi])
    else:
        raise TypeError(f"unknown initialisation mode {mode!r}")

    state = LatticeState.from_sites(geometry, species, per_species)
    if tagged is not None:
        for s, k in enumerate(tagged):
            members = np.flatnonzero(state.kind == s)
            if k > len(members):
                raise ValueError(f"cannot tag {k} particles of species {s}")
            state.tagged[rng.choice(members, size=k, replace=False)] = True
    return state


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    site: int
    reason: str


def validate_state(state: LatticeState, expected_counts: Sequence[int] | None = None) -> list[Violation]:
    """Check exclusion and the site/particle cross references.

    Returns an empty list for a valid state; never mutates or raises.
    """
    geo = state.geometry
    out: list[Violation] = []
    site = np.asarray(state.site)
    bad = (site < 0) | (site >= geo.n_sites)
    for p in np.flatnonzero(bad):
        out.append(Violation(int(site[p]), f"particle {p} is off the lattice"))
    site = np.where(bad, 0, site)

    uniq, mult = np.unique(site[~bad], return_counts=True)
    for s in uniq[mult > 1]:
        out.append(Violation(int(s), "exclusion violated: more than one particle on site"))

    occ = state.occupant
    for p in np.flatnonzero((occ[site] != np.arange(len(site))) & ~bad):
        out.append(Violation(int(site[p]), f"particle {p} is listed here but the grid disagrees"))
    filled = np.flatnonzero(occ >= 0)
    owners = occ[filled]
    inconsistent = (owners >= len(site)) | (site[np.minimum(owners, max(len(site) - 1, 0))] != filled)
    for s in filled[inconsistent]:
        out.append(Violation(int(s), "grid marks site occupied but no listed particle is there"))

    if len(site):
        origin_coords = site_coords(geo, state.origin)
        moved = wrap_index(geo, origin_coords + state.disp)
        for p in np.flatnonzero(np.atleast_1d(moved) != site):
            out.append(Violation(int(site[p]), f"particle {p} displacement does not match its site"))

    if expected_counts is not None:
        counts = state.counts()
        for s, (got, want) in enumerate(zip(counts, expected_counts)):
            if got != want:
                out.append(Violation(-1, f"species {s} has {got} particles, expected {want}"))
    return out
