"""Measured quantities from KMC runs: self-diffusion, profiles, free energy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .continuum import free_energy_density
from .kmc import KmcResult
from .lattice import LatticeState

__all__ = [
    "EmptyWindow",
    "BadBinWidth",
    "MsdEstimate",
    "DensityProfile",
    "EnergyTrace",
    "estimate_self_diffusion",
    "lattice_window",
    "bin_layout",
    "density_profile",
    "bin_field",
    "axis_profiles",
    "profile_free_energy",
    "empirical_energy_trace",
    "penetration",
    "profile_median",
    "agreement_fraction",
    "format_real",
    "write_csv",
]


class EmptyWindow(ValueError):
    pass


class BadBinWidth(ValueError):
    pass


def _stderr(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(values.size))


# -- self-diffusion -----------------------------------------------------------------


@dataclass(frozen=True)
class MsdEstimate:
    species: int
    window: tuple[float, float]
    value: float
    stderr: float
    per_realization: tuple[float, ...]
    n_samples: int


def lattice_window(h: float, T1: float = 250.0, T2: float = 300.0) -> tuple[float, float]:
    """Convert a window in lattice time (unit hop rate) to macroscopic time ``t = T h^2``."""
    return T1 * h * h, T2 * h * h


def estimate_self_diffusion(results: Sequence[KmcResult], species: int, window: tuple[float, float]) -> MsdEstimate:
    """Average ``|X_t - X_0|^2 / (2 d t)`` over tracers, window times and realisations.

    Displacements are stored in lattice units and converted with ``h``; the
    standard error is that of the per-realisation means.
    """
    T1, T2 = window
    if not 0 < T1 < T2:
        raise ValueError("window must satisfy 0 < T1 < T2")
    per_real = []
    n = 0
    for res in results:
        t = np.asarray(res.times) - res.t0
        sel = (t >= T1) & (t <= T2)
        mine = res.tracer_kind == species
        if not sel.any():
            raise EmptyWindow(f"no snapshots in [{T1}, {T2}]")
        if not mine.any():
            raise EmptyWindow(f"no recorded tracers of species {species}")
        d = res.displacements.shape[-1]
        X = res.displacements[sel][:, mine].astype(float) * res.h
        msd = (X**2).sum(axis=-1) / (2 * d * t[sel][:, None])
        per_real.append(float(msd.mean()))
        n += msd.size
    return MsdEstimate(species, (T1, T2), float(np.mean(per_real)), _stderr(per_real), tuple(per_real), n)


# -- density profiles ---------------------------------------------------------------


@dataclass(frozen=True)
class BinLayout:
    """Assignment of nodes along an axis to bins of width ``w`` over ``(0, 1]``.

    Node ``c`` sits at ``x = c h`` with node 0 identified with ``x = 1``;
    bin ``j`` covers ``(j w, (j + 1) w]``.  The last bin is partial when
    ``1 / w`` is not an integer.
    """

    L: int
    per_bin: int
    index: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    counts: np.ndarray


def bin_layout(L: int, w: float) -> BinLayout:
    h = 1.0 / L
    ratio = w / h
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise BadBinWidth(f"bin width {w} is not a positive multiple of h={h}")
    c = np.arange(L)
    pos = np.where(c == 0, L, c)  # in units of h, over 1..L
    index = (pos - 1) // n
    nb = int(index.max()) + 1
    counts = np.bincount(index, minlength=nb)
    lo = np.arange(nb) * n * h
    widths = counts * h
    return BinLayout(L, n, index, lo + widths / 2, widths, counts)


def bin_field(values: np.ndarray, layout: BinLayout, axis: int = 0) -> np.ndarray:
    """Mean of a nodal field over each bin (all transverse nodes included)."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0).reshape(layout.L, -1).mean(axis=1)
    return np.bincount(layout.index, weights=v) / layout.counts


def axis_profiles(states: Sequence[LatticeState], species: int, axis: int = 0) -> np.ndarray:
    """Per-realisation occupancy averaged over transverse coordinates, shape ``(K, L)``."""
    out = []
    for s in states:
        occ = np.moveaxis(s.occupation(species).astype(float), axis, 0)
        out.append(occ.reshape(occ.shape[0], -1).mean(axis=1))
    return np.asarray(out)


@dataclass(frozen=True)
class DensityProfile:
    centers: np.ndarray
    widths: np.ndarray
    site_counts: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    per_realization: np.ndarray
    w: float
    K: int


def density_profile(states: Sequence[LatticeState], species: int, w: float, axis: int = 0) -> DensityProfile:
    """Binned mean occupancy with standard errors across realisations.

    ``site_counts[j]`` is the number of lattice sites in bin ``j``, so
    ``sum(mean * site_counts)`` is the mean particle number.
    """
    if not states:
        raise ValueError("no snapshots given")
    geo = states[0].geometry
    layout = bin_layout(geo.L, w)
    transverse = geo.n_sites // geo.L
    per = np.array([bin_field(p, layout) for p in axis_profiles(states, species, axis)])
    se = per.std(axis=0, ddof=1) / math.sqrt(len(per)) if len(per) > 1 else np.full(per.shape[1], math.nan)
    return DensityProfile(layout.centers, layout.widths, layout.counts * transverse, per.mean(axis=0), se, per, w, len(per))


def agreement_fraction(reference: np.ndarray, profile: DensityProfile, n_se: float = 2.0) -> float:
    """Fraction of bins whose reference value lies within ``n_se`` standard errors of the mean."""
    return float(np.mean(np.abs(np.asarray(reference) - profile.mean) <= n_se * profile.stderr))


def penetration(profile_values: np.ndarray, layout_or_centers, widths=None) -> float:
    """Mass of a binned (or nodal) profile in ``x > 1/2`` per unit cross-section."""
    if isinstance(layout_or_centers, BinLayout):
        centers, widths = layout_or_centers.centers, layout_or_centers.widths
    else:
        centers = np.asarray(layout_or_centers)
    return float(np.sum(np.asarray(profile_values)[centers > 0.5] * np.asarray(widths)[centers > 0.5]))


def profile_median(values: np.ndarray) -> float:
    """Position in ``(0, 1]`` below which half the mass of a nodal profile lies."""
    v = np.asarray(values, dtype=float)
    L = v.size
    ordered = np.roll(v, -1)  # nodes 1..L-1 then node 0 (x = 1)
    cum = np.cumsum(ordered)
    if cum[-1] <= 0:
        return math.nan
    j = int(np.searchsorted(cum, 0.5 * cum[-1]))
    prev = cum[j - 1] if j else 0.0
    frac = (0.5 * cum[-1] - prev) / ordered[j] if ordered[j] > 0 else 0.0
    return float((j + 0.5 + frac) / L)


# -- free energy of empirical profiles ------------------------------------------------


def profile_free_energy(rho_r, rho_b, V_r, V_b, h: float) -> float:
    """``h * sum f(rho)`` for profiles that are constant across transverse axes."""
    return float(np.sum(free_energy_density(rho_r, rho_b, V_r, V_b)) * h)


@dataclass(frozen=True)
class EnergyTrace:
    times: np.ndarray
    E_hat: np.ndarray
    stderr: np.ndarray
    bias: np.ndarray
    E_inf: float
    K: int


def empirical_energy_trace(
    profiles: Sequence[tuple[np.ndarray, np.ndarray]],
    times: Sequence[float],
    V_r: np.ndarray,
    V_b: np.ndarray,
    h: float,
    E_inf: float,
    n_boot: int = 200,
    seed: int = 0,
) -> EnergyTrace:
    """Relative free energy of realisation-averaged profiles.

    ``profiles[i]`` is a pair of ``(K, L)`` arrays of axis-averaged
    occupancies at ``times[i]``; ``V_r, V_b`` are the potentials along the
    axis.  Standard errors come from bootstrap resampling of realisations.
    ``bias`` is the second-order estimate of the upward shift caused by
    sampling noise, ``h/2 sum [Var_r/rho_r + Var_b/rho_b + Var_tot/(1-rho)]``
    with variances of the realisation mean; it is reported, not subtracted.
    """
    rng = np.random.default_rng(seed)
    E, se, bias = [], [], []
    for pr, pb in profiles:
        pr, pb = np.asarray(pr, float), np.asarray(pb, float)
        K = pr.shape[0]
        mr, mb = pr.mean(0), pb.mean(0)
        E.append(profile_free_energy(mr, mb, V_r, V_b, h) - E_inf)
        idx = rng.integers(0, K, size=(n_boot, K))
        boots = [profile_free_energy(pr[i].mean(0), pb[i].mean(0), V_r, V_b, h) for i in idx]
        se.append(float(np.std(boots, ddof=1)))
        if K > 1:
            vr = pr.var(0, ddof=1) / K
            vb = pb.var(0, ddof=1) / K
            vt = (pr + pb).var(0, ddof=1) / K
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(mr > 0, vr / mr, 0) + np.where(mb > 0, vb / mb, 0)
                terms += np.where(mr + mb < 1, vt / (1 - mr - mb), 0)
            bias.append(float(0.5 * h * terms.sum()))
        else:
            bias.append(math.nan)
    K = profiles[0][0].shape[0] if profiles else 0
    return EnergyTrace(np.asarray(times, float), np.asarray(E), np.asarray(se), np.asarray(bias), E_inf, K)


# -- output ----------------------------------------------------------------------------


def format_real(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return "%.17g" % x


def write_csv(path, header: Sequence[str], rows) -> None:
    """Fixed-column CSV with 17 significant digits and LF newlines."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_real(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
