"""Mobility matrices, free energy and discrete thermodynamic force.

All three mobility models share the free energy

    E = int rho_r log rho_r + rho_b log rho_b + (1 - rho) log(1 - rho)
            + rho_r V_r + rho_b V_b,

and differ only in the 2x2 mobility ``M(rho_r, rho_b)``.  Fluxes are
assembled as ``J = M F`` where ``F`` is the gradient of the variational
derivative.  Because ``F`` carries ``1/rho_sigma`` and ``1/(1 - rho)``
factors, we expose the products ``M / rho_tau`` and ``M / (1 - rho)`` in
closed form so that vacuum and full packing never produce ``0/0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy

from .coefficients import OutOfRange, ds_composite, transport_coefficients
from .lattice import LatticeGeometry, SpeciesParams

__all__ = [
    "ModelMismatch",
    "MEAN_FIELD",
    "MATCHED_LOW",
    "COMPOSITE_QUASTEL",
    "MODEL_NAMES",
    "DensityFields",
    "MobilityModel",
    "make_model",
    "mobility_matrix",
    "mobility_components",
    "matched_low_factored",
    "flux_factors",
    "free_energy",
    "free_energy_density",
    "thermo_force",
    "thermo_force_edge",
    "SpdReport",
    "check_spd",
]

MEAN_FIELD = "mean_field"
MATCHED_LOW = "matched_low"
COMPOSITE_QUASTEL = "composite_quastel"
MODEL_NAMES = (MEAN_FIELD, MATCHED_LOW, COMPOSITE_QUASTEL)

EPS = 1e-12


class ModelMismatch(ValueError):
    pass


@dataclass
class DensityFields:
    """Nodal volume fractions of both species on a periodic grid."""

    geometry: LatticeGeometry
    rho_r: np.ndarray
    rho_b: np.ndarray
    species: tuple[SpeciesParams, SpeciesParams]

    def __post_init__(self):
        self.rho_r = np.array(self.rho_r, dtype=float)
        self.rho_b = np.array(self.rho_b, dtype=float)
        for r in (self.rho_r, self.rho_b):
            if r.shape != self.geometry.shape:
                raise ValueError(f"field shape {r.shape} does not match grid {self.geometry.shape}")
        self.species = tuple(self.species)
        if len(self.species) != 2:
            raise ValueError("exactly two species are required")

    @property
    def rho(self) -> np.ndarray:
        return self.rho_r + self.rho_b

    def masses(self) -> np.ndarray:
        w = self.geometry.h**self.geometry.d
        return np.array([self.rho_r.sum() * w, self.rho_b.sum() * w])

    def copy(self) -> "DensityFields":
        return replace(self, rho_r=self.rho_r.copy(), rho_b=self.rho_b.copy())

    def violations(self, tol: float = 0.0) -> list[str]:
        out = []
        if self.rho_r.min() < -tol or self.rho_b.min() < -tol:
            out.append("negative density")
        if self.rho.max() > 1 + tol:
            out.append("total density above one")
        return out

    @classmethod
    def uniform(cls, geometry, species, phi_r, phi_b):
        return cls(geometry, np.full(geometry.shape, float(phi_r)), np.full(geometry.shape, float(phi_b)), species)

    @classmethod
    def blocks(cls, geometry, species, block_r, block_b, axis: int = 0):
        """Red on ``x_axis in (0, 1/2]``, blue on ``(1/2, 1]``; node 0 is identified with ``x = 1``."""
        c = np.arange(geometry.L)
        red = (c >= 1) & (c <= geometry.L // 2)
        shape = [1] * geometry.d
        shape[axis] = geometry.L
        red = np.broadcast_to(red.reshape(shape), geometry.shape)
        return cls(geometry, np.where(red, float(block_r), 0.0), np.where(red, 0.0, float(block_b)), species)


@dataclass(frozen=True)
class MobilityModel:
    """A mobility closure.

    ``ds`` overrides the self-diffusion function used by the composite
    model; by default it is the cubic composite approximation.
    """

    kind: str
    alpha: float
    spd_variant: bool = False
    ds: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in MODEL_NAMES:
            raise ValueError(f"unknown mobility model {self.kind!r}; expected one of {MODEL_NAMES}")

    def self_diffusion(self, rho):
        if self.ds is not None:
            return self.ds(rho)
        return ds_composite(np.clip(rho, 0.0, 1.0), self.alpha)

    def ds_over_vacancy(self, rho):
        """``D_s(rho) / (1 - rho)``, analytic for the composite polynomial."""
        if self.ds is not None:
            return self.ds(rho) / np.maximum(1 - rho, EPS)
        a = self.alpha
        return 1 - a * rho + a * (2 * a - 1) / (2 * a + 1) * rho**2


def make_model(kind: str, d: int, D_r: float, D_b: float, spd_variant: bool = False, ds=None) -> MobilityModel:
    """Build a model with the lattice constant for dimension ``d``, checking its validity for ``(D_r, D_b)``."""
    if kind == COMPOSITE_QUASTEL and D_r != D_b:
        raise ModelMismatch(f"the composite model requires equal diffusivities, got {D_r} and {D_b}")
    return MobilityModel(kind, transport_coefficients(d).alpha, spd_variant, ds)


def _check_densities(rho_r, rho_b):
    rho_r = np.asarray(rho_r, dtype=float)
    rho_b = np.asarray(rho_b, dtype=float)
    if np.any(rho_r < 0) or np.any(rho_b < 0) or np.any(rho_r + rho_b > 1):
        raise OutOfRange("densities must satisfy rho_r, rho_b >= 0 and rho_r + rho_b <= 1")
    return rho_r, rho_b


def mobility_components(model: MobilityModel, rho_r, rho_b, D_r: float, D_b: float):
    """Entries ``(M_rr, M_rb, M_br, M_bb)`` evaluated elementwise."""
    rho = rho_r + rho_b
    vac = 1 - rho
    if model.kind == MEAN_FIELD:
        zero = np.zeros_like(rho)
        return vac * D_r * rho_r, zero, zero, vac * D_b * rho_b
    if model.kind == MATCHED_LOW:
        c = 2 * model.alpha * vac * rho_r * rho_b / (D_r + D_b)
        if model.spd_variant:
            c = c * vac
        return (
            vac * D_r * rho_r - c * D_r**2,
            c * D_r * D_b,
            c * D_r * D_b,
            vac * D_b * rho_b - c * D_b**2,
        )
    if D_r != D_b:
        raise ModelMismatch(f"the composite model requires equal diffusivities, got {D_r} and {D_b}")
    inv = np.where(rho > 0, 1.0 / np.maximum(rho, EPS), 0.0)
    ds = model.self_diffusion(rho)
    cross = rho_r * rho_b * inv
    return (
        D_r * (vac * rho_r * rho_r * inv + ds * cross),
        D_r * (vac - ds) * cross,
        D_r * (vac - ds) * cross,
        D_r * (vac * rho_b * rho_b * inv + ds * cross),
    )


def mobility_matrix(model: MobilityModel, rho_r: float, rho_b: float, D_r: float, D_b: float) -> np.ndarray:
    rho_r, rho_b = _check_densities(rho_r, rho_b)
    m = mobility_components(model, rho_r, rho_b, D_r, D_b)
    return np.array([[m[0], m[1]], [m[2], m[3]]], dtype=float)


def matched_low_factored(alpha, rho_r, rho_b, D_r, D_b, spd_variant=False) -> np.ndarray:
    """Low-density mobility assembled as ``diag(D) [(1-rho)/rho rho rho^T + rho_r rho_b / rho K]``
    with ``K = [[mu_r, -mu_b], [-mu_r, mu_b]]``."""
    from .coefficients import gamma, mu_sigma

    rho_r, rho_b = _check_densities(rho_r, rho_b)
    rho = rho_r + rho_b
    if rho == 0:
        return np.zeros((2, 2))
    variant = "spd" if spd_variant else "standard"
    mu_r = mu_sigma(rho, alpha, gamma(D_r, D_b), variant)
    mu_b = mu_sigma(rho, alpha, gamma(D_b, D_r), variant)
    outer = (1 - rho) / rho * np.array([[rho_r**2, rho_r * rho_b], [rho_r * rho_b, rho_b**2]])
    K = rho_r * rho_b / rho * np.array([[mu_r, -mu_b], [-mu_r, mu_b]])
    return np.diag([D_r, D_b]) @ (outer + K)


def flux_factors(model: MobilityModel, rho_r, rho_b, D_r, D_b):
    """Products of ``M`` with the singular factors of the thermodynamic force.

    Returns ``(M, N, G)`` as tuples of the four entries ``(rr, rb, br, bb)``
    with ``N_st = M_st / rho_t`` and ``G_st = M_st / (1 - rho)``; every entry
    is finite at vacuum and at full packing.
    """
    rho = rho_r + rho_b
    vac = 1 - rho
    M = mobility_components(model, rho_r, rho_b, D_r, D_b)
    if model.kind == MEAN_FIELD:
        zero = np.zeros_like(rho)
        N = (vac * D_r, zero, zero, vac * D_b)
        G = (D_r * rho_r, zero, zero, D_b * rho_b)
        return M, N, G
    if model.kind == MATCHED_LOW:
        c = 2 * model.alpha / (D_r + D_b)
        cv = c * vac if model.spd_variant else c
        # the correction carries (1 - rho) rho_r rho_b (times another (1 - rho) for the SPD form)
        N = (
            vac * D_r - cv * vac * D_r**2 * rho_b,
            cv * vac * D_r * D_b * rho_r,
            cv * vac * D_r * D_b * rho_b,
            vac * D_b - cv * vac * D_b**2 * rho_r,
        )
        G = (
            D_r * rho_r - cv * D_r**2 * rho_r * rho_b,
            cv * D_r * D_b * rho_r * rho_b,
            cv * D_r * D_b * rho_r * rho_b,
            D_b * rho_b - cv * D_b**2 * rho_r * rho_b,
        )
        return M, N, G
    D = D_r
    inv = np.where(rho > 0, 1.0 / np.maximum(rho, EPS), 0.0)
    ds = model.self_diffusion(rho)
    q = model.ds_over_vacancy(rho)
    N = (
        D * (vac * rho_r + ds * rho_b) * inv,
        D * (vac - ds) * rho_r * inv,
        D * (vac - ds) * rho_b * inv,
        D * (vac * rho_b + ds * rho_r) * inv,
    )
    G = (
        D * (rho_r * rho_r + q * rho_r * rho_b) * inv,
        D * (1 - q) * rho_r * rho_b * inv,
        D * (1 - q) * rho_r * rho_b * inv,
        D * (rho_b * rho_b + q * rho_r * rho_b) * inv,
    )
    return M, N, G


# -- free energy -------------------------------------------------------------------


def free_energy_density(rho_r, rho_b, V_r=0.0, V_b=0.0):
    vac = np.clip(1 - rho_r - rho_b, 0.0, None)
    return xlogy(rho_r, rho_r) + xlogy(rho_b, rho_b) + xlogy(vac, vac) + rho_r * V_r + rho_b * V_b


def free_energy(fields: DensityFields) -> float:
    geo = fields.geometry
    V_r, V_b = (sp.V.values(geo) for sp in fields.species)
    dens = free_energy_density(fields.rho_r, fields.rho_b, V_r, V_b)
    return float(dens.sum() * geo.h**geo.d)


# -- thermodynamic force ------------------------------------------------------------


def thermo_force(fields: DensityFields, axis: int):
    """Discrete force on every edge ``(x, x + h e_axis)`` as a pair of grids.

    Where the midpoint density of a species vanishes its entropic term is
    set to zero; fluxes never use this raw form (see :func:`flux_factors`).
    """
    geo = fields.geometry
    h = geo.h
    r, b = fields.rho_r, fields.rho_b
    rn, bn = np.roll(r, -1, axis), np.roll(b, -1, axis)
    mr, mb = (r + rn) / 2, (b + bn) / 2
    vac = 1 - mr - mb
    dtot = (rn + bn - r - b) / h
    with np.errstate(divide="ignore", invalid="ignore"):
        tot = np.where(vac > 0, dtot / vac, 0.0)
        fr = np.where(mr > 0, (rn - r) / (h * mr), 0.0)
        fb = np.where(mb > 0, (bn - b) / (h * mb), 0.0)
    gr = fields.species[0].V.edge_gradient(geo, axis)
    gb = fields.species[1].V.edge_gradient(geo, axis)
    return fr + tot + gr, fb + tot + gb


def thermo_force_edge(fields: DensityFields, x, k: int) -> tuple[float, float]:
    """Force pair on the edge from node ``x`` to ``x + h e_k``."""
    fr, fb = thermo_force(fields, k)
    idx = tuple(int(c) % fields.geometry.L for c in x)
    return float(fr[idx]), float(fb[idx])


# -- positive-definiteness sweep --------------------------------------------------------


@dataclass(frozen=True)
class SpdReport:
    model: str
    d: int
    ratio: float
    min_eigenvalue: float
    argmin: tuple[float, float]
    negative_found: bool
    predicted_spd: bool | None

    @property
    def prediction_holds(self) -> bool | None:
        if self.predicted_spd is None:
            return None
        return self.predicted_spd == (not self.negative_found)


def check_spd(model: MobilityModel, D_r: float, D_b: float, d: int, step: float = 0.01, tol: float = 1e-14) -> SpdReport:
    """Minimum eigenvalue of ``M`` over the density simplex ``rho_r + rho_b <= 1``.

    For the low-density model in d=2 the predicted condition for positive
    semi-definiteness is ``pi - 3 < D_b / D_r < 1 / (pi - 3)``.
    """
    n = int(round(1 / step))
    g = np.arange(n + 1) * step
    rr, rb = np.meshgrid(g, g, indexing="ij")
    keep = rr + rb <= 1 + 1e-12
    rr, rb = rr[keep], np.minimum(rb[keep], 1 - rr[keep])
    m = mobility_components(model, rr, rb, D_r, D_b)
    a, off, c = m[0], 0.5 * (m[1] + m[2]), m[3]
    lam = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + off**2)
    i = int(np.argmin(lam))
    ratio = D_b / D_r
    predicted = None
    if model.kind == MATCHED_LOW and d == 2 and not model.spd_variant:
        lo = np.pi - 3
        predicted = bool(lo < ratio < 1 / lo)
    return SpdReport(model.kind, d, ratio, float(lam[i]), (float(rr[i]), float(rb[i])), bool(lam[i] < -tol), predicted)
