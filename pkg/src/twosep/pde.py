"""Explicit finite-volume solver for the two-species gradient flow.

Each step applies

    rho(x) += (dt / h) * sum_k [J(x + h/2 e_k) - J(x - h/2 e_k)],
    J = M(rho_mid) F,

on a periodic grid, where ``F`` is the discrete thermodynamic force whose
differences are already divided by ``h``.  The divergence telescopes, so
per-species mass is conserved up to rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuum import DensityFields, MobilityModel, flux_factors, free_energy

__all__ = [
    "Instability",
    "MaxTimeExceeded",
    "SolverParams",
    "PdeRun",
    "edge_flux",
    "pde_step",
    "pde_run",
    "steady_state",
    "snapshot_csv",
    "energy_csv",
]

log = logging.getLogger(__name__)

CLAMP_BAND = 1e-8


class Instability(RuntimeError):
    pass


class MaxTimeExceeded(RuntimeError):
    def __init__(self, msg, last: DensityFields, t: float):
        super().__init__(msg)
        self.last = last
        self.t = t


@dataclass(frozen=True)
class SolverParams:
    dt_factor: float = 0.2
    T_end: float = 0.0
    snapshot_times: tuple[float, ...] = ()
    steady_state_tol: float = 1e-6

    def __post_init__(self):
        if not 0 < self.dt_factor <= 0.5:
            raise ValueError("dt_factor must lie in (0, 0.5]")
        if self.T_end < 0:
            raise ValueError("T_end must be non-negative")
        times = tuple(float(t) for t in self.snapshot_times)
        if list(times) != sorted(times) or (times and (times[0] < 0 or times[-1] > self.T_end)):
            raise ValueError("snapshot times must be sorted and lie in [0, T_end]")
        object.__setattr__(self, "snapshot_times", times)

    def dt(self, fields: DensityFields) -> float:
        return self.dt_factor * fields.geometry.h**2 / max(sp.D for sp in fields.species)


def _axis_flux(fields: DensityFields, model: MobilityModel, axis: int, grad_v=None):
    geo = fields.geometry
    h = geo.h
    r, b = fields.rho_r, fields.rho_b
    rn, bn = np.roll(r, -1, axis), np.roll(b, -1, axis)
    dr, db = (rn - r) / h, (bn - b) / h
    dt = dr + db
    D_r, D_b = fields.species[0].D, fields.species[1].D
    M, N, G = flux_factors(model, 0.5 * (r + rn), 0.5 * (b + bn), D_r, D_b)
    if grad_v is None:
        gr = fields.species[0].V.edge_gradient(geo, axis)
        gb = fields.species[1].V.edge_gradient(geo, axis)
    else:
        gr, gb = grad_v
    Jr = N[0] * dr + N[1] * db + (G[0] + G[1]) * dt + M[0] * gr + M[1] * gb
    Jb = N[2] * dr + N[3] * db + (G[2] + G[3]) * dt + M[2] * gr + M[3] * gb
    return Jr, Jb


def edge_flux(fields: DensityFields, model: MobilityModel, x, k: int) -> tuple[float, float]:
    """Flux pair on the edge from node ``x`` to ``x + h e_k``."""
    Jr, Jb = _axis_flux(fields, model, k)
    idx = tuple(int(c) % fields.geometry.L for c in x)
    return float(Jr[idx]), float(Jb[idx])


class _Stepper:
    """Caches potential gradients so repeated steps only touch densities."""

    def __init__(self, fields: DensityFields, model: MobilityModel):
        geo = fields.geometry
        self.model = model
        self.grads = [
            (fields.species[0].V.edge_gradient(geo, k), fields.species[1].V.edge_gradient(geo, k))
            for k in range(geo.d)
        ]
        self.clamped = 0.0

    def __call__(self, fields: DensityFields, dt: float) -> DensityFields:
        geo = fields.geometry
        inc_r = np.zeros(geo.shape)
        inc_b = np.zeros(geo.shape)
        for k in range(geo.d):
            Jr, Jb = _axis_flux(fields, self.model, k, self.grads[k])
            inc_r += Jr - np.roll(Jr, 1, k)
            inc_b += Jb - np.roll(Jb, 1, k)
        c = dt / geo.h
        new_r = fields.rho_r + c * inc_r
        new_b = fields.rho_b + c * inc_b
        self.clamped += _guard(new_r, new_b)
        out = fields.copy()
        out.rho_r, out.rho_b = new_r, new_b
        return out


def _guard(r, b) -> float:
    lo = min(r.min(), b.min())
    tot = r + b
    hi = max(r.max(), b.max(), tot.max())
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo < -CLAMP_BAND or hi > 1 + CLAMP_BAND:
        raise Instability(f"density left [-{CLAMP_BAND}, 1+{CLAMP_BAND}]: min {lo:.3e}, max {hi:.3e}")
    amount = 0.0
    if lo < 0:
        amount += float(-np.minimum(r, 0).sum() - np.minimum(b, 0).sum())
        np.maximum(r, 0, out=r)
        np.maximum(b, 0, out=b)
    if hi > 1:
        over = np.maximum(r + b - 1, 0)
        amount += float(over.sum())
        share = np.where(r + b > 0, r / np.maximum(r + b, 1e-300), 0.5)
        r -= over * share
        b -= over * (1 - share)
    if amount:
        log.info("clamped %.3e total density into [0, 1]", amount)
    return amount


def pde_step(fields: DensityFields, model: MobilityModel, dt: float) -> DensityFields:
    """One explicit Euler step; returns new fields."""
    return _Stepper(fields, model)(fields, dt)


@dataclass
class PdeRun:
    times: list[float]
    snapshots: list[DensityFields]
    energies: list[float]
    final: DensityFields
    steps: int = 0
    clamped: float = 0.0
    energy_times: list[float] = field(default_factory=list)
    energy_trace: list[float] = field(default_factory=list)


def pde_run(fields: DensityFields, model: MobilityModel, params: SolverParams, energy_every: int = 0) -> PdeRun:
    """Integrate to ``params.T_end``, landing exactly on each snapshot time.

    The last step before a snapshot is shortened as needed.  The free energy
    is recorded at every snapshot, and additionally every ``energy_every``
    steps when that is positive.
    """
    step = _Stepper(fields, model)
    dt = params.dt(fields)
    cur = fields.copy()
    t = 0.0
    n = 0
    out = PdeRun([], [], [], cur)
    if energy_every:
        out.energy_times.append(0.0)
        out.energy_trace.append(free_energy(cur))
    for target in list(params.snapshot_times) + [params.T_end]:
        while target - t > 1e-14 * max(1.0, target):
            h_dt = min(dt, target - t)
            cur = step(cur, h_dt)
            t = target if h_dt < dt else t + dt
            n += 1
            if energy_every and n % energy_every == 0:
                out.energy_times.append(t)
                out.energy_trace.append(free_energy(cur))
        out.times.append(target)
        out.snapshots.append(cur.copy())
        out.energies.append(free_energy(cur))
    # the final T_end entry is bookkeeping only
    out.times.pop()
    out.snapshots.pop()
    out.energies.pop()
    out.final = cur
    out.steps = n
    out.clamped = step.clamped
    return out


def steady_state(
    fields: DensityFields,
    model: MobilityModel,
    tol: float = 1e-6,
    dt_factor: float = 0.2,
    check_every: int = 200,
    max_time: float = 50.0,
) -> tuple[DensityFields, float]:
    """Integrate until ``||rho(t + delta) - rho(t)||_1 / delta < tol``.

    The norm is ``h^d`` times the sum of absolute changes over both species.
    Returns the plateau fields and the time reached.
    """
    step = _Stepper(fields, model)
    dt = SolverParams(dt_factor).dt(fields)
    geo = fields.geometry
    w = geo.h**geo.d
    cur = fields.copy()
    t = 0.0
    while True:
        prev = cur
        for _ in range(check_every):
            cur = step(cur, dt)
        t += check_every * dt
        change = w * (np.abs(cur.rho_r - prev.rho_r).sum() + np.abs(cur.rho_b - prev.rho_b).sum())
        if change / (check_every * dt) < tol:
            return cur, t
        if t > max_time:
            raise MaxTimeExceeded(f"no steady state within t={max_time} (rate {change / (check_every * dt):.3e})", cur, t)


def snapshot_csv(fields: DensityFields, path) -> None:
    """Write ``x1, ..., xd, rho_r, rho_b`` rows, one per node, in C order."""
    geo = fields.geometry
    xs = np.meshgrid(*([np.arange(geo.L) * geo.h] * geo.d), indexing="ij")
    cols = [x.ravel() for x in xs] + [fields.rho_r.ravel(), fields.rho_b.ravel()]
    header = [f"x{k + 1}" for k in range(geo.d)] + ["rho_r", "rho_b"]
    from .estimators import write_csv

    write_csv(path, header, np.column_stack(cols))


def energy_csv(times, energies, path) -> None:
    from .estimators import write_csv

    write_csv(path, ["t", "E"], np.column_stack([np.asarray(times, float), np.asarray(energies, float)]))
