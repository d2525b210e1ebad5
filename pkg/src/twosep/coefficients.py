"""Lattice constants and closed-form transport coefficients.

The constant ``beta`` and the auxiliary dipole field ``psi`` are Brillouin
zone integrals over ``[-pi, pi]^d`` whose integrands are bounded (``beta``)
or integrable (``psi``) at the origin.  Both are evaluated with a
tensor-product midpoint rule; its nodes sit at odd multiples of ``pi/M`` and
never touch ``zeta = 0``.  For these periodic integrands the rule converges
like ``M^-4`` in d=2 and faster in d=3.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "NoConvergence",
    "OutOfRange",
    "TransportCoefficients",
    "PsiTable",
    "compute_beta_alpha",
    "transport_coefficients",
    "psi_eval",
    "psi_table",
    "gamma",
    "mu_sigma",
    "ds_mean_field",
    "ds_low",
    "ds_high",
    "ds_composite",
    "ds_mixture_low",
    "self_diffusion",
    "chi_eval",
]


class NoConvergence(RuntimeError):
    def __init__(self, msg, last=None, previous=None):
        super().__init__(msg)
        self.last = last
        self.previous = previous


class OutOfRange(ValueError):
    pass


def midpoint_nodes(M: int) -> np.ndarray:
    return -np.pi + (np.arange(M) + 0.5) * (2 * np.pi / M)


def _beta_midpoint(d: int, M: int) -> float:
    z = midpoint_nodes(M)
    s = np.sin(z / 2) ** 2
    num = np.sin(z) ** 2
    if d == 2:
        return -float(np.sum(num[:, None] / (2 * (s[:, None] + s[None, :])))) / M**2
    rest = s[:, None] + s[None, :]
    total = 0.0
    for i in range(M):  # slice over the sin^2 axis to bound memory
        total += num[i] * float(np.sum(1.0 / (2 * (s[i] + rest))))
    return -total / M**3


@dataclass(frozen=True)
class TransportCoefficients:
    d: int
    beta: float
    alpha: float
    resolution: int


def compute_beta_alpha(d: int, M: int = 16, tol: float = 1e-9, max_M: int = 8192) -> TransportCoefficients:
    """Evaluate ``beta`` by midpoint quadrature, doubling ``M`` until converged.

    ``alpha = -beta / (1 + beta)``.
    """
    if d not in (2, 3):
        raise ValueError(f"d must be 2 or 3, got {d}")
    if M < 16:
        raise ValueError("resolution must be at least 16 per axis")
    prev, before = _beta_midpoint(d, M), None
    while True:
        M *= 2
        if M > max_M or (d == 3 and M > 1024):
            raise NoConvergence(f"beta not converged to {tol} by M={M // 2}", last=prev, previous=before)
        cur = _beta_midpoint(d, M)
        if abs(cur - prev) < tol:
            return TransportCoefficients(d, float(cur), float(-cur / (1 + cur)), M)
        prev, before = cur, prev


@lru_cache(maxsize=None)
def transport_coefficients(d: int) -> TransportCoefficients:
    """Cached converged coefficients for dimension ``d``."""
    return compute_beta_alpha(d)


# -- auxiliary function psi ----------------------------------------------------


def _psi_midpoint(d: int, v: np.ndarray, M: int) -> tuple[np.ndarray, float]:
    # psi_j(v) = (2pi)^-d int i sin(z_j) e^{i z.v} / (2 sum sin^2(z_k/2)) dz
    z = midpoint_nodes(M)
    grids = np.meshgrid(*([z] * d), indexing="ij", sparse=True)
    denom = 2 * sum(np.sin(g / 2) ** 2 for g in grids)
    phase = sum(g * vk for g, vk in zip(grids, v))
    re = np.empty(d)
    im = 0.0
    for j in range(d):
        f = np.sin(grids[j]) / denom
        re[j] = -np.mean(np.broadcast_to(f * np.sin(phase), (M,) * d))
        im = max(im, abs(np.mean(np.broadcast_to(f * np.cos(phase), (M,) * d))))
    return re, im


def psi_eval(d: int, v, M: int | None = None, tol: float = 1e-8, max_M: int | None = None) -> np.ndarray:
    """The d-vector ``psi(v)`` at an integer lattice offset ``v``.

    With ``M`` given the rule is applied once; otherwise ``M`` doubles from
    a start that resolves the oscillation ``e^{i zeta.v}`` until successive
    values agree to ``tol``.  The imaginary part of the quadrature must
    vanish by symmetry and is checked against ``1e-8``.
    """
    v = np.asarray(v, dtype=np.int64)
    if v.shape != (d,):
        raise ValueError(f"offset must have {d} components")
    if M is not None:
        val, im = _psi_midpoint(d, v, M)
    else:
        max_M = max_M or (4096 if d == 2 else 256)
        M = max(32, 8 * int(2 ** np.ceil(np.log2(np.abs(v).max() + 1))))
        prev, _ = _psi_midpoint(d, v, M)
        while True:
            M *= 2
            if M > max_M:
                raise NoConvergence(f"psi({tuple(v)}) not converged by M={M // 2}", last=val, previous=prev)
            val, im = _psi_midpoint(d, v, M)
            if np.max(np.abs(val - prev)) < tol:
                break
            prev = val
    if im > 1e-8:
        raise RuntimeError(f"imaginary residual {im:.2e} in psi quadrature")
    return val


@dataclass(frozen=True)
class PsiTable:
    """``psi`` on the offsets ``{-R..R}^d``; ``values[j][v + R]`` is ``psi_j(v)``."""

    d: int
    radius: int
    resolution: int
    values: np.ndarray
    imag_residual: float

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.int64)
        if np.all(np.abs(v) <= self.radius):
            return self.values[(slice(None),) + tuple(v + self.radius)].copy()
        return psi_eval(self.d, v)

    def to_csv(self, path) -> None:
        R = self.radius
        offs = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * self.d), indexing="ij"), -1).reshape(-1, self.d)
        vals = self.values.reshape(self.d, -1).T
        header = ",".join([f"v{k + 1}" for k in range(self.d)] + [f"psi{k + 1}" for k in range(self.d)])
        rows = [",".join([str(int(o)) for o in off] + [repr(float(x)) for x in val]) for off, val in zip(offs, vals)]
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")


def _psi_fft(d: int, M: int) -> tuple[np.ndarray, float]:
    # midpoint rule for all offsets at once: e^{i zeta.v} = e^{i c sum v} e^{2 pi i m.v / M}
    z = midpoint_nodes(M)
    grids = np.meshgrid(*([z] * d), indexing="ij", sparse=True)
    denom = 2 * sum(np.sin(g / 2) ** 2 for g in grids)
    c = -np.pi + np.pi / M
    v = np.fft.fftfreq(M, 1.0 / M).astype(np.int64)
    vgrid = np.meshgrid(*([v] * d), indexing="ij", sparse=True)
    shift = np.exp(1j * c * sum(vgrid))
    out = np.empty((d,) + (M,) * d)
    im = 0.0
    for j in range(d):
        ft = 1j * np.broadcast_to(np.sin(grids[j]) / denom, (M,) * d)
        vals = np.fft.ifftn(ft) * shift
        out[j] = vals.real
        im = max(im, float(np.abs(vals.imag).max()))
    return out, im


@lru_cache(maxsize=8)
def psi_table(d: int, radius: int = 10, M: int | None = None) -> PsiTable:
    """Tabulate ``psi`` on ``{-R..R}^d`` from one FFT-evaluated midpoint rule."""
    M = M or (1024 if d == 2 else 128)
    if M < 4 * radius:
        raise ValueError("resolution too small for the requested radius")
    full, im = _psi_fft(d, M)
    idx = np.arange(-radius, radius + 1) % M
    vals = full[np.ix_(range(d), *([idx] * d))]
    if im > 1e-8:
        raise RuntimeError(f"imaginary residual {im:.2e} in psi table")
    return PsiTable(d, radius, M, vals, im)


# -- closed-form coefficients ----------------------------------------------------


def gamma(D_a: float, D_b: float) -> float:
    """Diffusivity ratio ``2 D_a / (D_a + D_b)``."""
    if not (D_a > 0 and D_b > 0):
        raise ValueError("diffusivities must be positive")
    return 2 * D_a / (D_a + D_b)


def mu_sigma(rho, alpha: float, gamma_sb: float, variant: str = "standard"):
    """Low-density cross-mobility factor ``mu_sigma(rho)``.

    ``variant="spd"`` inserts an extra ``(1 - rho)`` in the correction,
    which changes only third-order terms but keeps the mobility positive
    semi-definite for any diffusivity ratio.
    """
    rho = np.asarray(rho, dtype=float)
    if variant == "standard":
        out = (1 - rho) * (1 - alpha * gamma_sb * rho)
    elif variant == "spd":
        out = (1 - rho) * (1 - alpha * (1 - rho) * gamma_sb * rho)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return out if out.ndim else float(out)


def _check_phi(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or np.any(phi > 1):
        raise OutOfRange(f"occupied fraction outside [0, 1]: {phi}")
    return phi


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def ds_mean_field(phi, D: float = 1.0):
    return _scalar(D * (1 - _check_phi(phi)))


def ds_low(phi, alpha: float):
    return _scalar(1 - (1 + alpha) * _check_phi(phi))


def ds_high(phi, alpha: float):
    return _scalar((1 - _check_phi(phi)) / (2 * alpha + 1))


def ds_composite(phi, alpha: float):
    """Cubic interpolant matching the first-order behaviour at both ends."""
    phi = _check_phi(phi)
    c2 = alpha * (2 * alpha - 1) / (2 * alpha + 1)
    return _scalar((1 - phi) * (1 - alpha * phi + c2 * phi**2))


def ds_mixture_low(D_g: float, environment, alpha: float) -> float:
    """First-order self-diffusion of a tagged particle among ``(D_s, phi_s)`` species."""
    total = 0.0
    for D_s, phi_s in environment:
        _check_phi(phi_s)
        total += (1 + alpha * gamma(D_g, D_s)) * phi_s
    _check_phi(sum(p for _, p in environment))
    return D_g * (1 - total)


def self_diffusion(model: str, phi=None, alpha: float | None = None, D: float = 1.0, D_g=None, environment=None):
    """Dispatch to one of the self-diffusion approximations by name."""
    if model == "mean_field":
        return ds_mean_field(phi, D)
    if model == "mixture_low":
        return ds_mixture_low(D_g, environment, alpha)
    funcs = {"low": ds_low, "high": ds_high, "composite": ds_composite}
    if model not in funcs:
        raise ValueError(f"unknown self-diffusion model {model!r}")
    return funcs[model](phi, alpha)


def chi_eval(d: int, v, which: str, coeffs: TransportCoefficients | None = None, table: PsiTable | None = None):
    """Rescaled auxiliary field: ``(1+a)/2 psi`` (low) or ``(1+a)/(1+2a) psi`` (high)."""
    coeffs = coeffs or transport_coefficients(d)
    table = table or psi_table(d)
    a = coeffs.alpha
    if which == "low":
        factor = (1 + a) / 2
    elif which == "high":
        factor = (1 + a) / (1 + 2 * a)
    else:
        raise ValueError("which must be 'low' or 'high'")
    return factor * table(v)
