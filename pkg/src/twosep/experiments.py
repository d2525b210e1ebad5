"""Experiment configuration, presets, orchestration and result emission."""
from __future__ import annotations

import dataclasses
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .coefficients import (
    ds_composite,
    ds_high,
    ds_low,
    ds_mean_field,
    ds_mixture_low,
    psi_table,
    transport_coefficients,
)
from .continuum import MODEL_NAMES, DensityFields, free_energy, make_model
from .estimators import (
    axis_profiles,
    bin_field,
    bin_layout,
    density_profile,
    empirical_energy_trace,
    estimate_self_diffusion,
    lattice_window,
    penetration,
    profile_median,
    write_csv,
)
from .kmc import KmcRunParams, occupancy_rows, realization_seeds, run_realization
from .lattice import AxisBlocks, FixedCount, LatticeGeometry, SpeciesParams, init_state, potential_from_dict
from .pde import SolverParams, pde_run, steady_state

__all__ = [
    "KINDS",
    "ParseError",
    "ValidationError",
    "ExperimentConfig",
    "ResultBundle",
    "preset",
    "parse_config",
    "emit_config",
    "validate_config",
    "run_experiment",
    "emit_results",
]

KINDS = (
    "selfdiff_sweep_equal",
    "selfdiff_sweep_mixture",
    "profile_comparison_equal",
    "energy_trace",
    "profile_comparison_unequal",
    "coefficients_report",
    "custom",
)


class ParseError(ValueError):
    def __init__(self, msg, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + loc)
        self.line = line
        self.column = column


class ValidationError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``phi_r``/``phi_b`` are global occupied fractions (``N h^d``); with
    ``init="blocks"`` each species fills its half at twice that density.
    The self-diffusion window is given in lattice time (unit hop rate) and
    converted with ``t = T h^2``.  Potentials use the dictionaries of
    :func:`twosep.lattice.potential_from_dict`.
    """

    kind: str
    d: int = 2
    L: int = 100
    D_r: float = 1.0
    D_b: float = 1.0
    V_r: dict = field(default_factory=lambda: {"kind": "zero"})
    V_b: dict = field(default_factory=lambda: {"kind": "zero"})
    phi_r: float = 0.25
    phi_b: float = 0.25
    init: str = "blocks"
    phi_grid: tuple = ()
    gamma_grid: tuple = ()
    K: int = 10
    seed: int = 0
    times: tuple = ()
    window: tuple = (250.0, 300.0)
    window_samples: int = 11
    models: tuple = ()
    dt_factor: float = 0.2
    bin_width: float = 0.08
    spd_variant: bool = False
    steady_tol: float = 1e-7
    psi_radius: int = 10
    threads: int = 1

    @property
    def h(self) -> float:
        return 1.0 / self.L

    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.d, self.L)

    def species(self, D_r=None, D_b=None) -> tuple[SpeciesParams, SpeciesParams]:
        return (
            SpeciesParams("red", self.D_r if D_r is None else D_r, potential_from_dict(self.V_r)),
            SpeciesParams("blue", self.D_b if D_b is None else D_b, potential_from_dict(self.V_b)),
        )

    def replace(self, **kw) -> "ExperimentConfig":
        return validate_config(dataclasses.replace(self, **kw))


_TUPLE_FIELDS = ("phi_grid", "gamma_grid", "times", "window", "models")


def _opposed_sine(D: float, sign: float, d: int) -> dict:
    return {"kind": "sinusoidal", "amplitude": sign / D, "wavevector": [1] + [0] * (d - 1)}


def preset(kind: str, **overrides) -> ExperimentConfig:
    """Desk-scale defaults for each experiment kind."""
    if kind not in KINDS:
        raise ValidationError([f"unknown experiment kind {kind!r}"])
    base: dict[str, Any] = {"kind": kind}
    if kind == "selfdiff_sweep_equal":
        base.update(L=100, K=10, phi_grid=(0.1, 0.3, 0.5, 0.7, 0.9), init="uniform")
    elif kind == "selfdiff_sweep_mixture":
        base.update(L=100, K=10, phi_grid=(0.05, 0.1, 0.15, 0.2), gamma_grid=(0.25, 0.5, 1.0, 1.5, 1.75), init="uniform")
    elif kind in ("profile_comparison_equal", "energy_trace"):
        d = overrides.get("d", 2)
        base.update(
            L=50,
            D_r=1.0,
            D_b=1.0,
            V_r=_opposed_sine(1.0, 1.0, d),
            V_b=_opposed_sine(1.0, -1.0, d),
            phi_r=0.25,
            phi_b=0.25,
            models=("composite_quastel", "mean_field"),
        )
        if kind == "profile_comparison_equal":
            base.update(K=30, times=(0.02, 0.08, 0.3))
        else:
            base.update(K=60, times=tuple(round(0.02 * i, 10) for i in range(11)))
    elif kind == "profile_comparison_unequal":
        d = overrides.get("d", 2)
        base.update(
            L=50,
            D_r=1.5,
            D_b=0.5,
            V_r=_opposed_sine(1.5, 1.0, d),
            V_b=_opposed_sine(0.5, -1.0, d),
            phi_r=0.05,
            phi_b=0.05,
            K=60,
            times=(0.01, 0.02, 0.04),
            models=("matched_low", "mean_field"),
        )
    elif kind == "coefficients_report":
        base.update(K=1)
    base.update(overrides)
    for k in _TUPLE_FIELDS:
        if k in base:
            base[k] = tuple(base[k])
    return validate_config(ExperimentConfig(**base))


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Return ``cfg`` or raise a ValidationError listing every violated guard."""
    p = []
    if cfg.kind not in KINDS:
        p.append(f"kind must be one of {KINDS}, got {cfg.kind!r}")
    if cfg.d not in (2, 3):
        p.append(f"d must be 2 or 3, got {cfg.d}")
    if not isinstance(cfg.L, int) or cfg.L < 2:
        p.append(f"L must be an integer >= 2, got {cfg.L!r}")
    for name in ("D_r", "D_b"):
        if not getattr(cfg, name) > 0:
            p.append(f"{name} must be positive")
    for name in ("phi_r", "phi_b"):
        v = getattr(cfg, name)
        if not 0 <= v <= 1:
            p.append(f"{name} must lie in [0, 1], got {v}")
    if cfg.phi_r + cfg.phi_b > 1:
        p.append("phi_r + phi_b must not exceed 1")
    if cfg.init == "blocks" and (cfg.phi_r > 0.5 or cfg.phi_b > 0.5):
        p.append("block initial data needs phi_r, phi_b <= 0.5")
    if cfg.init not in ("blocks", "uniform"):
        p.append(f"init must be 'blocks' or 'uniform', got {cfg.init!r}")
    for v in cfg.phi_grid:
        if not 0 <= v <= 1:
            p.append(f"phi grid value {v} outside [0, 1]")
    for g in cfg.gamma_grid:
        if not 0 < g < 2:
            p.append(f"gamma grid value {g} outside (0, 2)")
    if not isinstance(cfg.K, int) or cfg.K < 1:
        p.append(f"K must be an integer >= 1, got {cfg.K!r}")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        p.append("seed must be an unsigned 64-bit integer")
    if list(cfg.times) != sorted(cfg.times) or any(t < 0 for t in cfg.times):
        p.append("times must be sorted and non-negative")
    if len(cfg.window) != 2 or not 0 < cfg.window[0] < cfg.window[1]:
        p.append("window must be (T1, T2) with 0 < T1 < T2")
    if cfg.window_samples < 1:
        p.append("window_samples must be >= 1")
    for m in cfg.models:
        if m not in MODEL_NAMES:
            p.append(f"unknown mobility model {m!r}")
    if "composite_quastel" in cfg.models and cfg.D_r != cfg.D_b:
        p.append("composite_quastel requires D_r == D_b")
    if not 0 < cfg.dt_factor <= 0.5:
        p.append("dt_factor must lie in (0, 0.5]")
    if not cfg.bin_width > 0:
        p.append("bin_width must be positive")
    elif cfg.kind.startswith("profile") or cfg.kind == "custom":
        ratio = cfg.bin_width * cfg.L
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            p.append(f"bin_width {cfg.bin_width} is not a multiple of h = 1/{cfg.L}")
    if not cfg.steady_tol > 0:
        p.append("steady_tol must be positive")
    if cfg.psi_radius < 1:
        p.append("psi_radius must be >= 1")
    if cfg.threads < 1:
        p.append("threads must be >= 1")
    for name in ("V_r", "V_b"):
        try:
            potential_from_dict(getattr(cfg, name))
        except (KeyError, ValueError, TypeError) as exc:
            p.append(f"{name}: {exc}")
    if p:
        raise ValidationError(p)
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON document into a validated config.

    A document may name a ``preset`` (an experiment kind) whose defaults
    are filled in before the remaining keys override them; otherwise
    ``kind`` is required and unspecified keys take the dataclass defaults.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(doc) - names - {"preset"})
    if unknown:
        raise ValidationError([f"unknown key {k!r}" for k in unknown])
    for k in _TUPLE_FIELDS:
        if k in doc:
            if not isinstance(doc[k], list):
                raise ValidationError([f"{k} must be a list"])
            doc[k] = tuple(doc[k])
    for k in ("d", "L", "K", "seed", "window_samples", "psi_radius", "threads"):
        if isinstance(doc.get(k), float) and doc[k].is_integer():
            doc[k] = int(doc[k])
    kind = doc.pop("preset", None)
    try:
        if kind is not None:
            if "kind" in doc and doc["kind"] != kind:
                raise ValidationError([f"preset {kind!r} conflicts with kind {doc['kind']!r}"])
            doc.pop("kind", None)
            return preset(kind, **doc)
        if "kind" not in doc:
            raise ValidationError(["missing required key 'kind'"])
        return validate_config(ExperimentConfig(**doc))
    except TypeError as exc:
        raise ValidationError([str(exc)]) from None


# -- results ------------------------------------------------------------------------


@dataclass
class Table:
    header: list[str]
    rows: list[list[float]] = field(default_factory=list)


@dataclass
class ResultBundle:
    config: ExperimentConfig
    tables: dict[str, Table] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _window_times(cfg: ExperimentConfig) -> tuple[tuple[float, float], list[float]]:
    T1, T2 = lattice_window(cfg.h, *cfg.window)
    n = cfg.window_samples
    times = [T1] if n == 1 else list(np.linspace(T1, T2, n))
    return (T1, T2), times


def _se(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan


def _count(phi: float, n_sites: int) -> int:
    return int(round(phi * n_sites))


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _kmc_batch(geo, species, mode, K, master_seed, offset, params_kw, threads, seeds_out):
    def one(k):
        init_seed, dyn_seed = realization_seeds(master_seed, offset + k)
        state = init_state(geo, species, mode, seed=init_seed)
        return run_realization(state, KmcRunParams(seed=dyn_seed, **params_kw))

    for k in range(K):
        seeds_out.append({"master": master_seed, "index": offset + k})
    return _map(one, range(K), threads)


def _selfdiff_equal(cfg, bundle, threads, seeds):
    geo = cfg.geometry()
    alpha = transport_coefficients(cfg.d).alpha
    window, times = _window_times(cfg)
    t = bundle.tables["selfdiff"] = Table(["phi", "Ds_measured", "stderr", "Ds_composite", "Ds_low", "Ds_high", "Ds_mf"])
    for i, phi in enumerate(cfg.phi_grid):
        n = _count(phi, geo.n_sites)
        mode = FixedCount((n // 2, n - n // 2))
        res = _kmc_batch(geo, cfg.species(), mode, cfg.K, cfg.seed, i * cfg.K, dict(T_end=times[-1], snapshot_times=tuple(times), record_tracers=(0,), keep_states=False), threads, seeds)
        est = estimate_self_diffusion(res, 0, window)
        t.rows.append([phi, est.value, est.stderr, ds_composite(phi, alpha), ds_low(phi, alpha), ds_high(phi, alpha), ds_mean_field(phi)])
    bundle.summary["window"] = list(window)


def _selfdiff_mixture(cfg, bundle, threads, seeds):
    geo = cfg.geometry()
    alpha = transport_coefficients(cfg.d).alpha
    window, times = _window_times(cfg)
    t = bundle.tables["selfdiff_mixture"] = Table(["phi", "gamma", "Ds_measured", "stderr", "Ds_low", "Ds_mf"])
    i = 0
    for g in cfg.gamma_grid:
        D_r, D_b = g, 2.0 - g
        for phi in cfg.phi_grid:
            n = _count(phi, geo.n_sites)
            mode = FixedCount((n // 2, n - n // 2))
            res = _kmc_batch(geo, cfg.species(D_r, D_b), mode, cfg.K, cfg.seed, i * cfg.K, dict(T_end=times[-1], snapshot_times=tuple(times), record_tracers=(0,), keep_states=False), threads, seeds)
            i += 1
            est = estimate_self_diffusion(res, 0, window)
            low = ds_mixture_low(D_r, [(D_r, phi / 2), (D_b, phi / 2)], alpha)
            t.rows.append([phi, g, est.value, est.stderr, low, D_r * (1 - phi)])
    bundle.summary["window"] = list(window)


def _initial_fields(cfg) -> DensityFields:
    geo = cfg.geometry()
    if cfg.init == "blocks":
        return DensityFields.blocks(geo, cfg.species(), 2 * cfg.phi_r, 2 * cfg.phi_b)
    return DensityFields.uniform(geo, cfg.species(), cfg.phi_r, cfg.phi_b)


def _kmc_mode(cfg, geo):
    if cfg.init == "blocks":
        return AxisBlocks((2 * cfg.phi_r, 2 * cfg.phi_b))
    return FixedCount((_count(cfg.phi_r, geo.n_sites), _count(cfg.phi_b, geo.n_sites)))


def _profiles(cfg, bundle, threads, seeds):
    geo = cfg.geometry()
    times = tuple(cfg.times)
    layout = bin_layout(cfg.L, cfg.bin_width)
    header = ["bin_center", "rho_r_mean", "rho_r_stderr", "rho_b_mean", "rho_b_stderr"]
    comp = bundle.tables["comparison"] = Table(
        ["t", "source", "fraction_within_2se", "red_beyond_half", "red_beyond_half_stderr", "red_median", "red_median_stderr"]
    )
    sources = []
    kmc_profiles = {}
    if cfg.K > 0 and times:
        res = _kmc_batch(geo, cfg.species(), _kmc_mode(cfg, geo), cfg.K, cfg.seed, 0, dict(T_end=times[-1], snapshot_times=times, record_tracers=(), keep_states=True), threads, seeds)
        for i, t in enumerate(times):
            states = [r.states[i] for r in res]
            pr, pb = density_profile(states, 0, cfg.bin_width), density_profile(states, 1, cfg.bin_width)
            kmc_profiles[i] = (pr, pb)
            tab = bundle.tables[f"profile_kmc_t{i}"] = Table(header)
            for row in zip(pr.centers, pr.mean, pr.stderr, pb.mean, pb.stderr):
                tab.rows.append(list(row))
            per = axis_profiles(states, 0)
            pen = [penetration(bin_field(p, layout), layout) for p in per]
            meds = [profile_median(p) for p in per]
            comp.rows.append([t, -1, math.nan, penetration(pr.mean, layout), _se(pen), profile_median(per.mean(0)), _se(meds)])
            sources.append(("kmc", i))
            bundle.tables[f"occupancy_r0_t{i}"] = Table(["site", "tag"], occupancy_rows(res[0].states[i]).tolist())
        bundle.summary["events"] = [int(r.events) for r in res]
        bundle.summary["executed"] = [int(r.executed) for r in res]
    f0 = _initial_fields(cfg)

    def solve(name):
        return name, pde_run(f0, make_model(name, cfg.d, cfg.D_r, cfg.D_b, cfg.spd_variant), SolverParams(cfg.dt_factor, times[-1] if times else 0.0, times))

    runs = dict(_map(solve, list(cfg.models), threads))
    for m, name in enumerate(cfg.models):
        run = runs[name]
        for i, (t, snap) in enumerate(zip(run.times, run.snapshots)):
            br, bb = bin_field(snap.rho_r, layout), bin_field(snap.rho_b, layout)
            tab = bundle.tables[f"profile_{name}_t{i}"] = Table(header)
            for row in zip(layout.centers, br, np.zeros_like(br), bb, np.zeros_like(bb)):
                tab.rows.append(list(row))
            frac = math.nan
            if i in kmc_profiles:
                pr, pb = kmc_profiles[i]
                ok = np.concatenate([np.abs(br - pr.mean) <= 2 * pr.stderr, np.abs(bb - pb.mean) <= 2 * pb.stderr])
                frac = float(ok.mean())
            comp.rows.append([t, m, frac, penetration(br, layout), 0.0, profile_median(snap.rho_r.reshape(cfg.L, -1).mean(1)), 0.0])
            bundle.tables[f"snapshot_{name}_t{i}"] = _snapshot_table(snap)
    bundle.summary["source_codes"] = {"-1": "kmc", **{str(m): n for m, n in enumerate(cfg.models)}}


def _snapshot_table(snap: DensityFields) -> Table:
    geo = snap.geometry
    xs = np.meshgrid(*([np.arange(geo.L) * geo.h] * geo.d), indexing="ij")
    cols = [x.ravel() for x in xs] + [snap.rho_r.ravel(), snap.rho_b.ravel()]
    return Table([f"x{k + 1}" for k in range(geo.d)] + ["rho_r", "rho_b"], np.column_stack(cols).tolist())


def _energy(cfg, bundle, threads, seeds):
    geo = cfg.geometry()
    times = tuple(cfg.times)
    f0 = _initial_fields(cfg)
    ref_model = cfg.models[0] if cfg.models else "mean_field"
    steady, t_ss = steady_state(f0, make_model(ref_model, cfg.d, cfg.D_r, cfg.D_b, cfg.spd_variant), tol=cfg.steady_tol, dt_factor=cfg.dt_factor)
    E_inf = free_energy(steady)
    bundle.summary["E_inf"] = E_inf
    bundle.summary["steady_state_time"] = t_ss
    sp = cfg.species()
    # profiles are averaged over transverse axes, so the potentials must not vary along them
    V_r = sp[0].V.values(geo).reshape(cfg.L, -1)[:, 0]
    V_b = sp[1].V.values(geo).reshape(cfg.L, -1)[:, 0]
    if cfg.K > 0 and times:
        res = _kmc_batch(geo, sp, _kmc_mode(cfg, geo), cfg.K, cfg.seed, 0, dict(T_end=times[-1], snapshot_times=times, record_tracers=(), keep_states=True), threads, seeds)
        profs = [(axis_profiles([r.states[i] for r in res], 0), axis_profiles([r.states[i] for r in res], 1)) for i in range(len(times))]
        tr = empirical_energy_trace(profs, times, V_r, V_b, cfg.h, E_inf, seed=cfg.seed % (2**32))
        tab = bundle.tables["energy_kmc"] = Table(["t", "E_hat", "stderr"])
        for row in zip(tr.times, tr.E_hat, tr.stderr):
            tab.rows.append(list(row))
        bundle.summary["energy_bias"] = [float(b) for b in tr.bias]
    for name in cfg.models:
        run = pde_run(f0, make_model(name, cfg.d, cfg.D_r, cfg.D_b, cfg.spd_variant), SolverParams(cfg.dt_factor, times[-1] if times else 0.0, times))
        tab = bundle.tables[f"energy_{name}"] = Table(["t", "E_hat", "stderr"])
        for t, E in zip(run.times, run.energies):
            tab.rows.append([t, E - E_inf, 0.0])


def _coefficients(cfg, bundle, threads, seeds):
    c = transport_coefficients(cfg.d)
    bundle.tables["coefficients"] = Table(["d", "beta", "alpha", "resolution"], [[cfg.d, c.beta, c.alpha, c.resolution]])
    tab = psi_table(cfg.d, cfg.psi_radius)
    R = cfg.psi_radius
    offs = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * cfg.d), indexing="ij"), -1).reshape(-1, cfg.d)
    vals = tab.values.reshape(cfg.d, -1).T
    bundle.tables["psi"] = Table(
        [f"v{k + 1}" for k in range(cfg.d)] + [f"psi{k + 1}" for k in range(cfg.d)],
        np.column_stack([offs, vals]).tolist(),
    )
    bundle.summary["psi_imag_residual"] = tab.imag_residual


class _NoKmc:
    """View of a config with the realisation count forced to zero."""

    def __init__(self, cfg):
        self._cfg = cfg
        self.K = 0

    def __getattr__(self, name):
        return getattr(self._cfg, name)


_RUNNERS = {
    "selfdiff_sweep_equal": _selfdiff_equal,
    "selfdiff_sweep_mixture": _selfdiff_mixture,
    "profile_comparison_equal": _profiles,
    "profile_comparison_unequal": _profiles,
    "custom": _profiles,
    "energy_trace": _energy,
    "coefficients_report": _coefficients,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None, parts=("kmc", "pde")) -> ResultBundle:
    """Run ``cfg`` and, when ``out_dir`` is given, write its results there.

    ``parts`` restricts profile and energy experiments to the stochastic
    (``"kmc"``) or deterministic (``"pde"``) half.

    On failure the partial tables are still written, with the manifest's
    ``status`` set to ``"failed"``, before the exception propagates.
    """
    cfg = validate_config(cfg)
    threads = threads or cfg.threads
    if "pde" not in parts:
        cfg = dataclasses.replace(cfg, models=())
    bundle = ResultBundle(cfg)
    bundle.summary["parts"] = sorted(parts)
    seeds: list[dict] = []
    start = time.perf_counter()
    status, error = "ok", None
    try:
        run_cfg = cfg if "kmc" in parts else _NoKmc(cfg)
        _RUNNERS[cfg.kind](run_cfg, bundle, threads, seeds)
    except Exception as exc:  # flushed below, then re-raised
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        raise
    finally:
        bundle.manifest = {
            "status": status,
            "error": error,
            "config": dataclasses.asdict(cfg),
            "resolved": {
                "h": cfg.h,
                "alpha": transport_coefficients(cfg.d).alpha,
                "dt": cfg.dt_factor * cfg.h**2 / max(cfg.D_r, cfg.D_b),
                "error_bars": "2 x stderr",
                "scale_factor": 1000 / cfg.L,
                "threads": threads,
            },
            "seeds": seeds,
            "summary": bundle.summary,
            "wall_clock_s": time.perf_counter() - start,
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        }
        if out_dir is not None:
            emit_results(bundle, out_dir)
    return bundle


def emit_results(bundle: ResultBundle, out_dir) -> list[Path]:
    """Write every table as CSV plus ``manifest.json``; re-emitting is byte-identical."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    for name in sorted(bundle.tables):
        t = bundle.tables[name]
        p = out / f"{name}.csv"
        try:
            write_csv(p, t.header, t.rows)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        paths.append(p)
    p = out / "manifest.json"
    p.write_text(json.dumps(_jsonable(bundle.manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    paths.append(p)
    return paths


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if math.isnan(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x
