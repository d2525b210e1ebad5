import json
import math
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twosep.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from twosep.experiments import (
    KINDS,
    ExperimentConfig,
    ParseError,
    ValidationError,
    emit_config,
    emit_results,
    parse_config,
    preset,
    run_experiment,
)


def small_profiles(**kw):
    base = dict(L=10, K=3, times=(0.002, 0.005), bin_width=0.2, seed=17)
    base.update(kw)
    return preset("profile_comparison_unequal", **base)


configs = st.builds(
    lambda kind, L, K, seed, phi, tol, spd: preset(kind, L=L, K=K, seed=seed, phi_r=phi, phi_b=phi / 2, steady_tol=tol, spd_variant=spd),
    st.sampled_from([k for k in KINDS if k != "custom"]),
    st.integers(1, 16).map(lambda n: 25 * n),  # the default bin width 0.08 must tile the grid
    st.integers(1, 1000),
    st.integers(0, 2**64 - 1),
    st.floats(0, 0.5),
    st.floats(1e-12, 1.0),
    st.booleans(),
)


@given(configs)
def test_config_round_trip(cfg):
    text = emit_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert emit_config(again) == text


def test_preset_expansion():
    cfg = parse_config('{"preset": "selfdiff_sweep_equal"}')
    assert (cfg.d, cfg.D_r, cfg.D_b, cfg.L, cfg.K) == (2, 1.0, 1.0, 100, 10)
    assert cfg.V_r == {"kind": "zero"} and cfg.V_b == {"kind": "zero"}
    assert cfg.phi_grid == (0.1, 0.3, 0.5, 0.7, 0.9)
    fig7 = preset("profile_comparison_unequal")
    assert (fig7.D_r, fig7.D_b, fig7.phi_r, fig7.times) == (1.5, 0.5, 0.05, (0.01, 0.02, 0.04))
    assert fig7.models == ("matched_low", "mean_field")


def test_validation_lists_every_problem():
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "custom", "phi_r": 1.3}')
    assert any("phi_r" in p for p in e.value.problems)
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "custom", "phi_r": 1.3, "D_b": -1, "K": 0, "models": ["nope"]}')
    assert len(e.value.problems) >= 4
    with pytest.raises(ValidationError):
        parse_config('{"kind": "custom", "colour": "red"}')
    with pytest.raises(ValidationError):
        parse_config('{"phi_r": 0.1}')
    with pytest.raises(ValidationError):
        parse_config('{"preset": "energy_trace", "kind": "custom"}')
    with pytest.raises(ValidationError):
        preset("profile_comparison_equal", D_r=2.0)


def test_parse_error_location():
    with pytest.raises(ParseError) as e:
        parse_config('{\n  "kind": "custom",\n  "L": 10,,\n}')
    assert e.value.line == 3 and e.value.column == 11
    with pytest.raises(ParseError):
        parse_config("[1, 2]")


def test_profile_run_is_deterministic(tmp_path):
    cfg = small_profiles()
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert "profile_kmc_t0.csv" in names and "profile_matched_low_t1.csv" in names and "profile_mean_field_t0.csv" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    other = run_experiment(cfg.replace(seed=18))
    assert other.tables["profile_kmc_t0"].rows != run_experiment(cfg).tables["profile_kmc_t0"].rows


def test_manifest_lists_seeds_and_reemit_is_identical(tmp_path):
    cfg = small_profiles()
    bundle = run_experiment(cfg, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert [s["index"] for s in man["seeds"]] == list(range(cfg.K))
    assert all(s["master"] == 17 for s in man["seeds"])
    assert man["config"]["L"] == 10 and man["resolved"]["h"] == 0.1
    assert man["resolved"]["error_bars"] == "2 x stderr"
    before = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    emit_results(bundle, tmp_path)
    assert before == {p.name: p.read_bytes() for p in tmp_path.iterdir()}


def test_empty_grid_writes_header_only(tmp_path):
    cfg = preset("selfdiff_sweep_equal", phi_grid=(), L=10)
    bundle = run_experiment(cfg, tmp_path)
    assert bundle.manifest["status"] == "ok"
    assert (tmp_path / "selfdiff.csv").read_text() == "phi,Ds_measured,stderr,Ds_composite,Ds_low,Ds_high,Ds_mf\n"


def test_selfdiff_sweep_small(tmp_path):
    cfg = preset("selfdiff_sweep_equal", L=10, K=2, phi_grid=(0.3,), window=(2.0, 4.0), window_samples=3)
    rows = run_experiment(cfg).tables["selfdiff"].rows
    assert len(rows) == 1
    phi, measured, se, comp, low, high, mf = rows[0]
    assert phi == 0.3 and mf == pytest.approx(0.7) and 0 < measured < 1.2


def test_coefficients_report():
    b = run_experiment(preset("coefficients_report", psi_radius=3))
    d, beta, alpha, _ = b.tables["coefficients"].rows[0]
    assert alpha == pytest.approx(math.pi / 2 - 1, abs=1e-8)
    assert len(b.tables["psi"].rows) == 49


def test_failure_marks_manifest(tmp_path, monkeypatch):
    import twosep.experiments as ex
    from twosep.pde import Instability

    def broken(*a, **k):
        raise Instability("forced")

    monkeypatch.setattr(ex, "pde_run", broken)
    with pytest.raises(RuntimeError):
        run_experiment(small_profiles(), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed" and "Instability: forced" in man["error"]
    # the stochastic half finished before the failure and was flushed
    assert (tmp_path / "profile_kmc_t0.csv").exists()


def test_bin_width_must_fit_the_grid():
    with pytest.raises(ValidationError):
        small_profiles(bin_width=0.08)


# -- command line -------------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["coefficients", "--radius", "2", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert (tmp_path / "c" / "psi.csv").exists()
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "custom", "phi_r": 1.3}')
    assert main(["kmc", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_INVALID
    bad.write_text("{oops")
    assert main(["pde", "--config", str(bad)]) == EXIT_INVALID
    assert "line 1" in capsys.readouterr().err
    assert main(["kmc"]) == EXIT_INVALID
    assert main(["pde", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["coefficients", "--radius", "2", "--out", str(blocker / "sub")]) == EXIT_RUNTIME


def test_cli_pde_command(tmp_path):
    doc = tmp_path / "fig7.json"
    doc.write_text(json.dumps({"preset": "profile_comparison_unequal", "L": 10, "times": [0.002], "bin_width": 0.2}))
    assert main(["pde", "--config", str(doc), "--out", str(tmp_path / "o")]) == EXIT_OK
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert "profile_matched_low_t0.csv" in names and not any(n.startswith("profile_kmc") for n in names)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "twosep", "coefficients", "--radius", "1", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "coefficients_report" in r.stdout
