"""Acceptance criteria 1-10, run at their stated tolerances.

Each suite runs once per module through the shipped example configurations;
the tests then read the report rows.  The summary hook in ``conftest.py``
prints one pass/fail line per criterion.
"""

import math
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stokes_pressure.bogovskii import apply_scaled, divergence_residual
from stokes_pressure.geometry import StarDomain, ratio
from stokes_pressure.harness import load, run_experiment
from stokes_pressure.harness import forcing as fam
from stokes_pressure.harness.experiments import _shifted, build_domain, sample_on
from stokes_pressure.stokes import write_forcing_file

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# Divergence residuals of the five seed-7 bump pairs on the ball of radius 2.5
# at N = 32, computed with a refined quadrature (64 radial nodes, 256
# directions).  The production quadrature must reproduce them to 1%.
FROZEN_DIVERGENCE_BASELINE = (
    0.036013736141534226,
    0.020249764559282433,
    0.019858575106923005,
    0.02547968660790872,
    0.03352687498846855,
)


def rows_of(rows, quantity):
    picked = [r for r in rows if r.quantity == quantity]
    assert picked, f"no rows for {quantity}"
    return picked


def flagged_pass(rows):
    return all(r.passed for r in rows)


@pytest.fixture(scope="module")
def suite():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_experiment(load(CONFIGS / name))
        return cache[name]
    return get


# -- 1 ------------------------------------------------------------------------------

@pytest.mark.criterion(1)
@pytest.mark.parametrize("dim", [2, 3])
def test_ac1_ball_ratio_is_one(dim):
    assert ratio(StarDomain.ball(dim, 0.37)) == 1.0


@pytest.mark.criterion(1)
def test_ac1_cube_ratio_is_sqrt3():
    assert abs(ratio(StarDomain.cube(3, 1.0)) - math.sqrt(3.0)) <= 1e-12


@pytest.mark.criterion(1)
@pytest.mark.parametrize("scale", [1e-3, 0.5, 7.0, 1e4])
def test_ac1_ratio_invariance_is_exact(scale):
    for base in (StarDomain.ball(3, 1.0), StarDomain.cube(3, 2.0), StarDomain.box((1.0, 3.0))):
        shift = np.linspace(-5.0, 5.0, base.dim)
        assert base.transformed(scale, shift).ratio() == base.ratio()


@pytest.mark.criterion(1)
@pytest.mark.parametrize("name, expected", [("ratio_ball.ini", 1.0),
                                            ("ratio_cube3.ini", math.sqrt(3.0))])
def test_ac1_ratio_subcommand(suite, name, expected):
    (row,) = suite(name)
    assert row.passed and row.tolerance == 1e-12
    assert abs(row.value - expected) <= 1e-12


# -- 2 ------------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_ac2_divergence_baseline_and_order(suite):
    rows = suite("bogovskii.ini")
    base = [r for r in rows_of(rows, "divergence_residual") if r.params["resolution"] == 32]
    assert len(base) == 5
    assert all(r.value <= 5e-2 for r in base)
    orders = rows_of(rows, "divergence_order")
    assert len(orders) == 10
    assert all(r.value >= 1.0 and r.passed for r in orders)
    for m in range(5):
        series = [r.value for r in rows_of(rows, "divergence_residual") if r.params["member"] == m]
        assert all(b < a for a, b in zip(series, series[1:]))


@pytest.mark.criterion(2)
def test_ac2_baseline_matches_frozen_oracle(suite):
    rows = suite("bogovskii.ini")
    base = sorted((r for r in rows_of(rows, "divergence_residual")
                   if r.params["resolution"] == 32), key=lambda r: r.params["member"])
    for r, frozen in zip(base, FROZEN_DIVERGENCE_BASELINE):
        assert abs(r.value - frozen) <= 1e-2 * frozen


@pytest.mark.criterion(2)
def test_ac2_family_members_have_zero_mean():
    cfg = load(CONFIGS / "bogovskii.ini")
    dom = build_domain(cfg.domain)
    family = fam.two_bump_family(dom.dim, 5, cfg.seed, dom.inner_radius())
    for fx in family:
        # equal translated bumps: the lattice sum vanishes up to quadrature error
        sums = [sample_on(dom, _shifted(fx, dom.star_center), n).data for n in (64, 128)]
        rel = [abs(d.sum()) / np.abs(d).sum() for d in sums]
        assert rel[0] <= 1e-4 and rel[1] <= rel[0]


# -- 3 ------------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_ac3_commutator_baseline_and_decrease(suite):
    rows = suite("bogovskii.ini")
    base = [r for r in rows_of(rows, "commutator_residual") if r.params["resolution"] == 32]
    assert len(base) == 5 and all(r.value <= 5e-2 for r in base)
    for m in range(5):
        series = [r.value for r in rows_of(rows, "commutator_residual") if r.params["member"] == m]
        assert all(b < a for a, b in zip(series, series[1:]))
    assert flagged_pass(rows_of(rows, "commutator_order"))


@pytest.mark.criterion(3)
def test_ac3_swap_symmetry(suite):
    swaps = rows_of(suite("bogovskii.ini"), "commutator_swap")
    assert len(swaps) == 5 and all(r.value <= 1e-12 for r in swaps)


@pytest.mark.criterion(3)
def test_ac3_norm_bound_probe_stable(suite):
    (row,) = rows_of(suite("bogovskii.ini"), "norm_bound_stability")
    assert row.value <= 0.10


# -- 4 ------------------------------------------------------------------------------

@pytest.mark.criterion(4)
@pytest.mark.parametrize("quantity", ["idempotency_max", "orthogonality_max", "divergence_max",
                                      "gradient_max"])
def test_ac4_projector(suite, quantity):
    rows = rows_of(suite("helmholtz.ini"), quantity)
    assert all(r.params["members"] == 10 for r in rows)
    assert all(r.value <= 1e-12 for r in rows)


@pytest.mark.criterion(4)
def test_ac4_amplification_stable(suite):
    rows = rows_of(suite("helmholtz.ini"), "amplification_stability")
    assert len(rows) == 2 and all(r.value <= 0.20 for r in rows)


# -- 5 ------------------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_ac5_spatial_and_temporal_orders(suite):
    rows = suite("stokes.ini")
    spatial = rows_of(rows, "spatial_order")
    temporal = rows_of(rows, "temporal_order")
    assert len(spatial) == 2 and all(r.value >= 1.8 for r in spatial)
    assert len(temporal) == 2 and all(r.value >= 0.9 for r in temporal)


@pytest.mark.criterion(5)
def test_ac5_divergence_and_initial_velocity(suite):
    rows = suite("stokes.ini")
    div = [r for r in rows if r.quantity.endswith("_divergence_max")]
    u0 = [r for r in rows if r.quantity.endswith("_u0_max")]
    assert div and all(r.value <= 1e-10 for r in div)
    assert u0 and all(r.value == 0.0 for r in u0)


@pytest.mark.criterion(5)
def test_ac5_maximal_regularity_stable(suite):
    (row,) = rows_of(suite("stokes.ini"), "regularity_stability")
    assert row.value <= 0.20


# -- 6 ------------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_ac6_pressure_harmonic_under_solenoidal_forcing(suite):
    rows = suite("stokes.ini")
    res = rows_of(rows, "harmonicity_residual")
    assert all(b.value < a.value for a, b in zip(res, res[1:]))
    orders = rows_of(rows, "harmonicity_order")
    assert len(orders) == 2 and all(r.value >= 1.5 for r in orders)


# -- 7 ------------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_ac7_flat_chart_identities(suite):
    rows = [r for r in suite("transform.ini") if r.quantity.startswith("flat_")]
    assert len(rows) >= 18
    assert all(r.value <= 1e-8 for r in rows)


@pytest.mark.criterion(7)
def test_ac7_curved_chart_orders(suite):
    rows = [r for r in suite("transform.ini")
            if r.quantity.startswith("curved_") and r.quantity.endswith("_order")]
    assert len(rows) >= 10
    assert all(r.value >= 1.8 for r in rows)


@pytest.mark.criterion(7)
def test_ac7_localized_divergence(suite):
    rows = suite("transform.ini")
    div = rows_of(rows, "localized_div_residual")
    charts = {r.params["chart"] for r in div}
    assert charts == {"0", "0.1*y1**2"}
    assert all(r.passed is not False for r in div)
    # flat chart: z2 still needs the Bogovskii quadrature, so the baseline is 5e-2
    base = [r for r in div if r.params["resolution"] == 32]
    assert len(base) == 2 and all(r.value <= 5e-2 for r in base)
    orders = rows_of(rows, "localized_div_order")
    assert len(orders) == 2 and all(r.value >= 1.8 for r in orders)
    assert all(r.value <= 1e-8 for r in rows_of(rows, "localized_zero_velocity"))


@pytest.mark.criterion(7)
def test_ac7_negative_controls_exceed_ten_times_tolerance(suite):
    controls = [r for r in suite("transform.ini") if r.kind == "control"]
    assert len(controls) == 4
    assert all(r.tolerance == 10 * 1e-8 and r.value > r.tolerance for r in controls)


# -- 8 ------------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_ac8_flat_quadratic_recovery_exact(suite):
    rows = rows_of(suite("transform.ini"), "recovery_flat_quadratic")
    assert all(r.value <= 1e-10 for r in rows)


@pytest.mark.criterion(8)
@pytest.mark.parametrize("pair", ["tilted_smooth", "curved_cubic"])
def test_ac8_curved_recovery_second_order(suite, pair):
    rows = suite("transform.ini")
    for prefix in ("recovery_", "iterated_recovery_"):
        orders = rows_of(rows, f"{prefix}{pair}_order")
        assert len(orders) == 2 and all(r.value >= 1.8 for r in orders)


# -- 9 ------------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_ac9_ratio_finite_everywhere(suite):
    rows = rows_of(suite("estimate_sweep.ini"), "ratio")
    assert len(rows) == 5 * 4 * 3
    assert all(math.isfinite(r.value) and r.value > 0 for r in rows)
    norms = {r.params["norm"] for r in rows}
    assert norms == {"s=2,q=2,k=0", "s=4,q=2,k=0", "s=2,q=2,k=1", "s=4,q=2,k=1"}


@pytest.mark.criterion(9)
def test_ac9_spread_and_homogeneity(suite):
    rows = suite("estimate_sweep.ini")
    spread = rows_of(rows, "ratio_spread")
    assert len(spread) == 20 and all(r.value <= 1.5 for r in spread)
    assert all(r.params["resolution"] == [16, 32, 64] for r in spread)
    hom = rows_of(rows, "homogeneity")
    assert len(hom) == 20 and all(r.value <= 1e-10 for r in hom)


@pytest.mark.criterion(9)
def test_ac9_ratio_stable_under_refinement(suite):
    rows = rows_of(suite("estimate_sweep.ini"), "ratio_stability")
    assert all(r.value <= 0.25 for r in rows)


# -- 10 -----------------------------------------------------------------------------

def cli(*args):
    exe = shutil.which("stokes-pressure")
    cmd = [exe] if exe else [sys.executable, "-m", "stokes_pressure.harness"]
    return subprocess.run(cmd + [str(a) for a in args], capture_output=True, text=True,
                          timeout=600)


@pytest.mark.criterion(10)
@pytest.mark.parametrize("sub, name, extra", [
    ("ratio", "ratio_cube3.ini", []),
    ("estimate-sweep", "estimate_sweep.ini", ["--resolution-override", "16,32"]),
    ("transform-verify", "transform_flat.ini", []),
])
def test_ac10_same_config_and_seed_give_identical_bytes(tmp_path, sub, name, extra):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.csv"
        proc = cli(sub, "--config", CONFIGS / name, "--seed", 12345, "--out", out, *extra)
        assert proc.returncode in (0, 1), proc.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"experiment,param_json,quantity,value,tolerance,pass\n")


@pytest.mark.criterion(10)
def test_ac10_exit_codes(tmp_path):
    out = tmp_path / "o.csv"
    assert cli("ratio", "--config", CONFIGS / "ratio_ball.ini", "--out", out).returncode == 0
    flat = CONFIGS / "transform_flat.ini"
    assert cli("transform-verify", "--config", flat, "--out", out,
               "--resolution-override", "8,16", "--corrupt").returncode == 1
    assert cli("stokes-run", "--resolution-override", "", "--out", out).returncode == 2
    assert cli("helmholtz-verify", "--corrupt", "--out", out).returncode == 2
    bad = tmp_path / "nan.bin"
    write_forcing_file(bad, np.full((2, 2, 8, 8), np.nan))
    cfg = tmp_path / "nan.ini"
    cfg.write_text(f"[forcing]\nfamily = file\npath = {bad}\n[grid]\ndt = 0.05\n"
                   "[suite]\nchecks = file\n", encoding="utf-8")
    assert cli("stokes-run", "--config", cfg, "--out", out).returncode == 3


@pytest.mark.criterion(10)
def test_ac10_zero_forcing_rejected(tmp_path):
    cfg = tmp_path / "zero.ini"
    cfg.write_text("[forcing]\nfamily = zero\n", encoding="utf-8")
    proc = cli("estimate-sweep", "--config", cfg, "--out", tmp_path / "o.csv")
    assert proc.returncode == 2 and "vanishes" in proc.stderr


@pytest.mark.criterion(2)
def test_ac2_scaled_operator_translation_covariant():
    dom = StarDomain.ball(2, 2.5)
    moved = StarDomain.ball(2, 2.5, (1.0, -0.5))
    (fx,) = fam.two_bump_family(2, 1, 7, 2.5)
    a = sample_on(dom, fx, 32)
    b = sample_on(moved, _shifted(fx, moved.star_center), 32)
    ra = divergence_residual(apply_scaled(dom, a), a, None, dom)
    rb = divergence_residual(apply_scaled(moved, b), b, None, moved)
    assert ra == pytest.approx(rb, rel=1e-6)
