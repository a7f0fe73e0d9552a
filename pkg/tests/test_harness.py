import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_pressure.harness import (
    HEADER,
    ConfigError,
    ExperimentConfig,
    ForcingSpec,
    ReportRow,
    loads,
    main,
    read_csv,
    render,
)
from stokes_pressure.harness import forcing as fam
from stokes_pressure.harness.config import parse_norm_specs, parse_resolutions, parse_seed
from stokes_pressure.harness.report import observed_order, params
from stokes_pressure.norms import NormSpec
from stokes_pressure.stokes import write_forcing_file


# -- configuration ---------------------------------------------------------------

def test_loads_full_config():
    cfg = loads("""
[experiment]
subcommand = estimate-sweep
seed = 18446744073709551615
out = x.csv
[grid]
resolutions = 8, 16  ; inline comment
dt = 0.05
t_final = 0.1
[forcing]
family = bandlimited
members = 2
[norms]
specs = 2:2:0, inf:3:1
[tolerances]
spread = 2.0
[suite]
checks = sweep
""")
    assert cfg.seed == 2 ** 64 - 1 and cfg.resolutions == (8, 16)
    assert cfg.norms == (NormSpec(2, 2, 0), NormSpec(math.inf, 3, 1))
    assert cfg.tolerances == {"spread": 2.0}
    assert cfg.option("suite", "checks") == "sweep"


@pytest.mark.parametrize("text", [
    "[grid]\nresolutions = 8",
    "[experiment]\nsubcommand = fly",
    "[experiment]\nsubcommand = ratio\nseed = -1",
    "[experiment]\nsubcommand = ratio\nseed = 1.5",
    "[experiment]\nsubcommand = ratio\n[grid]\nresolutions = ",
    "[experiment]\nsubcommand = ratio\n[grid]\nresolutions = 16, 8",
    "[experiment]\nsubcommand = ratio\n[grid]\nresolutions = 2, 4",
    "[experiment]\nsubcommand = ratio\n[grid]\ndt = -0.1",
    "[experiment]\nsubcommand = ratio\n[tolerances]\nratio = 0",
    "[experiment]\nsubcommand = ratio\n[tolerances]\nratio = abc",
    "[experiment]\nsubcommand = ratio\n[forcing]\nfamily = noise",
    "[experiment]\nsubcommand = ratio\n[forcing]\nfamily = named",
    "[experiment]\nsubcommand = ratio\n[norms]\nspecs = 2:2",
    "[experiment\nbroken",
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_subcommand_mismatch_is_rejected():
    with pytest.raises(ConfigError):
        loads("[experiment]\nsubcommand = ratio", "stokes-run")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(4, 4096), min_size=1, max_size=6, unique=True))
def test_parse_resolutions_accepts_sorted_lists(values):
    values = sorted(values)
    assert parse_resolutions(", ".join(map(str, values))) == tuple(values)
    if len(values) > 1:
        with pytest.raises(ConfigError):
            parse_resolutions(", ".join(map(str, reversed(values))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 64 - 1))
def test_parse_seed_round_trips_u64(seed):
    assert parse_seed(str(seed)) == seed


def test_parse_seed_rejects_overflow():
    with pytest.raises(ConfigError):
        parse_seed(str(2 ** 64))


def test_parse_norm_specs_rejects_bad_exponent():
    with pytest.raises(ConfigError):
        parse_norm_specs("1:2:0")


def test_overrides_validate():
    cfg = ExperimentConfig("ratio")
    assert cfg.with_overrides(seed="5", resolutions=[8, 16]).seed == 5
    with pytest.raises(ConfigError):
        cfg.with_overrides(resolutions=[])


# -- report ----------------------------------------------------------------------

@pytest.mark.parametrize("kind, value, tol, ref, expected", [
    ("max", 0.1, 0.1, None, True),
    ("max", 0.2, 0.1, None, False),
    ("max", math.nan, 0.1, None, False),
    ("min", 2.0, 1.8, None, True),
    ("min", 1.7, 1.8, None, False),
    ("exact", 0.0, 0.0, None, True),
    ("exact", 1e-300, 0.0, None, False),
    ("match", 1.0 + 1e-13, 1e-12, 1.0, True),
    ("match", 1.0 + 1e-11, 1e-12, 1.0, False),
    ("control", 1e-6, 1e-7, None, True),
    ("control", 1e-8, 1e-7, None, False),
    ("info", 3.0, None, None, None),
])
def test_row_pass_rules(kind, value, tol, ref, expected):
    row = ReportRow("x", params(8, 0.1, 0), "q", value, tol, kind, ref)
    assert row.passed is expected


def test_rows_need_tolerance_and_reference():
    with pytest.raises(ValueError):
        ReportRow("x", {}, "q", 1.0)
    with pytest.raises(ValueError):
        ReportRow("x", {}, "q", 1.0, 1e-3, "match")
    with pytest.raises(ValueError):
        ReportRow("x", {}, "q", 1.0, 1e-3, "between")


def test_render_format():
    rows = [ReportRow("ratio", params(None, None, 3, shape="ball"), "ratio", 1.0 / 3, 1e-12,
                      "match", 1.0 / 3),
            ReportRow("ratio", params(16, 0.5, 3), "info_value", 2.0, kind="info")]
    text = render(rows)
    lines = text.split("\n")
    assert lines[0] == ",".join(HEADER)
    assert "\r" not in text and text.endswith("\n")
    assert '"{""dt"":null,""resolution"":null,""seed"":3,""shape"":""ball""}"' in lines[1]
    assert "0.33333333333333331" in lines[1] and lines[1].endswith(",true")
    assert lines[2].endswith(",2,,")


def test_csv_round_trip(tmp_path):
    rows = [ReportRow("e", params(8, 0.1, 1), "q", 0.5, 1.0)]
    path = tmp_path / "r.csv"
    path.write_text(render(rows), encoding="utf-8")
    (back,) = read_csv(path)
    assert back["pass"] == "true" and float(back["value"]) == 0.5


def test_observed_order():
    assert observed_order(4.0, 1.0) == pytest.approx(2.0)
    assert observed_order(9.0, 1.0, 3.0) == pytest.approx(2.0)
    assert math.isnan(observed_order(0.0, 1.0))


# -- forcing families ----------------------------------------------------------------

def test_bandlimited_family_is_seeded():
    a = fam.bandlimited_family(2, 3, 2, seed=4)
    b = fam.bandlimited_family(2, 3, 2, seed=4)
    c = fam.bandlimited_family(2, 3, 2, seed=5)
    assert all(np.array_equal(x.coefficients, y.coefficients) for x, y in zip(a, b))
    assert not np.array_equal(a[0].coefficients, c[0].coefficients)
    assert (0, 0) not in a[0].modes


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32), dim=st.sampled_from([2, 3]))
def test_two_bump_members_have_zero_mean_and_stay_inside(seed, dim):
    R = 2.0
    for pair in fam.two_bump_family(dim, 2, seed, R):
        for bump in (pair.first, pair.second):
            assert np.linalg.norm(bump.center) + bump.radius < R
        assert pair.first.integral() == pair.second.integral()


def test_parse_expression_and_named_library():
    exprs = fam.parse_expression(fam.named_expression("vortex"), 2)
    x, y = fam.SPACE[:2]
    import sympy as sp
    assert sp.simplify(sp.diff(exprs[0], x) + sp.diff(exprs[1], y)) == 0
    with pytest.raises(ConfigError):
        fam.parse_expression("x*w; y", 2)
    with pytest.raises(ConfigError):
        fam.parse_expression("x", 2)
    with pytest.raises(ConfigError):
        fam.named_expression("tornado")


def test_lambdify_vector_broadcasts_constants():
    f = fam.expression_forcing("1; t*x", 2)
    X = np.zeros((2, 3, 4))
    out = f(X, 2.0)
    assert out[0].shape == (3, 4) and np.all(out[0] == 1.0)


def test_zero_family_detection():
    assert fam.is_zero_family([np.zeros(3), np.zeros((2, 2))])
    assert not fam.is_zero_family([np.zeros(3), np.array([0.0, 1e-300])])


def test_forcing_spec_validation():
    with pytest.raises(ConfigError):
        ForcingSpec(members=0)
    with pytest.raises(ConfigError):
        ForcingSpec(family="file")


# -- command line ----------------------------------------------------------------------

def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_ratio_subcommand_writes_passing_csv(tmp_path):
    out = tmp_path / "r.csv"
    cfg = write(tmp_path, "r.ini", "[domain]\nshape = cube\ndim = 3\nsize = 2\nscale = 4\n"
                                   "shift = 1, 2, 3\n")
    assert main(["ratio", "--config", cfg, "--out", str(out)]) == 0
    (row,) = read_csv(out)
    assert row["pass"] == "true"
    assert abs(float(row["value"]) - math.sqrt(3)) <= 1e-12


def test_ratio_without_reference_emits_info_row(tmp_path):
    out = tmp_path / "r.csv"
    cfg = write(tmp_path, "r.ini", "[domain]\nshape = box\ndim = 2\nsize = 2, 1\n")
    assert main(["ratio", "--config", cfg, "--out", str(out)]) == 0
    (row,) = read_csv(out)
    assert row["pass"] == "" and row["tolerance"] == ""


def test_wrong_expected_ratio_fails_with_exit_one(tmp_path):
    cfg = write(tmp_path, "r.ini", "[domain]\nshape = ball\ndim = 2\nexpected = 1.1\n")
    assert main(["ratio", "--config", cfg, "--out", str(tmp_path / "r.csv")]) == 1


def test_corrupt_mode_fails_transform_identities(tmp_path):
    out = tmp_path / "t.csv"
    cfg = write(tmp_path, "t.ini", "[chart]\nexpression = 0.1*y1**2\n[grid]\nresolutions = 8, 16\n"
                                   "[suite]\nchecks = identities\n")
    assert main(["transform-verify", "--config", cfg, "--out", str(out)]) == 0
    assert main(["transform-verify", "--config", cfg, "--out", str(out), "--corrupt"]) == 1
    flagged = [r for r in read_csv(out) if r["pass"]]
    assert flagged and all(r["pass"] == "false" for r in flagged)


@pytest.mark.parametrize("argv, text", [
    (["stokes-run", "--resolution-override", ""], None),
    (["stokes-run", "--resolution-override", "32,16"], None),
    (["estimate-sweep", "--resolution-override", "8,16"], "[forcing]\nfamily = zero\n"),
    (["helmholtz-verify", "--corrupt"], None),
    (["ratio"], "[domain]\nshape = hexagon\n"),
    (["transform-verify"], "[tolerances]\nunknown_key = 1\n"),
    (["transform-verify"], "[suite]\nchecks = nothing\n"),
    (["ratio", "--seed", "-3"], None),
    (["no-such-subcommand"], None),
    ([], None),
])
def test_invalid_input_exits_two(tmp_path, argv, text):
    argv = list(argv)
    if text is not None:
        argv += ["--config", write(tmp_path, "c.ini", text)]
    if argv:
        argv += ["--out", str(tmp_path / "o.csv")]
    assert main(argv) == 2


def test_missing_config_file_exits_two(tmp_path):
    assert main(["ratio", "--config", str(tmp_path / "absent.ini")]) == 2


def test_thread_variable_is_validated(tmp_path, monkeypatch):
    monkeypatch.setenv("STOKES_PRESSURE_THREADS", "zero")
    assert main(["ratio", "--out", str(tmp_path / "o.csv")]) == 2
    monkeypatch.setenv("STOKES_PRESSURE_THREADS", "1")
    assert main(["ratio", "--out", str(tmp_path / "o.csv")]) == 0


def test_solver_failure_exits_three(tmp_path):
    data = np.full((2, 2, 8, 8), np.nan)
    path = tmp_path / "nan.bin"
    write_forcing_file(path, data)
    cfg = write(tmp_path, "s.ini", f"[forcing]\nfamily = file\npath = {path}\n[grid]\ndt = 0.05\n"
                                   "[suite]\nchecks = file\n")
    assert main(["stokes-run", "--config", cfg, "--out", str(tmp_path / "s.csv")]) == 3


def test_forcing_file_run_passes(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "f.bin"
    write_forcing_file(path, rng.standard_normal((3, 2, 12, 12)))
    cfg = write(tmp_path, "s.ini", f"[forcing]\nfamily = file\npath = {path}\n[grid]\ndt = 0.05\n"
                                   "[suite]\nchecks = file\n")
    out = tmp_path / "s.csv"
    assert main(["stokes-run", "--config", cfg, "--out", str(out)]) == 0
    quantities = {r["quantity"] for r in read_csv(out)}
    assert {"file_u0_max", "file_divergence_max", "file_harmonicity_residual"} <= quantities


def test_sweep_output_is_byte_identical_across_runs(tmp_path):
    cfg = write(tmp_path, "s.ini", "[grid]\nresolutions = 8, 16\ndt = 0.05\nt_final = 0.1\n"
                                   "[forcing]\nmembers = 2\n[norms]\nspecs = 2:2:0, 4:2:1\n"
                                   "[tolerances]\nstability = 10\nspread = 10\n")
    outs = [tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"]
    for out in outs[:2]:
        assert main(["estimate-sweep", "--config", cfg, "--seed", "42", "--out", str(out)]) == 0
    main(["estimate-sweep", "--config", cfg, "--seed", "43", "--out", str(outs[2])])
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert outs[0].read_bytes() != outs[2].read_bytes()


def test_console_entry_point_runs_as_module(tmp_path):
    out = tmp_path / "r.csv"
    proc = subprocess.run([sys.executable, "-m", "stokes_pressure.harness", "ratio", "--out",
                           str(out)], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert out.read_text(encoding="utf-8").startswith(",".join(HEADER))
