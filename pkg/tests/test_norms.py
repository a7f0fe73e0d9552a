import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_pressure.grids import GridField, SpaceTimeField
from stokes_pressure.norms import (
    NormSpec,
    bochner_norm,
    estimate_ratio,
    mean_value,
    seminorm,
    sobolev_norm,
    time_norm,
)


def unit_square(fun, n=32, rank=0):
    return GridField.sample(fun, (0.0, 0.0), 1.0 / n, (n + 1, n + 1), rank=rank)


@pytest.mark.parametrize("spec", [(1.0, 2.0, 0), (2.0, 1.0, 0), (2.0, math.inf, 0), (2.0, 2.0, -1),
                                  (2.0, 2.0, 1.5)])
def test_norm_spec_validation(spec):
    with pytest.raises(ValueError):
        NormSpec(*spec)


def test_norm_spec_accepts_infinite_time_exponent():
    assert math.isinf(NormSpec(math.inf, 2.0, 1).s)


@pytest.mark.parametrize("q", [2.0, 3.0, 4.0])
def test_lq_norm_of_constant(q):
    n = 32
    f = unit_square(lambda x: 2.0 + 0 * x[0], n)
    area = ((n + 1) / n) ** 2
    assert sobolev_norm(f, q, 0) == pytest.approx(2.0 * area ** (1 / q), rel=1e-14)


def test_gradient_seminorm_of_affine_function():
    n = 16
    f = unit_square(lambda x: 3 * x[0] - 4 * x[1], n)
    # a fourth-order stencil drops two nodes per side along its own axis
    cells = (n - 3) * (n + 1) / n ** 2
    assert seminorm(f, 2.0, 1) == pytest.approx(5.0 * math.sqrt(cells), rel=1e-12)
    assert seminorm(f, 2.0, 2) == pytest.approx(0.0, abs=1e-10)


def test_seminorm_counts_mixed_derivatives_twice():
    f = unit_square(lambda x: x[0] * x[1], 16)
    m = seminorm(f, 2.0, 2)
    region_cells = 13 * 13 * (1 / 16) ** 2  # stencils shrink by two nodes per side
    assert m == pytest.approx(math.sqrt(2 * region_cells), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6), k=st.integers(0, 2),
       q=st.sampled_from([2.0, 3.0, 4.0]))
def test_sobolev_norm_is_absolutely_homogeneous(a, k, q):
    f = unit_square(lambda x: np.sin(2 * x[0]) * np.cos(x[1]), 12)
    assert sobolev_norm(f.with_data(a * f.data), q, k) == pytest.approx(
        abs(a) * sobolev_norm(f, q, k), rel=1e-12)


def test_triangle_inequality():
    f = unit_square(lambda x: np.sin(3 * x[0]), 16)
    g = unit_square(lambda x: x[1] ** 3, 16)
    s = f.with_data(f.data + g.data)
    for k in (0, 1, 2):
        assert sobolev_norm(s, 2.0, k) <= sobolev_norm(f, 2.0, k) + sobolev_norm(g, 2.0, k) + 1e-12


def test_vector_norm_sums_components():
    v = unit_square(lambda x: np.stack([np.ones_like(x[0]), 2 * np.ones_like(x[0])]), 8, rank=1)
    c = v.components()
    assert sobolev_norm(v, 2.0, 0) ** 2 == pytest.approx(
        sobolev_norm(c[0], 2.0, 0) ** 2 + sobolev_norm(c[1], 2.0, 0) ** 2, rel=1e-14)


def test_time_norm_inf_and_finite():
    assert time_norm([5.0, 1.0, 2.0], [0.0, 0.5, 0.5], math.inf) == 2.0
    assert time_norm([5.0, 1.0, 2.0], [0.0, 0.5, 0.5], 2.0) == pytest.approx(math.sqrt(2.5))


def test_bochner_norm_ignores_initial_slice():
    base = unit_square(lambda x: 1.0 + 0 * x[0], 8)
    slices = [base.with_data(100 * base.data), base, base]
    f = SpaceTimeField(np.array([0.0, 0.5, 1.0]), slices)
    one = sobolev_norm(base, 2.0, 0)
    assert bochner_norm(f, NormSpec(2.0, 2.0, 0)) == pytest.approx(one, rel=1e-14)
    assert bochner_norm(f, NormSpec(math.inf, 2.0, 0)) == pytest.approx(one, rel=1e-14)


@pytest.mark.parametrize("spec", [NormSpec(2, 2, 0), NormSpec(4, 2, 1), NormSpec(math.inf, 3, 0)])
def test_estimate_ratio_homogeneous_of_degree_zero(spec):
    p = unit_square(lambda x: np.sin(x[0]) * x[1] ** 2, 16)
    f = unit_square(lambda x: np.stack([np.cos(x[1]), x[0]]), 16, rank=1)
    times = np.array([0.0, 0.1, 0.2])
    P = SpaceTimeField(times, [p.with_data(0 * p.data), p, p.with_data(2 * p.data)])
    F = SpaceTimeField(times, [f, f, f.with_data(3 * f.data)])
    r = estimate_ratio(P, F, spec)
    P2, F2 = P.map(lambda s: s.with_data(2 * s.data)), F.map(lambda s: s.with_data(2 * s.data))
    assert abs(estimate_ratio(P2, F2, spec) - r) <= 1e-12 * r


def test_estimate_ratio_rejects_zero_forcing():
    p = unit_square(lambda x: x[0], 8)
    f = unit_square(lambda x: np.zeros((2,) + x.shape[1:]), 8, rank=1)
    times = np.array([0.0, 0.1])
    with pytest.raises(ValueError):
        estimate_ratio(SpaceTimeField(times, [p, p]), SpaceTimeField(times, [f, f]), NormSpec(2, 2, 0))


def test_mean_value_on_region():
    f = unit_square(lambda x: x[0], 4)
    mask = np.zeros(f.grid_shape, dtype=bool)
    mask[-1] = True
    assert mean_value(f, mask) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mean_value(f, np.zeros(f.grid_shape, dtype=bool))


def test_masked_norm_needs_room_for_stencil():
    f = unit_square(lambda x: x[0], 8)
    mask = np.zeros(f.grid_shape, dtype=bool)
    mask[4, 4] = True
    with pytest.raises(ValueError):
        sobolev_norm(f.with_mask(mask), 2.0, 1)
