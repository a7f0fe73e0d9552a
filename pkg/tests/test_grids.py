import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_pressure.grids import (
    GridField,
    SpaceTimeField,
    apply_multi_index,
    derivative,
    derivative_valid,
    fd_weights,
    lattice_interp,
    multi_indices,
    stencil_table,
    tensor_indices,
)


@pytest.mark.parametrize("order, accuracy", [(1, 2), (1, 4), (2, 2), (2, 4), (3, 2)])
def test_derivative_exact_on_polynomials(order, accuracy):
    degree = order + accuracy - 1
    x = np.linspace(-1.0, 2.0, 31)
    h = x[1] - x[0]
    coef = np.random.default_rng(order * 10 + accuracy).standard_normal(degree + 1)
    p = np.polynomial.Polynomial(coef)
    got = derivative(p(x), 0, order, h, accuracy)
    assert np.allclose(got, p.deriv(order)(x), atol=1e-8 * max(1, abs(coef).max()))


@pytest.mark.parametrize("accuracy", [2, 4])
def test_derivative_order_of_accuracy(accuracy):
    errs = []
    for n in (32, 64):
        x = np.linspace(0, 1, n + 1)
        errs.append(np.max(np.abs(derivative(np.sin(3 * x), 0, 1, 1 / n, accuracy) - 3 * np.cos(3 * x))))
    assert math.log2(errs[0] / errs[1]) > accuracy - 0.3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=3, max_size=6, unique=True))
def test_fd_weights_annihilate_constants(offsets):
    w = fd_weights(tuple(sorted(offsets)), 1)
    assert abs(w.sum()) < 1e-10
    assert np.dot(w, sorted(offsets)) == pytest.approx(1.0, abs=1e-10)


def test_fd_weights_rejects_small_stencil():
    with pytest.raises(ValueError):
        fd_weights((0, 1), 2)


@pytest.mark.parametrize("order, accuracy", [(1, 2), (2, 4)])
def test_stencil_table_reproduces_derivative(order, accuracy):
    n = 17
    a = np.random.default_rng(0).standard_normal(n)
    offsets, W = stencil_table(n, order, accuracy)
    idx = np.arange(n)[:, None] + offsets[None, :]
    ok = (idx >= 0) & (idx < n)
    table = np.sum(np.where(ok, W * a[np.clip(idx, 0, n - 1)], 0.0), axis=1)
    assert np.allclose(table, derivative(a, 0, order, 1.0, accuracy), atol=1e-12)


def test_derivative_valid_shrinks_mask():
    a = np.ones(10)
    valid = np.ones(10, dtype=bool)
    valid[:3] = False
    out, ok = derivative_valid(a, valid, 0, 1, 0.1)
    assert not ok[3] and ok[4] and not ok[-1]
    assert np.all(out[ok] == 0.0)


@pytest.mark.parametrize("ndim, order", [(2, 0), (2, 3), (3, 2), (3, 4)])
def test_multi_index_counts(ndim, order):
    assert len(multi_indices(ndim, order)) == math.comb(ndim + order - 1, order)
    assert len(tensor_indices(ndim, order)) == ndim ** order
    assert all(sum(a) == order for a in multi_indices(ndim, order))


def test_apply_multi_index_mixed_derivative():
    g = GridField.sample(lambda x: x[0] ** 2 * x[1], (0.0, 0.0), 0.1, (12, 12))
    assert np.allclose(apply_multi_index(g.data, (1, 1), g.spacing), 2 * g.coords()[0], atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_lattice_interp_exact_on_cubics(coef, point):
    cubic = lambda x, y: coef[0] + coef[1] * x ** 3 + coef[2] * x * y ** 2 + coef[3] * y ** 3  # noqa: E731
    g = GridField.sample(lambda X: cubic(X[0], X[1]), (0.0, 0.0), 0.125, (9, 9))
    p = np.array([point])
    assert lattice_interp(g.data, g.origin, g.spacing, p)[0] == pytest.approx(
        cubic(*point), abs=1e-11)


@pytest.mark.parametrize("kwargs", [
    dict(data=np.zeros((3, 3)), origin=(0.0,), spacing=1.0),
    dict(data=np.zeros((3, 3)), origin=(0.0, 0.0), spacing=0.0),
    dict(data=np.zeros((3, 3)), origin=(0.0, 0.0), spacing=1.0, mask=np.ones((2, 2))),
    dict(data=np.zeros((3, 3)), origin=(0.0, 0.0), spacing=1.0, rank=2),
])
def test_grid_field_validation(kwargs):
    with pytest.raises(ValueError):
        GridField(**kwargs)


def test_vector_field_components_and_coords():
    v = GridField(np.arange(2 * 4 * 5, dtype=float).reshape(2, 4, 5), (1.0, -1.0), 0.5, rank=1)
    assert v.grid_shape == (4, 5) and v.ndim == 2
    assert [c.rank for c in v.components()] == [0, 0]
    assert np.allclose(v.upper(), [2.5, 1.0])
    assert v.coords().shape == (2, 4, 5)


def test_space_time_weights_skip_initial_slice():
    f = SpaceTimeField(np.array([0.0, 0.1, 0.2]), [None] * 3)
    assert np.allclose(f.weights(), [0.0, 0.1, 0.1])
    with pytest.raises(ValueError):
        SpaceTimeField(np.array([0.0, 0.1, 0.3]), [None] * 3)
