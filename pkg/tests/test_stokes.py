import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_pressure.grids import GridField
from stokes_pressure.harness.experiments import manufactured
from stokes_pressure.norms import NormSpec
from stokes_pressure.stokes import (
    MACGrid,
    SolverError,
    StaggeredField,
    StokesProblem,
    StokesState,
    cells_to_faces,
    disk_fluid,
    divergence_history,
    file_forcing,
    function_forcing,
    harmonicity_residual,
    maximal_regularity_probe,
    obstacle_fluid,
    operator_for,
    read_forcing_file,
    solve_transient,
    step,
    write_forcing_file,
)


def random_forcing(grid, seed):
    rng = np.random.default_rng(seed)
    return StaggeredField(tuple(rng.standard_normal(grid.face_shape(d)) for d in range(grid.ndim)),
                          grid)


@pytest.mark.parametrize("kwargs", [
    dict(shape=(4,), spacing=0.25, origin=np.zeros(1), fluid=np.ones(4, bool)),
    dict(shape=(1, 4), spacing=0.25, origin=np.zeros(2), fluid=np.ones((1, 4), bool)),
    dict(shape=(4, 4), spacing=0.25, origin=np.zeros(2), fluid=np.zeros((4, 4), bool)),
    dict(shape=(4, 4), spacing=0.25, origin=np.zeros(2), fluid=np.ones((3, 4), bool)),
])
def test_mac_grid_validation(kwargs):
    with pytest.raises(ValueError):
        MACGrid(**kwargs)


def test_problem_needs_whole_number_of_steps():
    g = MACGrid.box(8)
    with pytest.raises(ValueError):
        StokesProblem(g, 0.1, 0.03, lambda t: StaggeredField.zeros(g))


@pytest.mark.parametrize("grid", [
    MACGrid.box(8),
    MACGrid.box(12, fluid=disk_fluid(12, 0.45)),
    obstacle_fluid(12, 2.0, 0.4),
    MACGrid.box(6, dim=3),
], ids=["box", "disk", "obstacle", "box3d"])
def test_laplacian_symmetric_negative_definite(grid):
    op = operator_for(grid)
    A = op.A.toarray()
    assert np.allclose(A, A.T)
    assert np.max(np.linalg.eigvalsh(A)) < 0


@pytest.mark.parametrize("grid", [
    MACGrid.box(12),
    MACGrid.box(16, fluid=disk_fluid(16, 0.45)),
    MACGrid.box(6, dim=3),
], ids=["box", "disk", "box3d"])
def test_step_is_discretely_divergence_free(grid):
    op = operator_for(grid)
    state = step(StokesState.initial(grid), random_forcing(grid, 0), 0.01, op)
    div = np.linalg.norm(op.divergence(state.u)) * grid.spacing
    assert div <= 1e-10 * np.linalg.norm(op.to_vector(state.u))
    assert abs(state.p.data[grid.fluid].mean()) <= 1e-12 * np.abs(state.p.data).max()


def test_zero_forcing_gives_zero_solution():
    g = MACGrid.box(8)
    u, p = solve_transient(StokesProblem(g, 0.1, 0.05, lambda t: StaggeredField.zeros(g)))
    assert all(s.norm() == 0.0 for s in u.slices)
    assert all(np.all(s.data == 0.0) for s in p.slices)


def test_gradient_forcing_is_absorbed_by_pressure():
    g = MACGrid.box(16)
    op = operator_for(g)
    q = g.cell_field(np.cos(np.pi * g.cell_centers()[0]) * np.sin(2 * g.cell_centers()[1]))
    f = op.gradient(q)
    state = step(StokesState.initial(g), f, 0.05, op)
    assert state.u.norm() <= 1e-10 * f.norm()
    ref = q.data - q.data.mean()
    assert np.allclose(state.p.data, ref, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3), seed=st.integers(0, 1000))
def test_solution_map_is_linear(a, seed):
    g = MACGrid.box(8)
    op = operator_for(g)
    f = random_forcing(g, seed)
    s1 = step(StokesState.initial(g), f, 0.02, op)
    s2 = step(StokesState.initial(g), f.scaled(a), 0.02, op)
    assert (s2.u - s1.u.scaled(a)).norm() <= 1e-10 * abs(a) * s1.u.norm()


def test_initial_velocity_is_exactly_zero():
    g = MACGrid.box(8)
    _, _, f = manufactured_forcing()
    u, _ = solve_transient(StokesProblem(g, 0.1, 0.05, function_forcing(g, f)))
    assert all(np.all(c == 0.0) for c in u.slices[0].components)
    assert np.all(divergence_history(u) <= 1e-10)


def manufactured_forcing():
    import sympy as sp
    return manufactured(sp.Symbol("t", real=True))


def test_manufactured_solution_converges_in_space():
    uex, _, f = manufactured_forcing()
    errs = []
    for n in (16, 32):
        g = MACGrid.box(n)
        u, _ = solve_transient(StokesProblem(g, 0.2, 0.05, function_forcing(g, f)))
        ue = StaggeredField.sample(g, uex, 0.2)
        errs.append((u.slices[-1] - ue).norm() / ue.norm())
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_three_dimensional_schur_solver_matches_direct_solve():
    g = MACGrid.box(6, dim=3)
    op = operator_for(g)
    assert op.method() == "schur"
    f = op.to_vector(random_forcing(g, 1))
    u, p = op.solve(np.zeros(op.nu), f, 0.1)
    M = op.saddle_matrix(0.1)
    sol = spla.spsolve(M, np.concatenate([f, np.zeros(op.np - 1)]))
    ref_p = np.concatenate([[0.0], sol[op.nu:]])
    assert np.allclose(u, sol[:op.nu], atol=1e-9)
    assert np.allclose(p, ref_p - ref_p.mean(), atol=1e-8)


def test_solver_error_on_nonfinite_forcing():
    g = MACGrid.box(8)
    op = operator_for(g)
    f = np.full(op.nu, np.nan)
    with pytest.raises(SolverError):
        op.solve(np.zeros(op.nu), f, 0.1)


@pytest.mark.parametrize("fun, harmonic", [
    (lambda x, y: x ** 2 - y ** 2 + 3 * x * y, True),
    (lambda x, y: np.exp(x) * np.cos(y), None),
    (lambda x, y: x ** 2 + y ** 2, False),
])
def test_harmonicity_residual(fun, harmonic):
    g = MACGrid.box(32)
    X = g.cell_centers()
    r = harmonicity_residual(g.cell_field(fun(X[0], X[1])))
    if harmonic is True:
        assert r <= 1e-11
    elif harmonic is False:
        assert r > 0.1
    else:
        assert r <= 1e-3


def test_harmonicity_residual_rejects_small_margin():
    g = MACGrid.box(8)
    with pytest.raises(ValueError):
        harmonicity_residual(g.cell_field(np.zeros(g.shape)), margin=1)


def test_forcing_file_round_trip(tmp_path):
    data = np.random.default_rng(0).standard_normal((3, 2, 8, 8))
    path = tmp_path / "f.bin"
    write_forcing_file(path, data)
    raw = path.read_bytes()
    assert raw[:8] == (2).to_bytes(8, "little")
    assert np.array_equal(read_forcing_file(path), data)
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_forcing_file(path)


def test_file_forcing_indexes_slices_by_time():
    g = MACGrid.box(8)
    data = np.stack([np.full((2, 8, 8), k + 1.0) for k in range(3)])
    forcing = file_forcing(g, data, 0.1)
    assert np.all(forcing(0.2).components[0] == 2.0)
    with pytest.raises(ValueError):
        forcing(0.5)
    with pytest.raises(ValueError):
        file_forcing(MACGrid.box(4), data, 0.1)


def test_cells_to_faces_preserves_constants():
    g = MACGrid.box(6)
    faces = cells_to_faces(g, np.stack([np.full(g.shape, 2.0), np.full(g.shape, -1.0)]))
    assert np.all(faces.components[0] == 2.0) and np.all(faces.components[1] == -1.0)


def test_maximal_regularity_probe_is_stable():
    _, _, f = manufactured_forcing()
    vals = []
    for n in (16, 32):
        g = MACGrid.box(n)
        vals.append(maximal_regularity_probe(StokesProblem(g, 0.2, 0.05, function_forcing(g, f)),
                                             NormSpec(2, 2, 0)))
    assert abs(vals[1] - vals[0]) / vals[0] <= 0.20
    with pytest.raises(ValueError):
        maximal_regularity_probe(StokesProblem(g, 0.2, 0.05, function_forcing(g, f)),
                                 NormSpec(2, 2, 1))


def test_cell_field_lives_at_cell_centers():
    g = MACGrid.box(4, origin=np.array([1.0, 2.0]))
    c = g.cell_field(np.zeros(g.shape))
    assert isinstance(c, GridField)
    assert np.allclose(c.origin, [1.125, 2.125])
