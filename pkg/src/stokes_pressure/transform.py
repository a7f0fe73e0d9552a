"""Boundary flattening, transformation identities and the localized system.

The chart map ``Phi(y) = (y', h(y') + y_n)`` sends the half-cylinder
``U_R^+ = B'_R x (0, R)`` onto the part of the domain above the boundary
graph.  Fields are pulled back to a uniform grid over (a box inside)
``U_R^+``; all derivatives there are centered second-order differences with
second-order one-sided closures at the grid edges, in particular on the
flattened boundary ``y_n = 0``.

Physical callables follow the :meth:`GridField.sample` convention: they take
points of shape ``(n, ...)`` and return ``(...)`` for scalars or ``(n, ...)``
for vector fields.  Physical-side derivatives are taken at ``Phi(y)`` with
the *same* per-node stencils as the flattened side, so every identity
residual vanishes to rounding error on a flat chart.

Axes are zero-based throughout; the normal axis is ``n - 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RegularGridInterpolator

from .bogovskii import DEFAULT_CONFIG, BogovskiiConfig, apply_scaled
from .geometry import BoundaryChart, Cutoff, StarDomain, sup_grad
from .grids import GridField, apply_multi_index, derivative, lattice_interp, stencil_table


# -- flattened grids and pullback -----------------------------------------------

def flat_grid(chart: BoundaryChart, n_cells: int, extent: float | None = None) -> GridField:
    """Zero scalar field on ``[-L, L]^(n-1) x [0, L]`` with spacing ``L / n_cells``.

    ``L`` defaults to the largest value keeping the box inside ``U_R^+``.  Nodes
    outside the chart patch (possible in 3D when ``L`` is given) are masked out.
    """
    if n_cells < 4:
        raise ValueError("need at least 4 cells along the normal axis")
    n = chart.dim
    L = chart.radius / math.sqrt(n - 1) if extent is None else float(extent)
    if not L > 0:
        raise ValueError("extent must be positive")
    h = L / n_cells
    shape = (2 * n_cells + 1,) * (n - 1) + (n_cells + 1,)
    origin = np.array([-L] * (n - 1) + [0.0])
    g = GridField(np.zeros(shape), origin, h)
    y = g.coords()
    lim = chart.radius * (1 + 1e-12)
    mask = (np.linalg.norm(y[:-1], axis=0) <= lim) & (y[-1] <= lim)
    return g.with_mask(mask)


def phi_points(chart: BoundaryChart, grid: GridField) -> np.ndarray:
    """``Phi(y)`` at every grid node, shape ``(n, *grid_shape)``."""
    if grid.ndim != chart.dim:
        raise ValueError("grid and chart dimensions differ")
    y = np.moveaxis(grid.coords(), 0, -1)
    chart.check_domain(y[grid.domain])
    x = y.copy()
    x[..., -1] += chart.h(y)
    return np.moveaxis(x, -1, 0)


def _evaluate(fun: Callable, x: np.ndarray) -> np.ndarray:
    out = np.asarray(fun(x), dtype=float)
    shape = x.shape[1:]
    if out.shape == shape or out.shape == (x.shape[0],) + shape:
        return out
    return np.broadcast_to(out, shape).copy()


def _interpolator(f: GridField):
    axes = f.axes()
    if f.rank == 0:
        interp = [RegularGridInterpolator(axes, f.data, bounds_error=True)]
    else:
        interp = [RegularGridInterpolator(axes, c, bounds_error=True) for c in f.data]
    valid = RegularGridInterpolator(axes, f.domain.astype(float), bounds_error=True)
    return interp, valid


def pullback(fun, chart: BoundaryChart, grid: GridField) -> GridField:
    """Samples of ``fun o Phi`` on the flattened grid.

    ``fun`` is a callable (exact composition) or a physical :class:`GridField`,
    read by multilinear interpolation.  A chart image leaving the physical
    field's grid or mask raises ``ValueError``.
    """
    x = phi_points(chart, grid)
    live = grid.domain
    if callable(fun) and not isinstance(fun, GridField):
        data = _evaluate(fun, x)
        rank = data.ndim - grid.ndim
        data = np.where(live, data, 0.0)
        return GridField(data, grid.origin, grid.spacing, grid.mask, rank)
    if not isinstance(fun, GridField):
        raise TypeError("pullback needs a callable or a GridField")
    if fun.ndim != chart.dim:
        raise ValueError("field and chart dimensions differ")
    pts = np.moveaxis(x, 0, -1)[live]
    interp, valid = _interpolator(fun)
    try:
        inside = valid(pts)
    except ValueError as err:
        raise ValueError("chart image is not contained in the field's grid") from err
    if np.any(inside < 1 - 1e-12):
        raise ValueError("chart image is not contained in the field's domain mask")
    comps = []
    for it in interp:
        c = np.zeros(grid.grid_shape)
        c[live] = it(pts)
        comps.append(c)
    data = comps[0] if fun.rank == 0 else np.stack(comps)
    return GridField(data, grid.origin, grid.spacing, grid.mask, fun.rank)


@dataclass(frozen=True, eq=False)
class FlattenedField:
    """Pulled-back velocity ``U``, pressure ``P``, forcing ``F`` and ``dU/dt``.

    All present fields share one flattened grid.  Missing fields are ``None``.
    """

    chart: BoundaryChart
    U: GridField | None = None
    P: GridField | None = None
    F: GridField | None = None
    U_t: GridField | None = None

    def __post_init__(self):
        present = [f for f in (self.U, self.P, self.F, self.U_t) if f is not None]
        if not present:
            raise ValueError("a flattened field needs at least one component")
        ref = present[0]
        for f in present:
            if (f.grid_shape != ref.grid_shape or f.spacing != ref.spacing
                    or not np.array_equal(f.origin, ref.origin)):
                raise ValueError("flattened fields must share one grid")
            if f.ndim != self.chart.dim:
                raise ValueError("field and chart dimensions differ")
        if ref.origin[-1] != 0.0:
            raise ValueError("flattened grid must start on the boundary y_n = 0")
        for name in ("U", "F", "U_t"):
            f = getattr(self, name)
            if f is not None and f.rank != 1:
                raise ValueError(f"{name} must be a vector field")
        if self.P is not None and self.P.rank != 0:
            raise ValueError("P must be a scalar field")

    @property
    def grid(self) -> GridField:
        for f in (self.U, self.P, self.F, self.U_t):
            if f is not None:
                return f

    @classmethod
    def from_physical(cls, chart: BoundaryChart, grid: GridField, u=None, p=None, f=None,
                      u_t=None) -> "FlattenedField":
        pb = {k: None if v is None else pullback(v, chart, grid)
              for k, v in dict(U=u, P=p, F=f, U_t=u_t).items()}
        return cls(chart, **pb)

    def tangential_gradient(self, which: str = "P") -> np.ndarray:
        """Reduced gradient ``(d_1, ..., d_{n-1})`` stacked on a new leading axis."""
        g = getattr(self, which)
        off = g.rank
        return np.stack([derivative(g.data, a + off, 1, g.spacing)
                         for a in range(g.ndim - 1)])

    def tangential_laplacian(self, which: str = "P") -> np.ndarray:
        g = getattr(self, which)
        off = g.rank
        return sum(derivative(g.data, a + off, 2, g.spacing) for a in range(g.ndim - 1))


# -- stencil helpers -----------------------------------------------------------

def _d(g: GridField | np.ndarray, axis: int, order: int = 1, h: float | None = None,
       rank: int = 0) -> np.ndarray:
    if isinstance(g, GridField):
        return derivative(g.data, axis + g.rank, order, g.spacing)
    return derivative(g, axis + rank, order, h)


def _chart_terms(chart: BoundaryChart, grid: GridField):
    """``grad h`` padded with a zero normal entry (leading axis), ``|grad h|^2``, ``Lap h``."""
    y = np.moveaxis(grid.coords(), 0, -1)
    gh = np.moveaxis(chart.grad(y), -1, 0)
    pad = np.concatenate([gh, np.zeros((1,) + gh.shape[1:])])
    return pad, np.sum(gh * gh, axis=0), chart.laplacian(y)


def physical_derivative(fun: Callable, chart: BoundaryChart, grid: GridField,
                        alpha, accuracy: int = 2) -> np.ndarray:
    """``(D_x^alpha fun) o Phi`` by finite differences centered at ``Phi(y)``.

    The stencil at each node copies the flattened-grid stencil of
    :func:`derivative` for that node, offsets and weights alike.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != chart.dim:
        raise ValueError("multi-index has wrong length")
    x = phi_points(chart, grid)
    h = grid.spacing
    active = [a for a, m in enumerate(alpha) if m]
    if not active:
        return _evaluate(fun, x)
    tables = {a: stencil_table(grid.grid_shape[a], alpha[a], accuracy) for a in active}
    out = None
    for combo in itertools.product(*[range(len(tables[a][0])) for a in active]):
        w = np.ones(grid.grid_shape)
        for a, m in zip(active, combo):
            col = tables[a][1][:, m]
            if not np.any(col):
                w = None
                break
            shape = [1] * grid.ndim
            shape[a] = -1
            w = w * col.reshape(shape)
        if w is None or not np.any(w):
            continue
        shift = np.zeros((grid.ndim,) + (1,) * grid.ndim)
        for a, m in zip(active, combo):
            shift[a] = tables[a][0][m] * h
        val = _evaluate(fun, x + shift)
        out = w * val if out is None else out + w * val
    return out / h ** sum(alpha)


def _unit(n, a):
    e = [0] * n
    e[a] = 1
    return e


def _rel(num: np.ndarray, den: float, live: np.ndarray) -> float:
    r = float(np.linalg.norm(num[..., live]))
    if r == 0.0:
        return 0.0
    if den == 0.0:
        return math.inf
    return r / den


def _nrm(a: np.ndarray, live: np.ndarray) -> float:
    return float(np.linalg.norm(a[..., live]))


def _pulled(fun, chart, grid, pulled):
    return pullback(fun, chart, grid) if pulled is None else pulled


# -- transformation identity residuals -------------------------------------------

def derivative_identity_residual(fun: Callable, chart: BoundaryChart, i: int,
                                 grid: GridField, pulled: GridField | None = None) -> float:
    """Relative residual of ``(d_{x_i} u) o Phi = d_{y_i} U - (d_i h) d_{y_n} U``.

    ``pulled`` overrides the samples of ``U = u o Phi`` (negative controls).
    For the normal axis the ``h`` term is absent.
    """
    n = chart.dim
    if not 0 <= i < n:
        raise ValueError("axis index out of range")
    U = _pulled(fun, chart, grid, pulled)
    lhs = physical_derivative(fun, chart, grid, _unit(n, i))
    rhs = _d(U, i)
    if i < n - 1:
        gh, _, _ = _chart_terms(chart, grid)
        rhs = rhs - gh[i] * _d(U, n - 1)
    live = grid.domain
    return _rel(lhs - rhs, _nrm(lhs, live), live)


def div_identity_residual(fun: Callable, chart: BoundaryChart, grid: GridField,
                          pulled: GridField | None = None) -> float:
    """Relative residual of ``div_y U - grad h . d_{y_n} U`` for solenoidal ``u``.

    The residual is scaled by the L2 norm of the full Jacobian of ``U``.
    """
    U = _pulled(fun, chart, grid, pulled)
    if U.rank != 1:
        raise ValueError("divergence identity needs a vector field")
    n = chart.dim
    gh, _, _ = _chart_terms(chart, grid)
    dn = _d(U, n - 1)
    res = sum(_d(U.data[a], a, 1, U.spacing) for a in range(n)) - np.sum(gh * dn, axis=0)
    live = grid.domain
    jac = math.sqrt(sum(_nrm(_d(U, a), live) ** 2 for a in range(n)))
    return _rel(res, jac, live)


def transformed_laplacian(U: GridField, chart: BoundaryChart) -> tuple[np.ndarray, list]:
    """``Lap_y U - 2 grad h . grad d_n U + |grad h|^2 d_nn U - (Lap h) d_n U``.

    Returns the sum and its terms, with ``Lap_y`` split into pure second
    derivatives so that the term norms give a scale even for harmonic ``u``.
    """
    n = chart.dim
    gh, g2, lap_h = _chart_terms(chart, U)
    dn = _d(U, n - 1)
    pure = [_d(U, a, 2) for a in range(n)]
    cross = sum(gh[a] * _d(dn, a, 1, U.spacing, U.rank) for a in range(n - 1))
    terms = pure + [-2.0 * cross, g2 * pure[-1], -lap_h * dn]
    return sum(terms), terms


def laplace_identity_residual(fun: Callable, chart: BoundaryChart, grid: GridField,
                              harmonic: bool = False, pulled: GridField | None = None) -> float:
    """Relative residual of the transformed Laplacian identity.

    By default the transformed Laplacian of ``U`` is compared with the physical
    Laplacian at ``Phi(y)``.  With ``harmonic`` set, the physical side is taken
    to be zero, which checks that ``u`` is harmonic through the chart.  The
    scale is the sum of the norms of the transformed terms.
    """
    U = _pulled(fun, chart, grid, pulled)
    total, terms = transformed_laplacian(U, chart)
    live = grid.domain
    if harmonic:
        lhs = 0.0
    else:
        lhs = sum(physical_derivative(fun, chart, grid, 2 * np.eye(chart.dim, dtype=int)[a])
                  for a in range(chart.dim))
    den = sum(_nrm(t, live) for t in terms)
    return _rel(lhs - total, den, live)


def gradient_identity_residual(fun: Callable, chart: BoundaryChart, grid: GridField,
                               pulled: GridField | None = None) -> float:
    """Relative residual of ``(grad_x p) o Phi = grad_y P - (grad h) d_{y_n} P``."""
    P = _pulled(fun, chart, grid, pulled)
    if P.rank != 0:
        raise ValueError("gradient identity needs a scalar field")
    n = chart.dim
    gh, _, _ = _chart_terms(chart, grid)
    dn = _d(P, n - 1)
    rhs = np.stack([_d(P, a) for a in range(n)]) - gh * dn
    lhs = np.stack([physical_derivative(fun, chart, grid, _unit(n, a)) for a in range(n)])
    live = grid.domain
    return _rel(lhs - rhs, _nrm(lhs, live), live)


# -- harmonic pressure: normal Hessian recovery ------------------------------------

def normal_hessian_recover(P: GridField, chart: BoundaryChart) -> GridField:
    """``d_nn P`` from tangential second and first normal derivatives only.

    ``(1 + |grad h|^2) d_nn P = -Lap' P + 2 grad h . grad' d_n P + (Lap h) d_n P``,
    valid when ``P`` is the pullback of a harmonic function.
    """
    if P.rank != 0:
        raise ValueError("recovery acts on scalar pressures")
    n = chart.dim
    gh, g2, lap_h = _chart_terms(chart, P)
    dn = _d(P, n - 1)
    lap_t = sum(_d(P, a, 2) for a in range(n - 1))
    cross = sum(gh[a] * _d(dn, a, 1, P.spacing) for a in range(n - 1))
    out = (-lap_t + 2.0 * cross + lap_h * dn) / (1.0 + g2)
    return P.with_data(out)


def iterated_recover(P: GridField, chart: BoundaryChart, k: int) -> GridField:
    """``d_k d_nn P`` for a tangential axis ``k``, differentiating the recovery identity.

    The chart coefficients are differentiated exactly, so on curved charts the
    result carries the commutator terms
    ``2 d_k grad h . grad' d_n P + d_k(Lap h) d_n P - d_k|grad h|^2 d_nn P``.
    On a flat chart it equals the recovery applied to ``d_k P``.
    """
    n = chart.dim
    if not 0 <= k < n - 1:
        raise ValueError("k must be a tangential axis")
    y = np.moveaxis(P.coords(), 0, -1)
    gh, g2, lap_h = _chart_terms(chart, P)
    hess_k = np.moveaxis(chart.hessian(y)[..., k, :], -1, 0)
    dlap = chart.grad_laplacian(y)[..., k]
    dg2 = chart.grad_grad_sq(y)[..., k]
    h = P.spacing

    def D(*axes):
        # same-axis derivatives as one full-order stencil; composing one-sided
        # closures along a single axis would cost the boundary rows their order
        alpha = [0] * n
        for a in axes:
            alpha[a] += 1
        return apply_multi_index(P.data, alpha, h)

    dn = D(n - 1)
    dnk = D(k, n - 1)
    dnn = normal_hessian_recover(P, chart).data
    lap_t = sum(D(k, a, a) for a in range(n - 1))
    cross = sum(gh[a] * D(k, a, n - 1) for a in range(n - 1))
    extra = sum(hess_k[a] * D(a, n - 1) for a in range(n - 1))
    out = (-lap_t + 2.0 * cross + 2.0 * extra + lap_h * dnk + dlap * dn - dg2 * dnn) / (1.0 + g2)
    return P.with_data(out)


def direct_normal_hessian(P: GridField) -> GridField:
    """``d_nn P`` by second differences in the normal direction."""
    return P.with_data(_d(P, P.ndim - 1, 2))


def recovery_residual(P: GridField, chart: BoundaryChart, k: int | None = None) -> float:
    """Relative L2 gap between the recovered and directly differenced normal Hessian.

    With ``k`` given, compares ``d_k d_nn P`` from :func:`iterated_recover` with
    direct differencing.
    """
    live = P.domain
    if k is None:
        rec = normal_hessian_recover(P, chart).data
        ref = direct_normal_hessian(P).data
    else:
        rec = iterated_recover(P, chart, k).data
        alpha = [0] * P.ndim
        alpha[k] += 1
        alpha[-1] += 2
        ref = apply_multi_index(P.data, alpha, P.spacing)
    return _rel(rec - ref, _nrm(ref, live), live)


# -- localization -------------------------------------------------------------------

@dataclass(frozen=True)
class LocalizationConfig:
    """``delta``: optional bound on ``|grad h|`` over ``U_{2 rho}``, re-checked.
    ``mean_tol``: admissible relative mean of the Bogovskii inputs.
    ``accuracy``: stencil order for ``d_n U`` inside the Bogovskii inputs.
    """

    delta: float | None = None
    mean_tol: float = 1e-6
    accuracy: int = 4
    bogovskii: BogovskiiConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.mean_tol > 0:
            raise ValueError("mean tolerance must be positive")
        if self.accuracy not in (2, 4):
            raise ValueError("accuracy must be 2 or 4")


def localization_domain(dim: int, rho: float) -> StarDomain:
    """``U_{2 rho}^+``: a rectangle in 2D, a cylinder in 3D, resting on ``y_n = 0``."""
    if dim == 2:
        return StarDomain.box((2 * rho, rho), (0.0, rho))
    return StarDomain.cylinder(2 * rho, rho, (0.0, 0.0, rho))


@dataclass(frozen=True, eq=False)
class LocalizedSystem:
    """Cut-off and corrected field ``V = d_k(zeta U - z1 - z2)`` with pressure ``Pi``.

    ``slots`` holds the forcing pieces ``G1`` ... ``G6`` when the time derivative
    and forcing were supplied; ``time`` holds ``dV/dt`` and the time derivatives
    of the corrections in that case.
    """

    flat: FlattenedField
    cutoff: Cutoff
    k: int
    region: np.ndarray
    zeta: np.ndarray
    U_tilde: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    V: np.ndarray
    Pi: np.ndarray | None
    P_mean: float | None
    mean_defect: float
    slots: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return self.flat.grid.spacing


def _bogovskii_inputs(U: np.ndarray, zeta, grad_zeta, gh, h, accuracy):
    n = U.shape[0]
    dn = derivative(U, n, 1, h, accuracy)
    g1 = zeta * np.sum(gh * dn, axis=0)
    g2 = np.sum(grad_zeta * U, axis=0)
    return g1, g2


def _input_mean(U, cutoff, chart, grid, order: int = 6) -> float:
    """``int g1 + g2`` by a Gauss product rule on the cells of the cutoff's transition layer.

    Since ``grad h`` does not depend on ``y_n`` and ``U`` vanishes on
    ``y_n = 0``, ``int g1 = -int (d_n zeta) grad h . U``; the whole integrand is
    then ``U . (grad zeta - (d_n zeta) grad h)``, which vanishes off the layer.
    ``zeta`` and ``h`` are evaluated exactly, ``U`` by cubic interpolation.
    """
    n = grid.ndim
    h = grid.spacing
    gx, gw = leggauss(order)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    cells = np.stack(np.meshgrid(*[np.arange(m - 1) for m in grid.grid_shape],
                                 indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.ones(len(cells), dtype=bool)
    for corner in itertools.product((0, 1), repeat=n):
        keep &= grid.domain[tuple((cells + np.asarray(corner)).T)]
    rc = np.linalg.norm(grid.origin + h * (cells + 0.5), axis=-1)
    half_diag = 0.5 * h * math.sqrt(n)
    keep &= (rc + half_diag >= cutoff.plateau) & (rc - half_diag <= cutoff.support)
    cells = cells[keep]
    sub = np.stack(np.meshgrid(*[gx] * n, indexing="ij"), axis=-1).reshape(-1, n)
    wsub = np.prod(np.stack(np.meshgrid(*[gw] * n, indexing="ij"), axis=-1).reshape(-1, n), axis=-1)
    total = 0.0
    for start in range(0, len(cells), 2048):
        c = cells[start:start + 2048]
        pts = (grid.origin + h * (c[:, None, :] + sub[None, :, :])).reshape(-1, n)
        gz = cutoff.gradient(pts)
        gh = chart.grad(pts)
        weight = gz.copy()
        weight[:, :-1] -= gz[:, -1:] * gh
        integrand = sum(weight[:, a] * lattice_interp(U[a], grid.origin, h, pts)
                        for a in range(n))
        total += float(np.sum(np.tile(wsub, len(c)) * integrand)) * h ** n
    return total


def build_localized(flat: FlattenedField, cutoff: Cutoff, k: int,
                    cfg: LocalizationConfig | None = None) -> LocalizedSystem:
    """Assemble ``z1 = B(zeta grad h . d_n U)``, ``z2 = B(grad zeta . U)``, ``V``, ``Pi``.

    The Bogovskii operator acts on ``U_{2 rho}^+``.  The two inputs must have
    zero total integral (up to ``cfg.mean_tol`` relative to their L1 norms); a
    larger defect means ``U`` is not solenoidal or does not vanish on the
    boundary.  ``Pi = d_k(zeta (P - P_mean))`` with the mean taken over the
    transition layer ``sqrt(2) rho <= |y| <= 2 rho`` of the cutoff.
    """
    cfg = cfg or LocalizationConfig()
    chart = flat.chart
    n = chart.dim
    if flat.U is None:
        raise ValueError("localization needs the pulled-back velocity U")
    if not 0 <= k < n - 1:
        raise ValueError("k must be a tangential axis")
    rho = cutoff.rho
    grid = flat.grid
    h = grid.spacing
    if cfg.delta is not None:
        s = sup_grad(chart, 2 * rho)
        if s > cfg.delta * (1 + 1e-12):
            raise ValueError(f"sup |grad h| = {s:.3g} on U_2rho exceeds delta = {cfg.delta:.3g}")
    lo, hi = grid.origin, grid.upper()
    tol = 1e-9 * rho
    if np.any(hi < 2 * rho - tol) or np.any(lo[:-1] > -2 * rho + tol):
        raise ValueError("flattened grid does not cover U_2rho^+")
    dom = localization_domain(n, rho)
    ygrid = grid.coords()
    y = np.moveaxis(ygrid, 0, -1)
    region = dom.contains(y, tol=tol) & grid.domain
    zeta = cutoff.value(y)
    grad_zeta = np.moveaxis(cutoff.gradient(y), -1, 0)
    gh, _, _ = _chart_terms(chart, grid)
    U = flat.U.data

    def corrections(Ufield, label):
        g1, g2 = _bogovskii_inputs(Ufield, zeta, grad_zeta, gh, h, cfg.accuracy)
        for g in (g1, g2):
            if np.any(g[~region] != 0):
                raise ValueError("Bogovskii input leaks outside U_2rho^+")
        total = _input_mean(Ufield, cutoff, chart, grid)
        scale = float(np.sum(np.abs(g1)[region]) + np.sum(np.abs(g2)[region])) * h ** n
        defect = abs(total) / scale if scale > 0 else 0.0
        if defect > cfg.mean_tol:
            raise ValueError(f"{label}: Bogovskii inputs have relative mean {defect:.3g} "
                             f"> {cfg.mean_tol:.3g}; U is not solenoidal with zero trace")
        zs = []
        for g in (g1, g2):
            f = GridField(np.where(region, g, 0.0), grid.origin, h, region)
            zs.append(apply_scaled(dom, f, cfg.bogovskii).data)
        return g1, g2, zs[0], zs[1], defect

    g1, g2, z1, z2, defect = corrections(U, "U")
    U_tilde = zeta * U
    V = derivative(U_tilde - z1 - z2, k + 1, 1, h)

    Pi = P_mean = None
    if flat.P is not None:
        r = np.linalg.norm(y, axis=-1)
        layer = region & (r >= cutoff.plateau - tol) & (r <= cutoff.support + tol)
        if not layer.any():
            raise ValueError("grid too coarse to resolve the cutoff transition layer")
        P_mean = float(np.mean(flat.P.data[layer]))
        Pi = derivative(zeta * (flat.P.data - P_mean), k, 1, h)

    slots, time = {}, {}
    if flat.U_t is not None:
        _, _, z1t, z2t, _ = corrections(flat.U_t.data, "U_t")
        time = {"z1": z1t, "z2": z2t,
                "V": derivative(zeta * flat.U_t.data - z1t - z2t, k + 1, 1, h)}
        if flat.P is not None and flat.F is not None:
            slots = _forcing_slots(flat, k, zeta, grad_zeta, cutoff, y, P_mean,
                                   z1, z2, z1t, z2t)
    return LocalizedSystem(flat, cutoff, k, region, zeta, U_tilde, g1, g2, z1, z2, V, Pi,
                           P_mean, defect, slots, time)


def _vlap(a: np.ndarray, h: float) -> np.ndarray:
    return sum(derivative(a, ax + 1, 2, h) for ax in range(a.ndim - 1))


def _forcing_slots(flat, k, zeta, grad_zeta, cutoff, y, P_mean, z1, z2, z1t, z2t) -> dict:
    chart = flat.chart
    n = chart.dim
    h = flat.grid.spacing
    U, P, F = flat.U.data, flat.P.data, flat.F.data
    gh, g2, lap_h = _chart_terms(chart, flat.grid)
    lap_zeta = cutoff.laplacian(y)

    def dk(a, rank=1):
        return derivative(a, k + rank, 1, h)

    dU = [derivative(U, a + 1, 1, h) for a in range(n)]
    dnU = dU[-1]
    dnP = derivative(P, n - 1, 1, h)
    grad_zeta_dU = sum(grad_zeta[a] * dU[a] for a in range(n))
    cross = sum(gh[a] * derivative(dnU, a + 1, 1, h) for a in range(n - 1))
    return {
        "G1": dk((P - P_mean) * grad_zeta),
        "G2": -dk(2.0 * grad_zeta_dU + lap_zeta * U),
        "G3": -dk(z1t - _vlap(z1, h)),
        "G4": -dk(z2t - _vlap(z2, h)),
        "G5": dk(zeta * dnP * gh - 2.0 * zeta * cross + zeta * g2 * derivative(U, n, 2, h)),
        "G6": dk(-zeta * lap_h * dnU + zeta * F),
    }


def _inner(shape, margin: int = 1) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[tuple(slice(margin, -margin) for _ in shape)] = True
    return m


def localized_div_residual(sys: LocalizedSystem) -> float:
    """Relative L2 norm of ``div_y V`` over the interior of the flattened grid.

    Scaled by the sum of the norms of the two parts that cancel,
    ``d_k div_y(zeta U)`` and ``d_k div_y(z1 + z2)``.
    """
    h = sys.spacing
    n = sys.V.shape[0]
    live = _inner(sys.V.shape[1:], 2) & sys.flat.grid.domain

    def div(a):
        return sum(derivative(a[d], d, 1, h) for d in range(n))

    res = div(sys.V)
    a = derivative(div(sys.U_tilde), sys.k, 1, h)
    b = derivative(div(sys.z1 + sys.z2), sys.k, 1, h)
    return _rel(res, _nrm(a, live) + _nrm(b, live), live)


def momentum_residual(sys: LocalizedSystem) -> float:
    """Relative residual of ``dV/dt - Lap V + grad Pi - (G1 + ... + G6)``.

    Needs a system built with ``P``, ``F`` and ``U_t``.  Scaled by the sum of
    the norms of the four terms.
    """
    if not sys.slots or sys.Pi is None:
        raise ValueError("momentum residual needs P, F and U_t in the flattened field")
    h = sys.spacing
    n = sys.V.shape[0]
    live = _inner(sys.V.shape[1:], 2) & sys.flat.grid.domain
    Vt = sys.time["V"]
    lapV = _vlap(sys.V, h)
    gradPi = np.stack([derivative(sys.Pi, a, 1, h) for a in range(n)])
    G = sum(sys.slots.values())
    res = Vt - lapV + gradPi - G
    den = sum(_nrm(t, live) for t in (Vt, lapV, gradPi, G))
    return _rel(res, den, live)
