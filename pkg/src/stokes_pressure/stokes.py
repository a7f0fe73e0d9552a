"""Transient Stokes flow on a MAC grid with no-slip walls.

Pressure lives at the centers of fluid cells and velocity component ``d`` on
the faces normal to axis ``d``.  A face carries an unknown when both adjacent
cells are fluid.  For the Laplacian, an inactive neighbour face that touches a
fluid cell is a wall-normal face with value 0 one spacing away; a face between
two solid cells stands for a wall half a spacing away and is handled by the
linear ghost value ``-u``.  Both choices keep the operator symmetric and
negative definite.

Each implicit Euler step solves the saddle system

    [ I/dt - A   G ] [u]   [u_old/dt + f]
    [   G^T      0 ] [p] = [     0      ]

with ``G = -D^T`` the discrete gradient.  In 2D the system is factorized
directly with the pressure of one cell pinned (its divergence row is implied
by the others because the net boundary flux vanishes).  In 3D, where direct
fill-in grows quickly, the pressure Schur complement ``G^T K^-1 G`` is solved
by conjugate gradients with a Cahouet-Chabard preconditioner.  Either way the
pressure is shifted to zero mean afterwards.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy import ndimage

from .grids import GridField, SpaceTimeField
from .norms import NormSpec, seminorm, sobolev_norm, time_norm


class SolverError(RuntimeError):
    """The saddle-point solve failed or left a large residual."""


@dataclass(frozen=True, eq=False)
class MACGrid:
    """Cells of spacing ``h`` filling the box ``origin + h * [0, shape]``."""

    shape: tuple
    spacing: float
    origin: np.ndarray
    fluid: np.ndarray

    def __post_init__(self):
        shape = tuple(int(m) for m in self.shape)
        if len(shape) not in (2, 3):
            raise ValueError("MAC grids are 2D or 3D")
        if min(shape) < 2:
            raise ValueError("need at least two cells per axis")
        fluid = np.asarray(self.fluid, dtype=bool)
        if fluid.shape != shape:
            raise ValueError("fluid mask does not match the cell shape")
        if not fluid.any():
            raise ValueError("no fluid cells")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "fluid", fluid)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def box(cls, n_cells: int, dim: int = 2, length: float = 1.0, origin=None,
            fluid=None) -> "MACGrid":
        shape = (n_cells,) * dim
        origin = np.zeros(dim) if origin is None else origin
        fluid = np.ones(shape, dtype=bool) if fluid is None else fluid
        return cls(shape, length / n_cells, origin, fluid)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def cell_centers(self) -> np.ndarray:
        axes = [self.origin[d] + self.spacing * (np.arange(m) + 0.5)
                for d, m in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def face_shape(self, d: int) -> tuple:
        s = list(self.shape)
        s[d] += 1
        return tuple(s)

    def face_origin(self, d: int) -> np.ndarray:
        o = self.origin + 0.5 * self.spacing
        o[d] -= 0.5 * self.spacing
        return o

    def face_centers(self, d: int) -> np.ndarray:
        o = self.face_origin(d)
        axes = [o[e] + self.spacing * np.arange(m) for e, m in enumerate(self.face_shape(d))]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def active(self, d: int) -> np.ndarray:
        act = np.zeros(self.face_shape(d), dtype=bool)
        lo = [slice(None)] * self.ndim
        hi = [slice(None)] * self.ndim
        mid = [slice(None)] * self.ndim
        lo[d], hi[d], mid[d] = slice(0, -1), slice(1, None), slice(1, -1)
        act[tuple(mid)] = self.fluid[tuple(lo)] & self.fluid[tuple(hi)]
        return act

    def touches_fluid(self, d: int) -> np.ndarray:
        """Faces normal to ``d`` with at least one adjacent fluid cell."""
        pad = [(0, 0)] * self.ndim
        pad[d] = (1, 1)
        fp = np.pad(self.fluid, pad)
        lo = [slice(None)] * self.ndim
        hi = [slice(None)] * self.ndim
        lo[d], hi[d] = slice(0, -1), slice(1, None)
        return fp[tuple(lo)] | fp[tuple(hi)]

    def cell_field(self, data) -> GridField:
        return GridField(data, self.origin + 0.5 * self.spacing, self.spacing, self.fluid)


def disk_fluid(n_cells: int, radius: float = 0.5, center=(0.5, 0.5), length: float = 1.0):
    g = MACGrid.box(n_cells, len(center), length)
    x = g.cell_centers()
    r2 = sum((x[d] - center[d]) ** 2 for d in range(len(center)))
    return r2 < radius ** 2


def obstacle_fluid(n_cells: int, box_length: float, obstacle_radius: float, dim: int = 2):
    """Box ``[-L/2, L/2]^n`` minus a centered ball."""
    origin = -0.5 * box_length * np.ones(dim)
    g = MACGrid.box(n_cells, dim, box_length, origin)
    x = g.cell_centers()
    return MACGrid(g.shape, g.spacing, origin, np.sum(x ** 2, axis=0) >= obstacle_radius ** 2)


@dataclass(frozen=True, eq=False)
class StaggeredField:
    """One face array per velocity component."""

    components: tuple
    grid: MACGrid

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        for d, c in enumerate(comps):
            if c.shape != self.grid.face_shape(d):
                raise ValueError(f"component {d} has shape {c.shape}, "
                                 f"expected {self.grid.face_shape(d)}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zeros(cls, grid: MACGrid) -> "StaggeredField":
        return cls(tuple(np.zeros(grid.face_shape(d)) for d in range(grid.ndim)), grid)

    @classmethod
    def sample(cls, grid: MACGrid, fun, t: float | None = None) -> "StaggeredField":
        """Component ``d`` of ``fun(x[, t])`` evaluated at the ``d``-faces."""
        comps = []
        for d in range(grid.ndim):
            x = grid.face_centers(d)
            val = fun(x) if t is None else fun(x, t)
            comps.append(np.broadcast_to(np.asarray(val[d], dtype=float), x.shape[1:]).copy())
        return cls(tuple(comps), grid)

    def fields(self) -> list[GridField]:
        g = self.grid
        return [GridField(c, g.face_origin(d), g.spacing, g.active(d))
                for d, c in enumerate(self.components)]

    def scaled(self, a: float) -> "StaggeredField":
        return StaggeredField(tuple(a * c for c in self.components), self.grid)

    def __add__(self, other: "StaggeredField") -> "StaggeredField":
        return StaggeredField(tuple(a + b for a, b in zip(self.components, other.components)),
                              self.grid)

    def __sub__(self, other: "StaggeredField") -> "StaggeredField":
        return self + other.scaled(-1.0)

    def norm(self, active_only: bool = True) -> float:
        g = self.grid
        tot = 0.0
        for d, c in enumerate(self.components):
            v = c[g.active(d)] if active_only else c
            tot += float(np.sum(v * v))
        return math.sqrt(tot * g.spacing ** g.ndim)


class StokesOperator:
    """Assembled sparse operators of a MAC grid; immutable after construction."""

    def __init__(self, grid: MACGrid):
        self.grid = grid
        n, h = grid.ndim, grid.spacing
        self.active = [grid.active(d) for d in range(n)]
        self.uid = []
        offset = 0
        for d in range(n):
            ids = -np.ones(grid.face_shape(d), dtype=np.int64)
            k = int(self.active[d].sum())
            ids[self.active[d]] = offset + np.arange(k)
            self.uid.append(ids)
            offset += k
        self.nu = offset
        self.pid = -np.ones(grid.shape, dtype=np.int64)
        self.np = int(grid.fluid.sum())
        self.pid[grid.fluid] = np.arange(self.np)
        self.D = self._divergence(h)
        self.G = (-self.D.T).tocsr()
        self.A = self._laplacian(h)
        self._lu = {}

    def _divergence(self, h):
        g = self.grid
        rows, cols, vals = [], [], []
        for d in range(g.ndim):
            idx = np.argwhere(self.active[d])
            u = self.uid[d][tuple(idx.T)]
            below = idx.copy()
            below[:, d] -= 1
            rows += [self.pid[tuple(below.T)], self.pid[tuple(idx.T)]]
            cols += [u, u]
            vals += [np.full(len(u), 1.0 / h), np.full(len(u), -1.0 / h)]
        return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self.np, self.nu))

    def _laplacian(self, h):
        g = self.grid
        rows, cols, vals = [], [], []
        inv = 1.0 / h ** 2
        for d in range(g.ndim):
            fshape = np.array(g.face_shape(d))
            idx = np.argwhere(self.active[d])
            me = self.uid[d][tuple(idx.T)]
            touches = g.touches_fluid(d)
            diag = np.zeros(len(me))
            for e in range(g.ndim):
                for s in (-1, 1):
                    nb = idx.copy()
                    nb[:, e] += s
                    inb = np.all((nb >= 0) & (nb < fshape), axis=1)
                    nbc = np.where(inb[:, None], nb, 0)
                    nid = np.where(inb, self.uid[d][tuple(nbc.T)], -1)
                    act = nid >= 0
                    wall = inb & ~act & touches[tuple(nbc.T)]
                    ghost = ~act & ~wall
                    diag -= 1.0
                    diag -= ghost.astype(float)
                    rows.append(me[act])
                    cols.append(nid[act])
                    vals.append(np.full(int(act.sum()), inv))
            rows.append(me)
            cols.append(me)
            vals.append(diag * inv)
        return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self.nu, self.nu))

    # -- vector <-> field -------------------------------------------------
    def to_vector(self, u: StaggeredField) -> np.ndarray:
        out = np.zeros(self.nu)
        for d, c in enumerate(u.components):
            out[self.uid[d][self.active[d]]] = c[self.active[d]]
        return out

    def to_field(self, vec: np.ndarray) -> StaggeredField:
        comps = []
        for d in range(self.grid.ndim):
            c = np.zeros(self.grid.face_shape(d))
            c[self.active[d]] = vec[self.uid[d][self.active[d]]]
            comps.append(c)
        return StaggeredField(tuple(comps), self.grid)

    def pressure_field(self, vec: np.ndarray) -> GridField:
        p = np.zeros(self.grid.shape)
        p[self.grid.fluid] = vec
        return self.grid.cell_field(p)

    def divergence(self, u: StaggeredField) -> np.ndarray:
        return self.D @ self.to_vector(u)

    def gradient(self, p: GridField) -> StaggeredField:
        return self.to_field(self.G @ p.data[self.grid.fluid])

    # -- solves -------------------------------------------------------------
    # The pressure of cell 0 is pinned to remove the constant null space; the
    # divergence row of that cell is implied by the others (zero net flux).
    # The mean is subtracted afterwards.
    def saddle_matrix(self, dt: float):
        K = sps.identity(self.nu, format="csr") / dt - self.A
        Gp = self.G[:, 1:]
        return sps.bmat([[K, Gp], [Gp.T, None]], format="csc")

    def _direct(self, dt):
        M = self.saddle_matrix(dt)
        try:
            return M, spla.splu(M, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def _schur(self, dt):
        K = (sps.identity(self.nu, format="csr") / dt - self.A).tocsc()
        L = (self.D @ self.D.T).tocsc()[1:, 1:]
        return spla.splu(K), spla.splu(L)

    def method(self) -> str:
        return "direct" if self.grid.ndim == 2 else "schur"

    def factor(self, dt: float):
        key = float(dt)
        if key not in self._lu:
            self._lu[key] = self._direct(dt) if self.method() == "direct" else self._schur(dt)
        return self._lu[key]

    def solve(self, u_old: np.ndarray, f: np.ndarray, dt: float, tol: float = 1e-9):
        rhs_u = u_old / dt + f
        if self.method() == "direct":
            M, lu = self.factor(dt)
            rhs = np.concatenate([rhs_u, np.zeros(self.np - 1)])
            sol = lu.solve(rhs)
            for _ in range(2):
                sol += lu.solve(rhs - M @ sol)
            res = np.linalg.norm(rhs - M @ sol)
            u, p = sol[:self.nu], np.concatenate([[0.0], sol[self.nu:]])
        else:
            u, p, res = self._solve_schur(rhs_u, dt)
        scale = max(np.linalg.norm(rhs_u), 1e-300)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))) or res > tol * scale:
            raise SolverError(f"saddle solve residual {res:.3e} exceeds {tol:.1e} "
                              f"x rhs norm {scale:.3e}")
        return u, p - p.mean()

    def _solve_schur(self, r, dt, rtol=1e-13, maxiter=500):
        """PCG on ``D K^-1 D^T p = -D K^-1 r`` with a Cahouet-Chabard preconditioner."""
        Klu, Llu = self.factor(dt)
        D, G = self.D, self.G

        def center(v):
            return v - v.mean()

        def S(p):
            return center(D @ Klu.solve(D.T @ p))

        def prec(res):
            z = np.zeros_like(res)
            z[1:] = Llu.solve(res[1:])
            return center(z / dt + res)

        b = center(-(D @ Klu.solve(r)))
        p = np.zeros(self.np)
        res = b.copy()
        z = prec(res)
        d = z.copy()
        rz = res @ z
        bn = max(np.linalg.norm(b), 1e-300)
        for _ in range(maxiter):
            if np.linalg.norm(res) <= rtol * bn:
                break
            Sd = S(d)
            a = rz / (d @ Sd)
            p += a * d
            res -= a * Sd
            z = prec(res)
            rz_new = res @ z
            d = z + (rz_new / rz) * d
            rz = rz_new
        else:
            raise SolverError("pressure Schur iteration did not converge")
        u = Klu.solve(r - G @ p)
        K = sps.identity(self.nu, format="csr") / dt - self.A
        mom = np.linalg.norm(K @ u + G @ p - r)
        div = np.linalg.norm(D @ u) * self.grid.spacing
        return u, p, max(mom, div)


@lru_cache(maxsize=16)
def operator_for(grid: MACGrid) -> StokesOperator:
    return StokesOperator(grid)


Forcing = Callable[[float], StaggeredField]


@dataclass(frozen=True, eq=False)
class StokesProblem:
    """No-slip transient Stokes problem with zero initial velocity."""

    grid: MACGrid
    T: float
    dt: float
    forcing: Forcing

    def __post_init__(self):
        if not self.T > 0 or not self.dt > 0:
            raise ValueError("T and dt must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError("T must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def h_grid(self) -> float:
        return self.grid.spacing


def function_forcing(grid: MACGrid, fun: Callable) -> Forcing:
    """Forcing from ``fun(x, t)`` returning ``n`` components for points ``x`` of shape ``(n, ...)``."""
    return lambda t: StaggeredField.sample(grid, fun, t)


def separable_forcing(base: StaggeredField, g: Callable[[float], float]) -> Forcing:
    """``f(x, t) = g(t) * base(x)``."""
    return lambda t: base.scaled(float(g(t)))


@dataclass(frozen=True, eq=False)
class StokesState:
    u: StaggeredField
    p: GridField
    t: float = 0.0

    @classmethod
    def initial(cls, grid: MACGrid) -> "StokesState":
        return cls(StaggeredField.zeros(grid), grid.cell_field(np.zeros(grid.shape)), 0.0)


def step(state: StokesState, f_t: StaggeredField, dt: float,
         operator: StokesOperator | None = None) -> StokesState:
    """One implicit Euler step with forcing ``f_t`` taken at the new time level."""
    op = operator or operator_for(state.u.grid)
    u, p = op.solve(op.to_vector(state.u), op.to_vector(f_t), dt)
    return StokesState(op.to_field(u), op.pressure_field(p), state.t + dt)


def solve_transient(problem: StokesProblem, operator: StokesOperator | None = None
                    ) -> tuple[SpaceTimeField, SpaceTimeField]:
    """Trajectory from ``u(0) = 0``; slice ``i`` sits at ``t = i * dt``."""
    op = operator or operator_for(problem.grid)
    state = StokesState.initial(problem.grid)
    us, ps = [state.u], [state.p]
    for i in range(1, problem.n_steps + 1):
        t = i * problem.dt
        state = step(state, problem.forcing(t), problem.dt, op)
        state = StokesState(state.u, state.p, t)
        us.append(state.u)
        ps.append(state.p)
    times = problem.times
    return SpaceTimeField(times, us), SpaceTimeField(times, ps)


# -- diagnostics -----------------------------------------------------------------

def interior_mask(fluid: np.ndarray, margin: int) -> np.ndarray:
    """Fluid cells at least ``margin`` cells (in every direction) from any solid or the box edge."""
    struct_el = np.ones((3,) * fluid.ndim, dtype=bool)
    return ndimage.binary_erosion(fluid, struct_el, iterations=margin, border_value=0)


def harmonicity_residual(p: GridField, margin: int = 2) -> float:
    """Relative L2 norm of the discrete Laplacian of ``p`` over the shrunk interior.

    The denominator ``||D^2 p|| + ||D p||/L + ||p - mean||/L^2`` (same region)
    makes the measure scale-free and keeps it finite for affine ``p``.
    """
    if margin < 2:
        raise ValueError("margin must be at least 2 cells")
    inner = interior_mask(p.domain, margin)
    if not inner.any():
        raise ValueError("interior is empty after shrinking by the margin")
    h = p.spacing
    a = p.data
    n = a.ndim
    lap = np.zeros_like(a)
    hess2 = np.zeros_like(a)
    grad2 = np.zeros_like(a)
    core = tuple(slice(1, -1) for _ in range(n))
    for d in range(n):
        up = [slice(1, -1)] * n
        dn = [slice(1, -1)] * n
        up[d], dn[d] = slice(2, None), slice(0, -2)
        second = (a[tuple(up)] - 2 * a[core] + a[tuple(dn)]) / h ** 2
        lap[core] += second
        hess2[core] += second ** 2
        grad2[core] += ((a[tuple(up)] - a[tuple(dn)]) / (2 * h)) ** 2
        for e in range(d + 1, n):
            pp = [slice(1, -1)] * n
            pm = [slice(1, -1)] * n
            mp = [slice(1, -1)] * n
            mm = [slice(1, -1)] * n
            pp[d], pp[e] = slice(2, None), slice(2, None)
            pm[d], pm[e] = slice(2, None), slice(0, -2)
            mp[d], mp[e] = slice(0, -2), slice(2, None)
            mm[d], mm[e] = slice(0, -2), slice(0, -2)
            mixed = (a[tuple(pp)] - a[tuple(pm)] - a[tuple(mp)] + a[tuple(mm)]) / (4 * h * h)
            hess2[core] += 2 * mixed ** 2
    L = h * max(np.ptp(np.argwhere(inner), axis=0) + 1)
    pbar = a[inner].mean()
    num = np.sqrt(np.sum(lap[inner] ** 2))
    den = (np.sqrt(np.sum(hess2[inner])) + np.sqrt(np.sum(grad2[inner])) / L
           + np.sqrt(np.sum((a[inner] - pbar) ** 2)) / L ** 2)
    if den == 0:
        return 0.0
    return float(num / den)


def divergence_history(u: SpaceTimeField, operator: StokesOperator | None = None) -> np.ndarray:
    """``||div_h u|| / ||u||`` per slice (0 for vanishing slices)."""
    op = operator or operator_for(u.slices[0].grid)
    out = []
    for s in u.slices:
        un = np.linalg.norm(op.to_vector(s))
        out.append(0.0 if un == 0 else float(np.linalg.norm(op.divergence(s)) * s.grid.spacing / un))
    return np.array(out)


def maximal_regularity_probe(problem: StokesProblem, spec: NormSpec,
                             solution: tuple[SpaceTimeField, SpaceTimeField] | None = None) -> float:
    """``(||d_t u|| + ||D^2 u|| + ||D p||)_{L^s L^q} / ||f||_{L^s L^q}``."""
    if spec.k != 0:
        raise ValueError("the maximal regularity probe uses k = 0")
    u, p = solution if solution is not None else solve_transient(problem)
    times = problem.times[1:]
    w = np.full(len(times), problem.dt)
    fn = [sobolev_norm(problem.forcing(t).fields(), spec.q, 0) for t in times]
    den = time_norm(fn, w, spec.s)
    if not den > 0:
        raise ValueError("zero forcing: probe ratio undefined")
    dtu, d2u, dp = [], [], []
    for i in range(1, len(u.slices)):
        diff = (u.slices[i] - u.slices[i - 1]).scaled(1.0 / problem.dt)
        dtu.append(sobolev_norm(diff.fields(), spec.q, 0))
        d2u.append(seminorm(u.slices[i].fields(), spec.q, 2))
        dp.append(seminorm(p.slices[i], spec.q, 1))
    num = sum(time_norm(v, w, spec.s) for v in (dtu, d2u, dp))
    return num / den


# -- forcing files -------------------------------------------------------------

def write_forcing_file(path, data: np.ndarray) -> None:
    """Write cell-centered forcing of shape ``(n_steps, n, *res)``.

    Layout: little-endian uint64 header ``n, res_1..res_n, n_steps`` followed
    by float64 samples in C order.
    """
    data = np.asarray(data, dtype="<f8")
    n_steps, n = data.shape[:2]
    res = data.shape[2:]
    if len(res) != n:
        raise ValueError("data must have shape (n_steps, n, *res) with len(res) == n")
    with open(path, "wb") as fh:
        fh.write(struct.pack(f"<{n + 2}Q", n, *res, n_steps))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_forcing_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError("forcing file too short")
    (n,) = struct.unpack_from("<Q", raw, 0)
    if n not in (2, 3):
        raise ValueError(f"forcing file declares dimension {n}")
    header = struct.unpack_from(f"<{n + 2}Q", raw, 0)
    res, n_steps = header[1:n + 1], header[n + 1]
    count = n_steps * n * int(np.prod(res))
    body = raw[8 * (n + 2):]
    if len(body) != 8 * count:
        raise ValueError(f"forcing file holds {len(body)} data bytes, expected {8 * count}")
    return np.frombuffer(body, dtype="<f8").reshape((n_steps, n) + tuple(res)).astype(float)


def cells_to_faces(grid: MACGrid, cell_data: np.ndarray) -> StaggeredField:
    """Average cell-centered components onto faces (one-sided at the box edge)."""
    comps = []
    for d in range(grid.ndim):
        c = cell_data[d]
        pad = [(0, 0)] * grid.ndim
        pad[d] = (1, 1)
        cp = np.pad(c, pad, mode="edge")
        lo = [slice(None)] * grid.ndim
        hi = [slice(None)] * grid.ndim
        lo[d], hi[d] = slice(0, -1), slice(1, None)
        comps.append(0.5 * (cp[tuple(lo)] + cp[tuple(hi)]))
    return StaggeredField(tuple(comps), grid)


def file_forcing(grid: MACGrid, data: np.ndarray, dt: float) -> Forcing:
    """Forcing from file samples; slice ``k`` applies at ``t = (k + 1) dt``."""
    if data.shape[2:] != grid.shape or data.shape[1] != grid.ndim:
        raise ValueError(f"forcing file shape {data.shape[1:]} does not match the grid")
    faces = [cells_to_faces(grid, data[k]) for k in range(data.shape[0])]

    def forcing(t):
        k = int(round(t / dt)) - 1
        if not 0 <= k < len(faces):
            raise ValueError(f"forcing file has no slice for t={t}")
        return faces[k]
    return forcing
