"""Uniform-grid containers and finite-difference stencils.

All spatial samples live on node lattices ``x = origin + spacing * index``
with the same spacing along every axis.  Vector fields carry their
components along a leading axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar (``rank=0``) or vector (``rank=1``) samples on a uniform grid.

    ``mask`` marks the nodes where the field is defined (the domain).  A
    missing mask means the whole lattice.
    """

    data: np.ndarray
    origin: np.ndarray
    spacing: float
    mask: np.ndarray | None = None
    rank: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        if self.rank not in (0, 1):
            raise ValueError(f"rank must be 0 or 1, got {self.rank}")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        ndim = data.ndim - self.rank
        if origin.shape != (ndim,):
            raise ValueError(f"origin has shape {origin.shape}, expected ({ndim},)")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != self.grid_shape:
                raise ValueError("mask shape does not match the grid")
            object.__setattr__(self, "mask", mask)

    @property
    def ndim(self) -> int:
        return self.data.ndim - self.rank

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.data.shape[self.rank:]

    @property
    def domain(self) -> np.ndarray:
        """Mask of defined nodes, never ``None``."""
        if self.mask is None:
            return np.ones(self.grid_shape, dtype=bool)
        return self.mask

    def axes(self) -> list[np.ndarray]:
        return [self.origin[d] + self.spacing * np.arange(m)
                for d, m in enumerate(self.grid_shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates with shape ``(ndim, *grid_shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.grid_shape) - 1)

    def components(self) -> list["GridField"]:
        if self.rank == 0:
            return [self]
        return [self.with_data(c, rank=0) for c in self.data]

    def with_data(self, data, rank: int | None = None) -> "GridField":
        return GridField(data, self.origin, self.spacing, self.mask,
                         self.rank if rank is None else rank)

    def with_mask(self, mask) -> "GridField":
        return GridField(self.data, self.origin, self.spacing, mask, self.rank)

    @classmethod
    def sample(cls, fun, origin, spacing, shape, mask=None, rank=0) -> "GridField":
        """Evaluate ``fun(x)`` with ``x`` of shape ``(ndim, *shape)``."""
        origin = np.atleast_1d(np.asarray(origin, dtype=float))
        axes = [origin[d] + spacing * np.arange(m) for d, m in enumerate(shape)]
        x = np.stack(np.meshgrid(*axes, indexing="ij"))
        data = np.asarray(fun(x), dtype=float)
        if rank == 0:
            data = np.broadcast_to(data, tuple(shape)).copy()
        return cls(data, origin, spacing, mask, rank)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Time-indexed slices on a uniform time grid over ``(t0, T)``.

    Norms in time use the right-endpoint rule: every slice later than ``t0``
    carries weight ``dt``; a slice sitting at ``t0`` (initial datum) carries
    none.
    """

    times: np.ndarray
    slices: tuple
    t0: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        slices = tuple(self.slices)
        if times.ndim != 1 or len(times) != len(slices):
            raise ValueError("times and slices must have equal length")
        if len(times) > 1:
            steps = np.diff(times)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(steps[0], 1e-300):
                raise ValueError("time grid must be uniform and increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "slices", slices)

    @property
    def dt(self) -> float:
        if len(self.times) > 1:
            return float(self.times[1] - self.times[0])
        return float(self.times[0] - self.t0)

    def weights(self) -> np.ndarray:
        tol = 1e-12 * max(abs(self.dt), 1.0)
        return np.where(self.times > self.t0 + tol, self.dt, 0.0)

    def __len__(self):
        return len(self.slices)

    def map(self, fun) -> "SpaceTimeField":
        return SpaceTimeField(self.times, [fun(s) for s in self.slices], self.t0)


# -- finite differences -----------------------------------------------------

@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], order: int) -> np.ndarray:
    """Weights ``w`` with ``sum w_k g(o_k) ~ g^(order)(0)`` on unit spacing."""
    o = np.asarray(offsets, dtype=float)
    m = len(o)
    if order >= m:
        raise ValueError("stencil too small for the derivative order")
    V = np.vander(o, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = np.prod(np.arange(1, order + 1))
    w = np.linalg.solve(V, rhs)
    w[np.abs(w) < 1e-13 * np.abs(w).max()] = 0.0
    return w


def central_offsets(order: int, accuracy: int) -> tuple[int, ...]:
    half = (order + 1) // 2 - 1 + accuracy // 2
    return tuple(range(-half, half + 1))


def _slab(a, axis, start, stop):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def derivative(a: np.ndarray, axis: int, order: int, h: float,
               accuracy: int = 2) -> np.ndarray:
    """Derivative along ``axis``: centered inside, one-sided near the ends.

    The one-sided closures keep the formal accuracy of the interior stencil.
    """
    if order == 0:
        return np.array(a, dtype=float, copy=True)
    n = a.shape[axis]
    central = central_offsets(order, accuracy)
    half = central[-1]
    width = order + accuracy
    if n < max(width, len(central)):
        raise ValueError(f"need at least {max(width, len(central))} points along axis {axis}")
    out = np.zeros_like(a, dtype=float)
    w = fd_weights(central, order)
    inner = _slab(out, axis, half, n - half)
    for o, wk in zip(central, w):
        if wk:
            inner += wk * _slab(a, axis, half + o, n - half + o)
    for i in list(range(half)) + list(range(n - half, n)):
        start = 0 if i < half else n - width
        offs = tuple(j - i for j in range(start, start + width))
        wb = fd_weights(offs, order)
        acc = _slab(out, axis, i, i + 1)
        for o, wk in zip(offs, wb):
            if wk:
                acc += wk * _slab(a, axis, i + o, i + o + 1)
    return out / h ** order


def stencil_table(n: int, order: int, accuracy: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Per-node weights of :func:`derivative` on a line of ``n`` nodes.

    Returns ``(offsets, W)`` with ``W[i, m]`` the unit-spacing weight node ``i``
    gives to node ``i + offsets[m]``.
    """
    central = central_offsets(order, accuracy)
    half = central[-1]
    width = order + accuracy
    if n < max(width, len(central)):
        raise ValueError(f"need at least {max(width, len(central))} points")
    reach = max(half, width - 1)
    offsets = np.arange(-reach, reach + 1)
    W = np.zeros((n, len(offsets)))
    W[half:n - half, np.asarray(central) + reach] = fd_weights(central, order)
    for i in list(range(half)) + list(range(n - half, n)):
        start = 0 if i < half else n - width
        offs = tuple(j - i for j in range(start, start + width))
        W[i, np.asarray(offs) + reach] = fd_weights(offs, order)
    return offsets, W


def derivative_valid(a: np.ndarray, valid: np.ndarray, axis: int, order: int,
                     h: float, accuracy: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Centered derivative restricted to nodes whose stencil is all valid.

    Returns the derivative (zero where invalid) and the shrunk valid mask.
    """
    if order == 0:
        return np.where(valid, a, 0.0), valid.copy()
    offs = central_offsets(order, accuracy)
    w = fd_weights(offs, order)
    half = offs[-1]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (half, half)
    ap = np.pad(np.where(valid, a, 0.0), pad)
    vp = np.pad(valid, pad, constant_values=False)
    n = a.shape[axis]
    out = np.zeros(a.shape, dtype=float)
    ok = np.ones(a.shape, dtype=bool)
    for o, wk in zip(offs, w):
        ok &= _slab(vp, axis, half + o, half + o + n)
        if wk:
            out += wk * _slab(ap, axis, half + o, half + o + n)
    out = np.where(ok, out / h ** order, 0.0)
    return out, ok


def multi_indices(ndim: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices ``alpha`` with ``|alpha| == order``."""
    if ndim == 1:
        return [(order,)]
    out = []
    for first in range(order, -1, -1):
        for rest in multi_indices(ndim - 1, order - first):
            out.append((first,) + rest)
    return out


def tensor_indices(ndim: int, order: int) -> list[tuple[int, ...]]:
    """Ordered index tuples of the full tensor ``nabla^order``, as multi-indices."""
    out = []
    for tup in itertools.product(range(ndim), repeat=order):
        alpha = [0] * ndim
        for i in tup:
            alpha[i] += 1
        out.append(tuple(alpha))
    return out


def apply_multi_index(a: np.ndarray, alpha: Sequence[int], h: float,
                      valid: np.ndarray | None = None, accuracy: int = 2):
    """``D^alpha a``; with ``valid`` given, stencils are shrunk instead of closed."""
    if valid is None:
        out = a
        for axis, m in enumerate(alpha):
            if m:
                out = derivative(out, axis, m, h, accuracy)
        return out
    out, ok = a, valid
    for axis, m in enumerate(alpha):
        if m:
            out, ok = derivative_valid(out, ok, axis, m, h, accuracy)
    return np.where(ok, out, 0.0), ok


def lattice_interp(data: np.ndarray, origin, h: float, points: np.ndarray) -> np.ndarray:
    """Local cubic Lagrange interpolation; stencils slide inward at the edges.

    ``points`` has shape ``(..., ndim)``.  Fourth-order accurate up to the
    lattice boundary, no global prefilter.
    """
    ndim = data.ndim
    shape = np.array(data.shape)
    if np.any(shape < 4):
        raise ValueError("cubic interpolation needs at least 4 nodes per axis")
    s = (points - np.asarray(origin)) / h
    base = np.clip(np.floor(s).astype(int) - 1, 0, shape - 4)
    t = s - base
    weights = []
    for d in range(ndim):
        td = t[..., d]
        weights.append(np.stack([-(td - 1) * (td - 2) * (td - 3) / 6,
                                 td * (td - 2) * (td - 3) / 2,
                                 -td * (td - 1) * (td - 3) / 2,
                                 td * (td - 1) * (td - 2) / 6], axis=-1))
    out = np.zeros(points.shape[:-1])
    for corner in itertools.product(range(4), repeat=ndim):
        w = np.ones(points.shape[:-1])
        idx = []
        for d, c in enumerate(corner):
            w = w * weights[d][..., c]
            idx.append(base[..., d] + c)
        out += w * data[tuple(idx)]
    return out
