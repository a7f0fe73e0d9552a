"""Bogovskii operator on grid fields.

``B_phi f(x) = int f(x - y) K_phi(x, y) dy`` with

    K_phi(x, y) = y / |y|^n  int_0^inf phi(x + r y/|y|) (|y| + r)^(n-1) dr.

For ``f`` supported in a domain star-shaped with respect to the support of
``phi``, ``div B_phi f = f - phi * int f`` and ``B_phi f`` vanishes outside
the domain.  Two quadratures are provided: a polar scheme that removes the
kernel singularity analytically (default), and a direct lattice sum with
local subdivision of the singular cell, used as a coarse cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from ..geometry import StarDomain
from ..grids import GridField, derivative
from ..norms import seminorm
from . import _quadrature
from .bump import BumpFunction


@dataclass(frozen=True)
class BogovskiiConfig:
    """Quadrature parameters.

    ``radial_order``: Gauss-Legendre nodes on the bump chord (the r-integral).
    ``angular_order``: directions in 2D.  ``polar_order``/``azimuth_order``:
    directions in 3D.  ``panel_order``: Gauss nodes per grid-spacing panel along
    each ray.  ``epsilon``: singular radius of the lattice method (default: one
    grid spacing).
    """

    radial_order: int = 32
    angular_order: int = 64
    polar_order: int = 12
    azimuth_order: int = 24
    panel_order: int = 2
    epsilon: float | None = None
    method: str = "polar"

    def __post_init__(self):
        for name in ("radial_order", "angular_order", "polar_order", "azimuth_order",
                     "panel_order"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.method not in ("polar", "lattice"):
            raise ValueError("method must be 'polar' or 'lattice'")

    def refined(self, factor: int = 2) -> "BogovskiiConfig":
        return replace(self, angular_order=self.angular_order * factor,
                       polar_order=self.polar_order * factor,
                       azimuth_order=self.azimuth_order * factor)


DEFAULT_CONFIG = BogovskiiConfig()


def _chord(phi: BumpFunction, x, e):
    z = x - np.asarray(phi.center)
    b = np.sum(z * e, axis=-1)
    disc = b * b - (np.sum(z * z, axis=-1) - phi.radius ** 2)
    sq = np.sqrt(np.maximum(disc, 0.0))
    r1 = np.where(disc > 0, np.maximum(-b - sq, 0.0), 0.0)
    r2 = np.where(disc > 0, np.maximum(-b + sq, 0.0), 0.0)
    return r1, r2


def eval_kernel(phi: BumpFunction, x, y, cfg: BogovskiiConfig | None = None) -> np.ndarray:
    """``K_phi(x, y)`` for points ``x`` and offsets ``y`` of shape ``(..., n)``."""
    cfg = cfg or DEFAULT_CONFIG
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    n = phi.dim
    ny = np.linalg.norm(y, axis=-1)
    if np.any(ny == 0):
        raise ValueError("kernel is singular at y = 0")
    e = y / ny[..., None]
    r1, r2 = _chord(phi, x, e)
    gx, gw = leggauss(cfg.radial_order)
    half = 0.5 * (r2 - r1)
    r = 0.5 * (r2 + r1)[..., None] + half[..., None] * gx
    vals = phi.value(x[..., None, :] + r[..., None] * e[..., None, :]) * (ny[..., None] + r) ** (n - 1)
    scalar = half * np.sum(gw * vals, axis=-1) / ny ** n
    return scalar[..., None] * y


def _check_field(f: GridField):
    if f.rank != 0:
        raise ValueError("Bogovskii operator acts on scalar fields")
    if f.ndim not in (2, 3):
        raise ValueError("only n = 2 and n = 3 are supported")
    if min(f.grid_shape) < 4:
        raise ValueError("grid needs at least 4 points per axis")
    if f.mask is not None and np.any(f.data[~f.mask] != 0):
        raise ValueError("f is not supported inside the domain mask")


def _support_box(f: GridField):
    nz = np.argwhere(f.data != 0)
    lo = np.maximum(nz.min(axis=0) - 2, 0)
    hi = np.minimum(nz.max(axis=0) + 2, np.array(f.grid_shape) - 1)
    return f.origin + f.spacing * lo, f.origin + f.spacing * hi


def _target_mask(f: GridField, targets) -> np.ndarray:
    if targets is None:
        return f.domain
    if isinstance(targets, str):
        if targets != "all":
            raise ValueError("targets must be None, 'all' or a boolean mask")
        return np.ones(f.grid_shape, dtype=bool)
    targets = np.asarray(targets, dtype=bool)
    if targets.shape != f.grid_shape:
        raise ValueError("target mask does not match the grid")
    return targets


def apply_bogovskii(phi: BumpFunction, f: GridField, cfg: BogovskiiConfig | None = None,
                    targets=None) -> GridField:
    """``B_phi f`` sampled on ``f``'s grid.

    Values are computed at ``targets`` (default: the nodes of ``f.mask``) and
    are zero elsewhere.  ``targets="all"`` evaluates every node.
    """
    cfg = cfg or DEFAULT_CONFIG
    _check_field(f)
    if phi.dim != f.ndim:
        raise ValueError("bump and field dimensions differ")
    n = f.ndim
    out = np.zeros((n,) + f.grid_shape)
    tmask = _target_mask(f, targets)
    if not np.any(f.data) or not tmask.any():
        return GridField(out, f.origin, f.spacing, f.mask, rank=1)
    pts = np.moveaxis(f.coords(), 0, -1)[tmask]
    if cfg.method == "lattice":
        vals = _lattice_apply(phi, f, pts, cfg)
    else:
        vals = _polar_apply(phi, f, pts, cfg)
    for d in range(n):
        out[d][tmask] = vals[:, d]
    return GridField(out, f.origin, f.spacing, f.mask, rank=1)


def _polar_apply(phi, f, pts, cfg):
    lo, hi = _support_box(f)
    rx, rw = leggauss(cfg.radial_order)
    px, pw = leggauss(cfg.panel_order)
    args = (np.ascontiguousarray(f.data), f.origin, f.spacing, np.ascontiguousarray(pts),
            lo, hi, np.asarray(phi.center), float(phi.radius), float(phi.const),
            int(phi.kernel_axis), rx, rw, px, pw)
    if f.ndim == 2:
        ax, aw = leggauss(cfg.angular_order)
        return _quadrature.polar_apply2(*args, ax, aw)
    mx, mw = leggauss(cfg.polar_order)
    return _quadrature.polar_apply3(*args, mx, mw, int(cfg.azimuth_order))


def _lattice_apply(phi, f, pts, cfg, chunk: int = 32):
    h = f.spacing
    n = f.ndim
    eps = cfg.epsilon if cfg.epsilon is not None else h
    X = np.moveaxis(f.coords(), 0, -1)
    nz = f.data != 0
    src, fs = X[nz], f.data[nz]
    sub = (np.arange(4) + 0.5) / 4 - 0.5
    sub = np.stack(np.meshgrid(*[sub] * n, indexing="ij"), axis=-1).reshape(-1, n) * h
    out = np.zeros((len(pts), n))
    for start in range(0, len(pts), chunk):
        x = pts[start:start + chunk]
        y = x[:, None, :] - src[None, :, :]
        dist = np.linalg.norm(y, axis=-1)
        regular = dist >= eps
        xb = np.broadcast_to(x[:, None, :], y.shape)
        K = np.zeros(y.shape)
        K[regular] = eval_kernel(phi, xb[regular], y[regular], cfg)
        acc = np.einsum("ts,tsd->td", np.where(regular, fs, 0.0), K) * h ** n
        ti, si = np.nonzero(~regular)
        if len(ti):
            ys = y[ti, si][:, None, :] + sub[None, :, :]
            Ks = eval_kernel(phi, np.broadcast_to(x[ti][:, None, :], ys.shape), ys, cfg)
            contrib = fs[si][:, None] * Ks.sum(axis=1) * (h / 4) ** n
            np.add.at(acc, ti, contrib)
        out[start:start + chunk] = acc
    return out


# -- scaled operator -----------------------------------------------------------

def scaled_bump(dim: int) -> BumpFunction:
    """The normalized bump on the unit ball used by the scaled operator."""
    return BumpFunction(dim, 1.0)


def apply_scaled(dom: StarDomain, f: GridField, cfg: BogovskiiConfig | None = None,
                 phi: BumpFunction | None = None, targets=None) -> GridField:
    """``B f(x) = R B_phi(f~)((x - x0)/R)`` with ``R = R_i/2`` and ``f~(y) = f(x0 + R y)``.

    ``x0`` is the center of the ball the domain is star-shaped about; ``phi``
    defaults to the normalized unit bump.
    """
    if dom.dim != f.ndim:
        raise ValueError("domain and field dimensions differ")
    phi = phi or scaled_bump(dom.dim)
    R = 0.5 * dom.inner_radius()
    x0 = dom.star_center
    ft = GridField(f.data, (f.origin - x0) / R, f.spacing / R, f.mask)
    v = apply_bogovskii(phi, ft, cfg, targets)
    return GridField(R * v.data, f.origin, f.spacing, f.mask, rank=1)


def divergence(v: GridField, accuracy: int = 4) -> np.ndarray:
    return sum(derivative(v.data[d], d, 1, v.spacing, accuracy) for d in range(v.ndim))


def _interior(shape):
    m = np.zeros(shape, dtype=bool)
    m[tuple(slice(1, -1) for _ in shape)] = True
    return m


def divergence_residual(v: GridField, f: GridField, phi: BumpFunction | None,
                        dom: StarDomain, accuracy: int = 4) -> float:
    """Relative L2 norm of ``div v - [f - phi((x - x0)/R) R^-n int f]``.

    Centered differences of order ``accuracy``; evaluated at interior grid
    nodes inside ``dom``.
    """
    if min(f.grid_shape) < 4:
        raise ValueError("grid too coarse for centered differences (need 4 points per axis)")
    n = f.ndim
    phi = phi or scaled_bump(n)
    R = 0.5 * dom.inner_radius()
    x0 = dom.star_center
    X = np.moveaxis(f.coords(), 0, -1)
    region = _interior(f.grid_shape) & dom.contains(X)
    total = float(np.sum(f.data)) * f.spacing ** n
    target = f.data - phi.value((X - x0) / R) * R ** (-n) * total
    fnorm = np.linalg.norm(f.data[region])
    if fnorm == 0:
        return 0.0
    return float(np.linalg.norm((divergence(v, accuracy) - target)[region]) / fnorm)


def commutator_residual(phi: BumpFunction, f: GridField, i: int, j: int,
                        cfg: BogovskiiConfig | None = None, targets=None) -> float:
    """Relative residual of ``d_j B(d_i f) - d_i B(d_j f) - d_i B_{d_j phi} f + d_j B_{d_i phi} f``.

    Axes are zero-based.  The denominator is the sum of the four term norms.
    """
    if i == j:
        raise ValueError("commutator identity needs distinct axes i != j")
    n = f.ndim
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError("axis index out of range")
    h = f.spacing

    def B(p, g):
        return apply_bogovskii(p, g, cfg, targets).data

    # derivatives of f vanish outside its support; drop one-sided stencil spill
    fi = f.with_data(np.where(f.domain, derivative(f.data, i, 1, h), 0.0))
    fj = f.with_data(np.where(f.domain, derivative(f.data, j, 1, h), 0.0))
    # component axis comes first, so spatial axis a is array axis a + 1
    t1 = derivative(B(phi, fi), j + 1, 1, h)
    t2 = derivative(B(phi, fj), i + 1, 1, h)
    t3 = derivative(B(phi.derivative(j), f), i + 1, 1, h)
    t4 = derivative(B(phi.derivative(i), f), j + 1, 1, h)
    region = _interior(f.grid_shape)
    norms = [np.linalg.norm(t[:, region]) for t in (t1, t2, t3, t4)]
    den = sum(norms)
    if den == 0:
        return 0.0
    return float(np.linalg.norm((t1 - t2 - t3 + t4)[:, region]) / den)


def norm_bound_probe(dom: StarDomain, family: Sequence[GridField], k: int = 1, q: float = 2.0,
                     cfg: BogovskiiConfig | None = None) -> float:
    """``max_f ||nabla^k B f||_q / ||nabla^(k-1) f||_q`` over the nonzero members."""
    if k < 1:
        raise ValueError("order k must be at least 1")
    members = [f for f in family if np.any(f.data)]
    if not members:
        raise ValueError("family has no nonzero fields")
    best = 0.0
    for f in members:
        v = apply_scaled(dom, f, cfg)
        vfull = GridField(v.data, v.origin, v.spacing, None, rank=1)
        ffull = GridField(f.data, f.origin, f.spacing, None)
        den = seminorm(ffull, q, k - 1)
        best = max(best, seminorm(vfull, q, k) / den)
    return best
