"""Extension to a periodic box and the spectral Helmholtz-Leray projection.

Whole space is approximated by a periodic box several times larger than the
physical domain.  On the box the projection acts mode by mode as the
orthogonal matrix ``I - xi xi^T / |xi|^2``.  Nyquist wavenumbers are given
``xi = 0`` along their axis, so that the discrete projector commutes with
complex conjugation and the projected field stays exactly real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import smooth_step
from .grids import GridField, SpaceTimeField
from .norms import sobolev_norm


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Vector samples ``data[c, i_1, ..., i_n]`` on a periodic box grid."""

    data: np.ndarray
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim < 3:
            raise ValueError("data must have shape (ncomp, *resolution) with n >= 2")
        if min(data.shape[1:]) < 4:
            raise ValueError("resolution must be at least 4 per axis")
        if not np.all(np.isfinite(data)):
            raise ValueError("periodic field has non-finite samples")
        origin = np.asarray(self.origin, dtype=float)
        if origin.shape != (data.ndim - 1,):
            raise ValueError("origin has wrong dimension")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def ndim(self) -> int:
        return self.data.ndim - 1

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def edge(self) -> np.ndarray:
        """Box edge lengths ``L`` per axis."""
        return self.spacing * np.array(self.resolution)

    def with_data(self, data) -> "PeriodicField":
        return PeriodicField(data, self.origin, self.spacing)

    def to_grid(self) -> GridField:
        if self.data.shape[0] == 1:
            return GridField(self.data[0], self.origin, self.spacing)
        return GridField(self.data, self.origin, self.spacing, rank=1)

    def inner(self, other: "PeriodicField") -> float:
        return float(np.sum(self.data * other.data)) * self.spacing ** self.ndim

    def norm(self) -> float:
        return math.sqrt(self.inner(self))


def box_for(v: GridField, factor: float = 4.0, ncomp: int | None = None) -> PeriodicField:
    """Zero template of a box with edge ``factor`` times the mask diameter.

    The box shares ``v``'s spacing and node alignment and is centered on the
    mask.  Resolutions are rounded up to even numbers.
    """
    idx = np.argwhere(v.domain)
    if idx.size == 0:
        raise ValueError("empty mask")
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    h = v.spacing
    diam = h * float(np.linalg.norm(hi - lo + 1))
    n = int(math.ceil(factor * diam / h))
    n += n % 2
    center_idx = (lo + hi) // 2
    start = center_idx - n // 2
    origin = v.origin + h * start
    ncomp = ncomp if ncomp is not None else (v.data.shape[0] if v.rank else 1)
    return PeriodicField(np.zeros((ncomp,) + (n,) * v.ndim), origin, h)


def _offset(v: GridField, box: PeriodicField) -> np.ndarray:
    if not math.isclose(v.spacing, box.spacing, rel_tol=1e-12):
        raise ValueError("field and box spacings differ")
    off = (v.origin - box.origin) / box.spacing
    ioff = np.rint(off).astype(int)
    if np.any(np.abs(off - ioff) > 1e-6):
        raise ValueError("field grid is not aligned with the box grid")
    if np.any(ioff < 0) or np.any(ioff + np.array(v.grid_shape) > np.array(box.resolution)):
        raise ValueError("field grid does not fit inside the box")
    return ioff


def _slices(ioff, shape):
    return tuple(slice(o, o + m) for o, m in zip(ioff, shape))


def default_collar(v: GridField) -> float:
    idx = np.argwhere(v.domain)
    return 0.5 * v.spacing * float(np.max(idx.max(axis=0) - idx.min(axis=0) + 1))


def extend(v: GridField, box: PeriodicField, collar: float | None = None,
           fill: str = "nearest") -> PeriodicField:
    """Smooth extension ``E v = chi * v~`` onto the periodic box.

    ``chi`` equals 1 on the mask and decays to 0 across a collar of width
    ``collar`` (distance to the nearest mask node).  ``v~`` agrees with ``v``
    on the mask; outside it takes the value at the nearest mask node
    (``fill="nearest"``) or ``v``'s own samples (``fill="samples"``, for
    fields known beyond the mask, e.g. closed forms; ``v``'s grid must then
    cover the collar).
    """
    if fill not in ("nearest", "samples"):
        raise ValueError("fill must be 'nearest' or 'samples'")
    collar = default_collar(v) if collar is None else float(collar)
    if not collar > 0:
        raise ValueError("collar width must be positive")
    ioff = _offset(v, box)
    sl = _slices(ioff, v.grid_shape)
    res = box.resolution
    mask = np.zeros(res, dtype=bool)
    mask[sl] = v.domain
    dist, nearest = ndimage.distance_transform_edt(~mask, return_indices=True)
    dist = dist * box.spacing
    chi = smooth_step((collar - dist) / collar)
    reach = dist < collar
    edges = np.zeros(res, dtype=bool)
    for d in range(len(res)):
        idx = [slice(None)] * len(res)
        idx[d] = 0
        edges[tuple(idx)] = True
        idx[d] = -1
        edges[tuple(idx)] = True
    if np.any(reach & edges):
        raise ValueError("mask plus collar touches the box boundary; enlarge the box")
    comps = v.data[None] if v.rank == 0 else v.data
    out = np.zeros((comps.shape[0],) + tuple(res))
    for c, comp in enumerate(comps):
        full = np.zeros(res)
        full[sl] = comp
        if fill == "nearest":
            vt = full[tuple(nearest)]
        else:
            covered = np.zeros(res, dtype=bool)
            covered[sl] = True
            if np.any(reach & ~covered):
                raise ValueError("fill='samples' needs the field's grid to cover the collar")
            vt = full
        out[c] = np.where(mask, full, chi * vt)
    return box.with_data(out)


def restrict(w: PeriodicField, like: GridField) -> GridField:
    """Samples of ``w`` on the nodes of ``like``'s grid (mask carried over)."""
    sl = _slices(_offset(like, w), like.grid_shape)
    data = w.data[(slice(None),) + sl]
    if data.shape[0] == 1 and like.rank == 0:
        return GridField(data[0], like.origin, like.spacing, like.mask)
    return GridField(data, like.origin, like.spacing, like.mask, rank=1)


# -- spectral operators ------------------------------------------------------

def wavenumbers(res, h) -> list[np.ndarray]:
    """Broadcastable angular wavenumbers for ``rfftn``; Nyquist entries set to 0."""
    n = len(res)
    out = []
    for d, m in enumerate(res):
        k = 2 * np.pi * (np.fft.rfftfreq(m, h) if d == n - 1 else np.fft.fftfreq(m, h))
        if m % 2 == 0:
            k[m // 2 if d < n - 1 else -1] = 0.0
        shape = [1] * n
        shape[d] = len(k)
        out.append(k.reshape(shape))
    return out


def _forward(w: PeriodicField):
    axes = tuple(range(1, w.data.ndim))
    return np.fft.rfftn(w.data, axes=axes)


def _backward(vh, w: PeriodicField):
    axes = tuple(range(1, w.data.ndim))
    return np.fft.irfftn(vh, s=w.resolution, axes=axes)


def _xi_terms(w: PeriodicField):
    xi = wavenumbers(w.resolution, w.spacing)
    k2 = sum(x * x for x in xi)
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    return xi, inv


def _gradient_hat(vh, xi, inv):
    dot = sum(x * vh[d] for d, x in enumerate(xi))
    return np.stack([x * dot * inv for x in xi])


def leray_project(v: PeriodicField) -> PeriodicField:
    """``P v``: ``v^(xi) -> (I - xi xi^T/|xi|^2) v^(xi)``; the zero mode is untouched."""
    if v.data.shape[0] != v.ndim:
        raise ValueError("Leray projection needs an n-component vector field")
    vh = _forward(v)
    xi, inv = _xi_terms(v)
    return v.with_data(_backward(vh - _gradient_hat(vh, xi, inv), v))


def gradient_part(v: PeriodicField) -> PeriodicField:
    """``(I - P) v = grad(Delta^-1 div v)``."""
    if v.data.shape[0] != v.ndim:
        raise ValueError("gradient part needs an n-component vector field")
    vh = _forward(v)
    xi, inv = _xi_terms(v)
    return v.with_data(_backward(_gradient_hat(vh, xi, inv), v))


def potential(v: PeriodicField) -> PeriodicField:
    """Scalar ``psi = Delta^-1 div v`` with zero mean, so ``grad psi = (I - P) v``."""
    vh = _forward(v)
    xi, inv = _xi_terms(v)
    dot = sum(x * vh[d] for d, x in enumerate(xi))
    psi_h = -1j * dot * inv
    return v.with_data(_backward(psi_h[None], v))


def spectral_gradient(psi: PeriodicField) -> PeriodicField:
    ph = _forward(psi)[0]
    xi = wavenumbers(psi.resolution, psi.spacing)
    return psi.with_data(_backward(np.stack([1j * x * ph for x in xi]), psi))


def spectral_divergence(v: PeriodicField) -> np.ndarray:
    """Fourier coefficients of ``div v`` (normalized by the mode count)."""
    vh = _forward(v)
    xi = wavenumbers(v.resolution, v.spacing)
    return sum(1j * x * vh[d] for d, x in enumerate(xi)) / np.prod(v.resolution)


def spectral_curl(v: PeriodicField) -> np.ndarray:
    """Fourier coefficients of the antisymmetric gradient ``d_i v_j - d_j v_i``."""
    vh = _forward(v)
    xi = wavenumbers(v.resolution, v.spacing)
    n = v.ndim
    out = [1j * (xi[i] * vh[j] - xi[j] * vh[i]) for i in range(n) for j in range(i + 1, n)]
    return np.stack(out) / np.prod(v.resolution)


def sample_shifted(w: PeriodicField, shift) -> PeriodicField:
    """Trigonometric interpolant of ``w`` evaluated at ``x + shift`` on every node."""
    xi = wavenumbers(w.resolution, w.spacing)
    phase = np.exp(1j * sum(x * s for x, s in zip(xi, np.asarray(shift, float))))
    return w.with_data(_backward(_forward(w) * phase, w))


def amplification(v: GridField, k: int = 0, q: float = 2.0, box: PeriodicField | None = None,
                  collar: float | None = None, fill: str = "nearest") -> float:
    """``(||P E v||_{W^{k,q}} + ||(I - P) E v||_{W^{k,q}}) / ||v||_{W^{k,q}(mask)}``.

    The numerator is taken over the whole box.
    """
    if v.rank != 1:
        raise ValueError("amplification needs a vector field")
    den = sobolev_norm(v, q, k)
    if not den > 0:
        raise ValueError("zero field: amplification undefined")
    box = box if box is not None else box_for(v)
    Ev = extend(v, box, collar, fill)
    num = sobolev_norm(leray_project(Ev).to_grid(), q, k) + sobolev_norm(gradient_part(Ev).to_grid(), q, k)
    return num / den


def amplification_probe(family, k: int = 0, q: float = 2.0, factor: float = 4.0,
                        collar: float | None = None, fill: str = "nearest") -> float:
    """Largest :func:`amplification` over a family of vector fields."""
    members = [v for v in family if np.any(v.data)]
    if not members:
        raise ValueError("family has no nonzero fields")
    return max(amplification(v, k, q, box_for(v, factor), collar, fill) for v in members)


# -- reduction of the forcing ------------------------------------------------

def reduce_slice(f: GridField, box: PeriodicField | None = None, collar: float | None = None,
                 fill: str = "nearest") -> tuple[PeriodicField, PeriodicField]:
    """``(P E f, -Delta^-1 div E f)`` on the box."""
    if f.rank != 1 or f.data.shape[0] != f.ndim:
        raise ValueError("forcing must be an n-component vector field")
    box = box if box is not None else box_for(f)
    Ef = extend(f, box, collar, fill)
    psi = potential(Ef)
    return leray_project(Ef), psi.with_data(-psi.data)


def reduce_problem(f: SpaceTimeField, box: PeriodicField | None = None,
                   collar: float | None = None, fill: str = "nearest"
                   ) -> tuple[SpaceTimeField, SpaceTimeField]:
    """Split ``f = f_sol + grad(-shift)`` on the domain, slice by slice.

    ``f_sol`` is the restriction of ``P E f`` (divergence-free), ``shift`` that
    of ``-Delta^-1 div E f``, so ``f = f_sol - grad(shift)``.  The pressure of
    the problem forced by ``f`` is that of ``f_sol`` minus ``shift``.
    """
    sols, shifts = [], []
    for sl in f.slices:
        b = box if box is not None else box_for(sl)
        Pf, sh = reduce_slice(sl, b, collar, fill)
        sols.append(restrict(Pf, sl))
        shifts.append(restrict(sh, sl.with_data(sl.data[0], rank=0)))
    return SpaceTimeField(f.times, sols, f.t0), SpaceTimeField(f.times, shifts, f.t0)
