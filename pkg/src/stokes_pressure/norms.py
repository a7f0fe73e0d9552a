"""Discrete Sobolev and mixed Bochner norms.

Derivatives use centered stencils (fourth order by default) and are only
counted at cells whose whole stencil lies in the field's defined region;
integrals are midpoint sums ``h^n * sum(...)`` over the integration mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .grids import GridField, SpaceTimeField, apply_multi_index, multi_indices, tensor_indices

FieldLike = Union[GridField, Sequence[GridField]]


@dataclass(frozen=True)
class NormSpec:
    """Selects ``L^s(0, T; W^{k,q})``; ``s`` may be ``math.inf``."""

    s: float
    q: float
    k: int = 0

    def __post_init__(self):
        if not (self.s > 1 or math.isinf(self.s)):
            raise ValueError("time exponent s must exceed 1 (or be inf)")
        if not (1 < self.q < math.inf):
            raise ValueError("space exponent q must lie in (1, inf)")
        if int(self.k) != self.k or self.k < 0:
            raise ValueError("derivative order k must be a nonnegative integer")


def _scalars(field: FieldLike) -> list[GridField]:
    if isinstance(field, GridField):
        return field.components()
    out = []
    for f in field:
        out.extend(f.components())
    return out


def _region(f: GridField, mask):
    if mask is None:
        return f.domain
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != f.grid_shape:
        raise ValueError("integration mask does not match the grid")
    return mask


def _power_sums(field: FieldLike, q: float, alphas, mask, accuracy: int) -> float:
    """``sum_alpha sum_cells |D^alpha f|^q h^n`` over all scalar components."""
    total = 0.0
    for f in _scalars(field):
        region = _region(f, mask if isinstance(field, GridField) else None)
        cell = f.spacing ** f.ndim
        for alpha in alphas:
            if sum(alpha) == 0:
                vals, ok = f.data, f.domain
            else:
                vals, ok = apply_multi_index(f.data, alpha, f.spacing, f.domain, accuracy)
            use = ok & region
            if sum(alpha) > 0 and not use.any() and region.any():
                raise ValueError(f"no cells left for derivative {alpha}; "
                                 "grid too small for the stencil")
            total += cell * float(np.sum(np.abs(vals[use]) ** q))
    return total


def sobolev_norm(field: FieldLike, q: float, k: int, mask=None, accuracy: int = 4) -> float:
    """``(sum_{|alpha| <= k} ||D^alpha f||_q^q)^(1/q)``."""
    fields = _scalars(field)
    alphas = [a for m in range(k + 1) for a in multi_indices(fields[0].ndim, m)]
    return _power_sums(field, q, alphas, mask, accuracy) ** (1.0 / q)


def seminorm(field: FieldLike, q: float, order: int, mask=None, accuracy: int = 4) -> float:
    """``|| nabla^order f ||_q`` over the full tensor of ordered index tuples."""
    fields = _scalars(field)
    alphas = tensor_indices(fields[0].ndim, order)
    return _power_sums(field, q, alphas, mask, accuracy) ** (1.0 / q)


def time_norm(values: Sequence[float], weights: Sequence[float], s: float) -> float:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if math.isinf(s):
        used = values[weights > 0]
        return float(used.max()) if used.size else 0.0
    return float(np.sum(weights * values ** s) ** (1.0 / s))


def bochner_norm(field: SpaceTimeField, spec: NormSpec, mask=None, accuracy: int = 4) -> float:
    """``(dt sum_t ||f(t)||_{W^{k,q}}^s)^(1/s)``, or the max slice norm for ``s = inf``."""
    vals = [sobolev_norm(sl, spec.q, spec.k, mask, accuracy) for sl in field.slices]
    return time_norm(vals, field.weights(), spec.s)


def mean_value(field: GridField, region=None) -> float:
    """Cell-volume-weighted average over ``region`` (default: the field's domain)."""
    region = _region(field, region)
    if not region.any():
        raise ValueError("mean over an empty region")
    if field.rank:
        raise ValueError("mean_value expects a scalar field")
    return float(np.mean(field.data[region]))


def estimate_ratio(p: SpaceTimeField, f: SpaceTimeField, spec: NormSpec,
                   p_mask=None, f_mask=None, accuracy: int = 4) -> float:
    """``||nabla^{k+1} p||_{L^s L^q} / ||f||_{L^s W^{k,q}}``."""
    den = bochner_norm(f, spec, f_mask, accuracy)
    if not den > 0:
        raise ValueError("forcing norm vanishes; ratio undefined")
    vals = [seminorm(sl, spec.q, spec.k + 1, p_mask, accuracy) for sl in p.slices]
    return time_norm(vals, p.weights(), spec.s) / den
