"""Forcing families: seeded trigonometric sums, bump pairs and closed forms.

Spatial callables take points ``x`` of shape ``(n, ...)`` and return arrays
of shape ``(n, ...)`` (vector) or ``x.shape[1:]`` (scalar).  Space-time
callables take ``(x, t)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

from ..bogovskii import BumpFunction
from .config import ConfigError

SPACE = sp.symbols("x y z", real=True)
TIME = sp.Symbol("t", real=True)

# closed forms in x, y (z), t; vector entries are separated by ';'
NAMED = {
    # curl of a non-separable stream function: divergence-free, not a Stokes eigenmode
    "vortex": "diff(phi, y); -diff(phi, x)",
    # a pure gradient: the projected part vanishes
    "gradient": "diff(g, x); diff(g, y)",
    "shear": "sin(pi*y)*(1 + t); 0",
}
NAMED_DEFS = {
    "phi": "exp(x*y/2)*sin(2*x + 1)*cos(3*y)*(1 + t)",
    "g": "cos(pi*x)*sin(2*y)*(1 + t)",
}


@dataclass(frozen=True)
class TrigSum:
    """``sum_m a_m cos(pi m.x) + b_m sin(pi m.x)`` per component."""

    modes: tuple
    coefficients: np.ndarray  # (ncomp, len(modes), 2)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.coefficients.shape[0],) + x.shape[1:])
        for j, m in enumerate(self.modes):
            ph = np.pi * sum(mi * xi for mi, xi in zip(m, x))
            c, s = np.cos(ph), np.sin(ph)
            for comp in range(out.shape[0]):
                a, b = self.coefficients[comp, j]
                out[comp] += a * c + b * s
        return out

    def scaled(self, factor: float) -> "TrigSum":
        return TrigSum(self.modes, factor * self.coefficients)


def bandlimited_family(dim: int, members: int, modes: int, seed: int,
                       ncomp: int | None = None) -> list[TrigSum]:
    """Trigonometric sums over nonzero modes ``m in {0..modes}^dim``, standard normal coefficients."""
    ms = tuple(m for m in itertools.product(range(modes + 1), repeat=dim) if any(m))
    rng = np.random.default_rng(seed)
    ncomp = dim if ncomp is None else ncomp
    return [TrigSum(ms, rng.standard_normal((ncomp, len(ms), 2))) for _ in range(members)]


@dataclass(frozen=True)
class BumpPair:
    """``a * (phi(x - c1) - phi(x - c2))`` with equal unnormalized bumps: zero mean."""

    first: BumpFunction
    second: BumpFunction
    amplitude: float = 1.0

    def __call__(self, x) -> np.ndarray:
        X = np.moveaxis(np.asarray(x, dtype=float), 0, -1)
        return self.amplitude * (self.first.value(X) - self.second.value(X))


def two_bump_family(dim: int, members: int, seed: int, domain_radius: float) -> list[BumpPair]:
    """Seeded bump pairs inside the ball of radius ``domain_radius`` about the origin."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(members):
        a = domain_radius * rng.uniform(0.4, 0.5)
        reach = domain_radius - a
        c = []
        for _ in range(2):
            d = rng.standard_normal(dim)
            d /= np.linalg.norm(d)
            c.append(tuple(d * reach * rng.uniform(0.2, 0.8)))
        amp = rng.uniform(0.5, 2.0)
        out.append(BumpPair(BumpFunction(dim, a, c[0], normalized=False),
                            BumpFunction(dim, a, c[1], normalized=False), amp))
    return out


def parse_expression(text: str, dim: int) -> list[sp.Expr]:
    """Components of a ``;``-separated closed form in ``x, y[, z], t``."""
    names = {str(s): s for s in SPACE[:dim]}
    names["t"] = TIME
    local = dict(names)
    for key, body in NAMED_DEFS.items():
        local[key] = sp.sympify(body, locals=names)
    parts = [p.strip() for p in text.split(";")]
    if len(parts) != dim or not all(parts):
        raise ConfigError(f"forcing expression needs {dim} components separated by ';'")
    allowed = set(SPACE[:dim]) | {TIME}
    out = []
    for p in parts:
        try:
            e = sp.sympify(p, locals=local)
        except (sp.SympifyError, SyntaxError, TypeError) as exc:
            raise ConfigError(f"cannot parse forcing component {p!r}: {exc}") from exc
        e = sp.simplify(e.doit()) if e.has(sp.Derivative) else e
        extra = e.free_symbols - allowed
        if extra:
            raise ConfigError(f"forcing depends on unknown symbols {sorted(map(str, extra))}")
        out.append(e)
    return out


def named_expression(name: str) -> str:
    try:
        return NAMED[name]
    except KeyError:
        raise ConfigError(f"unknown named forcing {name!r}; choose from {sorted(NAMED)}") from None


def lambdify_vector(exprs, dim: int) -> Callable:
    """``f(x, t)`` returning the list of components, each broadcast to the point shape."""
    fns = [sp.lambdify((*SPACE[:dim], TIME), e, "numpy") for e in exprs]

    def f(x, t):
        x = np.asarray(x, dtype=float)
        return [np.asarray(fn(*x, t), dtype=float) + np.zeros(x.shape[1:]) for fn in fns]
    return f


def expression_forcing(text: str, dim: int) -> Callable:
    return lambdify_vector(parse_expression(text, dim), dim)


def is_zero_family(samples) -> bool:
    """True when every sampled member vanishes identically."""
    return not any(np.any(m) for m in samples)
