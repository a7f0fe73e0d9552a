"""Star-shaped domains, boundary charts, the flattening map and cutoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

SHAPES = ("ball", "cube", "box", "ellipsoid", "cylinder", "scaled")


@dataclass(frozen=True)
class StarDomain:
    """A bounded analytic domain, star-shaped with respect to an inscribed ball.

    ``size`` depends on ``shape``:

    * ``ball``: ``(radius,)``
    * ``cube``: ``(side,)``
    * ``box``: half-widths, one per axis
    * ``ellipsoid``: semi-axes, one per axis
    * ``cylinder`` (3D only): ``(radius, half_height)``, axis along the last coordinate
    * ``scaled``: unused; the domain is ``scale * base + center``
    """

    shape: str
    dim: int
    center: tuple = ()
    size: tuple = (1.0,)
    scale: float = 1.0
    base: "StarDomain | None" = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unsupported shape {self.shape!r}; expected one of {SHAPES}")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        center = tuple(float(c) for c in self.center) or (0.0,) * self.dim
        if len(center) != self.dim:
            raise ValueError("center has wrong dimension")
        object.__setattr__(self, "center", center)
        size = tuple(float(s) for s in self.size)
        object.__setattr__(self, "size", size)
        if self.shape == "scaled":
            if self.base is None or self.base.dim != self.dim:
                raise ValueError("scaled wrapper needs a base domain of equal dimension")
            if not self.scale > 0:
                raise ValueError("scale must be positive")
            return
        expected = {"ball": 1, "cube": 1, "box": self.dim, "ellipsoid": self.dim,
                    "cylinder": 2}[self.shape]
        if len(size) != expected or min(size) <= 0:
            raise ValueError(f"{self.shape} needs {expected} positive size value(s)")
        if self.shape == "cylinder" and self.dim != 3:
            raise ValueError("cylinder is three-dimensional")

    # -- constructors ------------------------------------------------------
    @classmethod
    def ball(cls, dim, radius=1.0, center=()):
        return cls("ball", dim, center, (radius,))

    @classmethod
    def cube(cls, dim, side=1.0, center=()):
        return cls("cube", dim, center, (side,))

    @classmethod
    def box(cls, half_widths, center=()):
        return cls("box", len(half_widths), center, tuple(half_widths))

    @classmethod
    def ellipsoid(cls, semi_axes, center=()):
        return cls("ellipsoid", len(semi_axes), center, tuple(semi_axes))

    @classmethod
    def cylinder(cls, radius, half_height, center=()):
        return cls("cylinder", 3, center, (radius, half_height))

    def transformed(self, scale: float, shift=None) -> "StarDomain":
        """The domain ``scale * self + shift``."""
        shift = tuple(np.zeros(self.dim) if shift is None else np.asarray(shift, float))
        return StarDomain("scaled", self.dim, shift, (), float(scale), self)

    # -- radii -------------------------------------------------------------
    def outer_radius(self) -> float:
        """R_a: radius of the smallest enclosing ball."""
        if self.shape == "scaled":
            return self.scale * self.base.outer_radius()
        s = self.size
        if self.shape == "ball":
            return s[0]
        if self.shape == "cube":
            return 0.5 * s[0] * math.sqrt(self.dim)
        if self.shape == "box":
            return math.sqrt(sum(w * w for w in s))
        if self.shape == "ellipsoid":
            return max(s)
        return math.hypot(s[0], s[1])

    def inner_radius(self) -> float:
        """R_i: radius of the largest ball the domain is star-shaped about."""
        if self.shape == "scaled":
            return self.scale * self.base.inner_radius()
        if self.shape == "cube":
            return 0.5 * self.size[0]
        return min(self.size)

    def ratio(self) -> float:
        if self.shape == "scaled":
            return self.base.ratio()
        if self.shape == "ball":
            return 1.0
        if self.shape == "cube":
            return math.sqrt(self.dim)
        return self.outer_radius() / self.inner_radius()

    @property
    def star_center(self) -> np.ndarray:
        if self.shape == "scaled":
            return self.scale * self.base.star_center + np.asarray(self.center)
        return np.asarray(self.center)

    # -- point queries -----------------------------------------------------
    def _to_base(self, x):
        return (x - np.asarray(self.center)) / self.scale

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Membership for points ``x`` of shape ``(..., dim)`` (closed with ``tol``)."""
        x = np.asarray(x, dtype=float)
        if self.shape == "scaled":
            return self.base.contains(self._to_base(x), tol / self.scale)
        z = x - np.asarray(self.center)
        s = self.size
        if self.shape == "ball":
            return np.linalg.norm(z, axis=-1) <= s[0] + tol
        if self.shape == "cube":
            return np.all(np.abs(z) <= 0.5 * s[0] + tol, axis=-1)
        if self.shape == "box":
            return np.all(np.abs(z) <= np.asarray(s) + tol, axis=-1)
        if self.shape == "ellipsoid":
            a = np.asarray(s)
            return np.sum((z / (a + tol)) ** 2, axis=-1) <= 1.0
        return (np.linalg.norm(z[..., :2], axis=-1) <= s[0] + tol) & (np.abs(z[..., 2]) <= s[1] + tol)

    def exit_distance(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Distance ``t >= 0`` at which ``x + t d`` (``|d| = 1``) leaves the domain.

        Points outside return 0.
        """
        x = np.asarray(x, dtype=float)
        d = np.asarray(d, dtype=float)
        if self.shape == "scaled":
            return self.scale * self.base.exit_distance(self._to_base(x), d)
        z = x - np.asarray(self.center)
        s = self.size
        if self.shape in ("cube", "box"):
            w = np.full(self.dim, 0.5 * s[0]) if self.shape == "cube" else np.asarray(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(d > 0, (w - z) / d, np.where(d < 0, (-w - z) / d, np.inf))
            out = np.min(t, axis=-1)
        elif self.shape in ("ball", "ellipsoid"):
            a = np.full(self.dim, s[0]) if self.shape == "ball" else np.asarray(s)
            zz, dd = z / a, d / a
            A = np.sum(dd * dd, axis=-1)
            B = np.sum(zz * dd, axis=-1)
            C = np.sum(zz * zz, axis=-1) - 1.0
            out = (-B + np.sqrt(np.maximum(B * B - A * C, 0.0))) / A
        else:
            zr, dr = z[..., :2], d[..., :2]
            A = np.sum(dr * dr, axis=-1)
            B = np.sum(zr * dr, axis=-1)
            C = np.sum(zr * zr, axis=-1) - s[0] ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                lat = np.where(A > 0, (-B + np.sqrt(np.maximum(B * B - A * C, 0.0))) / A, np.inf)
                dz = d[..., 2]
                cap = np.where(dz > 0, (s[1] - z[..., 2]) / dz,
                               np.where(dz < 0, (-s[1] - z[..., 2]) / dz, np.inf))
            out = np.minimum(lat, cap)
        inside = self.contains(x, tol=1e-12 * self.outer_radius())
        return np.where(inside, np.maximum(out, 0.0), 0.0)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.shape == "scaled":
            lo, hi = self.base.bounding_box()
            c = np.asarray(self.center)
            return self.scale * lo + c, self.scale * hi + c
        c = np.asarray(self.center)
        s = self.size
        if self.shape == "ball":
            w = np.full(self.dim, s[0])
        elif self.shape == "cube":
            w = np.full(self.dim, 0.5 * s[0])
        elif self.shape == "cylinder":
            w = np.array([s[0], s[0], s[1]])
        else:
            w = np.asarray(s)
        return c - w, c + w

    @property
    def diameter(self) -> float:
        return 2.0 * self.outer_radius()


def ratio(dom: StarDomain) -> float:
    """R_a / R_i from closed-form radii."""
    if not isinstance(dom, StarDomain):
        raise TypeError(f"expected a StarDomain, got {type(dom).__name__}")
    return dom.ratio()


# -- boundary charts ---------------------------------------------------------

def _tangential_symbols(dim):
    return sp.symbols(" ".join(f"y{i + 1}" for i in range(dim - 1)), real=True, seq=True)


@dataclass(frozen=True, eq=False)
class BoundaryChart:
    """Graph ``x_n = h(y')`` of the boundary over the tangential ball ``B'_R``.

    Built from a sympy expression in ``y1`` (and ``y2`` in 3D) so that all
    derivatives needed downstream are exact closures.
    """

    dim: int
    radius: float
    expression: str
    order: int = 1
    _fns: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_expression(cls, expression: str, dim: int, radius: float, order: int = 1):
        if dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if radius <= 0:
            raise ValueError("chart radius must be positive")
        ys = _tangential_symbols(dim)
        expr = sp.sympify(expression, locals={str(s): s for s in ys})
        extra = expr.free_symbols - set(ys)
        if extra:
            raise ValueError(f"chart depends on unknown symbols {sorted(map(str, extra))}; "
                             "h may only depend on the tangential coordinates")
        m = len(ys)
        grad = [sp.diff(expr, s) for s in ys]
        hess = [[sp.diff(g, s) for s in ys] for g in grad]
        third = [[[sp.diff(hij, s) for s in ys] for hij in row] for row in hess]
        lap = sum(hess[i][i] for i in range(m))
        grad_lap = [sp.diff(lap, s) for s in ys]
        grad_sq = sum(g * g for g in grad)
        grad_grad_sq = [sp.diff(grad_sq, s) for s in ys]
        lam = lambda e: sp.lambdify(ys, e, "numpy")  # noqa: E731
        fns = {
            "h": lam(expr),
            "grad": [lam(g) for g in grad],
            "hess": [[lam(e) for e in row] for row in hess],
            "third": [[[lam(e) for e in r2] for r2 in r1] for r1 in third],
            "lap": lam(lap),
            "grad_lap": [lam(e) for e in grad_lap],
            "grad_grad_sq": [lam(e) for e in grad_grad_sq],
        }
        return cls(dim, float(radius), str(expr), order, fns)

    @classmethod
    def flat(cls, dim: int, radius: float = 1.0):
        return cls.from_expression("0", dim, radius)

    # -- evaluation --------------------------------------------------------
    def _args(self, y):
        y = np.asarray(y, dtype=float)
        return [y[..., i] for i in range(self.dim - 1)], y.shape[:-1]

    def _call(self, fn, y):
        args, shape = self._args(y)
        return np.asarray(fn(*args), dtype=float) + np.zeros(shape)

    def h(self, y) -> np.ndarray:
        """h at points ``y`` of shape ``(..., n)`` or ``(..., n-1)``."""
        return self._call(self._fns["h"], y)

    def grad(self, y) -> np.ndarray:
        """Tangential gradient, shape ``(..., n-1)``."""
        return np.stack([self._call(f, y) for f in self._fns["grad"]], axis=-1)

    def hessian(self, y) -> np.ndarray:
        return np.stack([np.stack([self._call(f, y) for f in row], axis=-1)
                         for row in self._fns["hess"]], axis=-2)

    def third(self, y) -> np.ndarray:
        m = self.dim - 1
        return np.stack([np.stack([np.stack([self._call(self._fns["third"][i][j][k], y)
                                             for k in range(m)], axis=-1)
                                   for j in range(m)], axis=-2)
                         for i in range(m)], axis=-3)

    def laplacian(self, y) -> np.ndarray:
        return self._call(self._fns["lap"], y)

    def grad_laplacian(self, y) -> np.ndarray:
        return np.stack([self._call(f, y) for f in self._fns["grad_lap"]], axis=-1)

    def grad_grad_sq(self, y) -> np.ndarray:
        """Tangential gradient of ``|grad h|^2``."""
        return np.stack([self._call(f, y) for f in self._fns["grad_grad_sq"]], axis=-1)

    @property
    def is_flat(self) -> bool:
        return sp.sympify(self.expression) == 0

    @property
    def normalized(self) -> bool:
        zero = np.zeros(self.dim - 1)
        return abs(float(self.h(zero))) < 1e-14 and np.all(np.abs(self.grad(zero)) < 1e-14)

    def check_domain(self, y, tol: float = 1e-12) -> np.ndarray:
        """Raise unless every ``y`` lies in the closed patch ``U_R``."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise ValueError(f"points must have {self.dim} coordinates")
        lim = self.radius * (1 + tol)
        tang = np.linalg.norm(y[..., :-1], axis=-1)
        if np.any(tang > lim) or np.any(np.abs(y[..., -1]) > lim):
            raise ValueError("point outside the chart patch U_R")
        return y


def flatten(chart: BoundaryChart, y) -> np.ndarray:
    """Phi(y) = (y', h(y') + y_n)."""
    y = chart.check_domain(y)
    x = np.array(y, dtype=float, copy=True)
    x[..., -1] += chart.h(y)
    return x


def jacobian(chart: BoundaryChart, y) -> np.ndarray:
    """D Phi: identity with last row ``(grad h, 1)``."""
    y = chart.check_domain(y)
    n = chart.dim
    J = np.zeros(y.shape[:-1] + (n, n)) + np.eye(n)
    J[..., -1, :-1] = chart.grad(y)
    return J


def inverse_jacobian(chart: BoundaryChart, y) -> np.ndarray:
    y = chart.check_domain(y)
    n = chart.dim
    J = np.zeros(y.shape[:-1] + (n, n)) + np.eye(n)
    J[..., -1, :-1] = -chart.grad(y)
    return J


def outward_normal(chart: BoundaryChart, yt) -> np.ndarray:
    """Outward unit normal ``(grad h, -1) / sqrt(1 + |grad h|^2)`` at ``y'``."""
    yt = np.asarray(yt, dtype=float)
    g = chart.grad(yt)
    v = np.concatenate([g, -np.ones(g.shape[:-1] + (1,))], axis=-1)
    return v / np.sqrt(1.0 + np.sum(g * g, axis=-1))[..., None]


# -- rho search ----------------------------------------------------------------

RHO_LATTICE = 64
RHO_RATIO = 10.0 ** (-3.0 / RHO_LATTICE)


def rho_lattice(radius: float) -> np.ndarray:
    """Candidate radii ``(R/2) q^j`` for ``j = 1..64``, decreasing."""
    return 0.5 * radius * RHO_RATIO ** np.arange(1, RHO_LATTICE + 1)


def sup_grad(chart: BoundaryChart, r: float, n_dirs: int = 256, n_radial: int = 64) -> float:
    """Sampled ``sup |grad h|`` over the closed tangential ball of radius ``r``."""
    if chart.dim == 2:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = 2 * np.pi * np.arange(n_dirs) / n_dirs
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    radii = np.linspace(0.0, r, n_radial + 1)
    pts = radii[:, None, None] * dirs[None, :, :]
    return float(np.max(np.linalg.norm(chart.grad(pts), axis=-1)))


def find_rho(chart: BoundaryChart, delta: float, n_dirs: int = 256, n_radial: int = 64) -> float:
    """Largest lattice radius with ``sup |grad h| <= delta`` on ``U_{2 rho}``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not chart.normalized:
        raise ValueError("find_rho needs a normalized chart (h(0) = 0, grad h(0) = 0)")
    for rho in rho_lattice(chart.radius):
        if sup_grad(chart, 2 * rho, n_dirs, n_radial) <= delta:
            return float(rho)
    raise ValueError(f"no admissible rho on the lattice for delta={delta}")


# -- smooth steps and cutoffs --------------------------------------------------

def _g(t):
    tt = np.where(t > 0, t, 1.0)
    return np.where(t > 0, np.exp(-1.0 / tt), 0.0)


def smooth_step(t, nu: int = 0):
    """C-infinity ramp ``S(t) = g(t) / (g(t) + g(1-t))`` with ``g(t) = exp(-1/t)``.

    ``S = 0`` for ``t <= 0`` and ``S = 1`` for ``t >= 1``.  ``nu`` selects the
    derivative order (0, 1 or 2).
    """
    t = np.asarray(t, dtype=float)
    a, b = _g(t), _g(1 - t)
    if nu == 0:
        return a / (a + b)
    ta = np.where(t > 0, t, 1.0)
    tb = np.where(1 - t > 0, 1 - t, 1.0)
    a1 = a / ta ** 2
    b1 = -b / tb ** 2
    D = a + b
    N = a1 * b - a * b1
    if nu == 1:
        return N / D ** 2
    if nu != 2:
        raise ValueError("smooth_step supports derivative orders 0, 1, 2")
    a2 = a * (1 / ta ** 4 - 2 / ta ** 3)
    b2 = b * (1 / tb ** 4 - 2 / tb ** 3)
    N1 = a2 * b - a * b2
    D1 = a1 + b1
    return (N1 * D - 2 * N * D1) / D ** 3


@dataclass(frozen=True)
class Cutoff:
    """Radial plateau function ``zeta(y) = chi(|y|)``.

    ``chi = 1`` for ``r <= sqrt(2) rho`` and ``chi = 0`` for ``r >= 2 rho``.
    The plateau covers the cylinder ``U_rho`` (whose points have
    ``|y| < sqrt(2) rho``) and the support lies in the ball of radius ``2 rho``,
    which sits inside ``U_{2 rho}``.
    """

    rho: float

    @property
    def plateau(self) -> float:
        return math.sqrt(2.0) * self.rho

    @property
    def support(self) -> float:
        return 2.0 * self.rho

    def _t(self, r):
        return (self.support - r) / (self.support - self.plateau)

    def profile(self, r, nu: int = 0):
        w = self.support - self.plateau
        return smooth_step(self._t(r), nu) * (-1.0 / w) ** nu

    def value(self, y) -> np.ndarray:
        r = np.linalg.norm(np.asarray(y, dtype=float), axis=-1)
        return self.profile(r)

    def gradient(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1)
        d1 = self.profile(r, 1)
        safe = np.where(r > 0, r, 1.0)
        return (d1 / safe)[..., None] * y

    def hessian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        n = y.shape[-1]
        r = np.linalg.norm(y, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        d1, d2 = self.profile(r, 1), self.profile(r, 2)
        e = y / safe[..., None]
        outer = e[..., :, None] * e[..., None, :]
        eye = np.eye(n)
        return (d2[..., None, None] * outer
                + (d1 / safe)[..., None, None] * (eye - outer))

    def laplacian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        n = y.shape[-1]
        r = np.linalg.norm(y, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        return self.profile(r, 2) + (n - 1) * self.profile(r, 1) / safe


def make_cutoff(rho: float) -> Cutoff:
    if not rho > 0:
        raise ValueError("rho must be positive")
    return Cutoff(float(rho))


