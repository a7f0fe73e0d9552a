"""Compactly supported bump functions ``phi`` and their first derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate


def _profile_integral(dim: int) -> float:
    """``int_{B_1} exp(-1/(1-|x|^2)) dx``."""
    sphere = 2 * math.pi if dim == 2 else 4 * math.pi
    val, _ = integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)) * s ** (dim - 1),
                            0.0, 1.0, epsabs=1e-15, epsrel=1e-14, limit=200)
    return sphere * val


@dataclass(frozen=True)
class BumpFunction:
    """``phi(x) = c * exp(-1 / (1 - |x - x0|^2 / a^2))`` on the ball ``B_a(x0)``.

    With ``normalized`` set, ``c`` makes ``int phi = 1``.  ``axis`` selects the
    partial derivative ``d phi / d x_axis`` instead of ``phi`` itself.
    """

    dim: int
    radius: float = 1.0
    center: tuple = ()
    normalized: bool = True
    axis: int | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if not self.radius > 0:
            raise ValueError("support radius must be positive")
        center = tuple(float(c) for c in self.center) or (0.0,) * self.dim
        if len(center) != self.dim:
            raise ValueError("center has wrong dimension")
        object.__setattr__(self, "center", center)
        if self.axis is not None and not 0 <= self.axis < self.dim:
            raise ValueError("derivative axis out of range")

    @property
    def const(self) -> float:
        if not self.normalized:
            return 1.0
        return 1.0 / (_profile_integral(self.dim) * self.radius ** self.dim)

    @property
    def kernel_axis(self) -> int:
        return -1 if self.axis is None else self.axis

    def derivative(self, axis: int) -> "BumpFunction":
        if self.axis is not None:
            raise ValueError("only first derivatives are supported")
        return BumpFunction(self.dim, self.radius, self.center, self.normalized, axis)

    def value(self, x) -> np.ndarray:
        """Evaluate at points of shape ``(..., dim)``."""
        z = np.asarray(x, dtype=float) - np.asarray(self.center)
        a2 = self.radius ** 2
        s2 = np.sum(z * z, axis=-1) / a2
        inside = s2 < 1.0
        e = np.where(inside, 1.0 - s2, 1.0)
        v = np.where(inside, self.const * np.exp(-1.0 / e), 0.0)
        if self.axis is None:
            return v
        return v * (-2.0 * z[..., self.axis] / (a2 * e * e))

    def __call__(self, x):
        return self.value(x)

    def integral(self) -> float:
        if self.axis is not None:
            return 0.0
        return 1.0 if self.normalized else _profile_integral(self.dim) * self.radius ** self.dim
