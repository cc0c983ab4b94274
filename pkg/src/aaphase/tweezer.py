"""Gaussian optical tweezer potentials.

A tweezer of depth D and size σ centred at c is the attractive well
U(r) = -D exp(-|r - c|² / σ²); the small-oscillation stiffness is 2D/σ².
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .units import millikelvin_to_rad_per_us


@dataclass(frozen=True)
class TweezerField:
    """One tweezer.  ``center=None`` marks the steerable (mobile) tweezer
    whose centre is supplied by a control signal."""

    depth: float
    sigma: float
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if not (self.depth > 0 and math.isfinite(self.depth)):
            raise ValueError(f"tweezer depth must be positive, got {self.depth}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"tweezer sigma must be positive, got {self.sigma}")

    @classmethod
    def from_millikelvin(cls, depth_mk: float, sigma: float, center=None) -> "TweezerField":
        return cls(millikelvin_to_rad_per_us(depth_mk), sigma,
                   None if center is None else (float(center[0]), float(center[1])))

    @property
    def mobile(self) -> bool:
        return self.center is None

    @property
    def stiffness(self) -> float:
        return 2.0 * self.depth / self.sigma**2

    def _offset(self, r, center):
        c = self.center if center is None else center
        if c is None:
            raise ValueError("mobile tweezer needs an explicit centre")
        r = np.asarray(r, dtype=float)
        return r[..., 0] - c[0], r[..., 1] - c[1]

    def potential(self, r, center=None):
        dx, dy = self._offset(r, center)
        return -self.depth * np.exp(-(dx * dx + dy * dy) / self.sigma**2)

    def gradient(self, r, center=None) -> np.ndarray:
        """dU/dr, shape (..., 2)."""
        dx, dy = self._offset(r, center)
        e = np.exp(-(dx * dx + dy * dy) / self.sigma**2)
        k = 2.0 * self.depth * e / self.sigma**2
        return np.stack([k * dx, k * dy], axis=-1)

    def hessian(self, r, center=None) -> np.ndarray:
        """d²U/dr_i dr_j, shape (..., 2, 2)."""
        dx, dy = self._offset(r, center)
        s2 = self.sigma**2
        e = np.exp(-(dx * dx + dy * dy) / s2)
        k = 2.0 * self.depth * e / s2
        out = np.empty(np.shape(dx) + (2, 2))
        out[..., 0, 0] = k * (1.0 - 2.0 * dx * dx / s2)
        out[..., 0, 1] = out[..., 1, 0] = -2.0 * k * dx * dy / s2
        out[..., 1, 1] = k * (1.0 - 2.0 * dy * dy / s2)
        return out

    def mixed_hessian(self, r, center=None) -> np.ndarray:
        """d²U/dr_i du_j with u the tweezer centre; equals minus ``hessian``."""
        return -self.hessian(r, center)


def potential(field: TweezerField, r, center=None):
    """Value of the well at ``r`` (rad/µs)."""
    return field.potential(r, center)


def split_fields(fields) -> tuple[np.ndarray, np.ndarray]:
    """Pack fields for the kernels: (mobile[2], static[k, 4])."""
    mobile = [f for f in fields if f.mobile]
    if len(mobile) > 1:
        raise ValueError("at most one mobile tweezer is supported")
    mob = np.array([mobile[0].depth, mobile[0].sigma]) if mobile else np.array([0.0, 1.0])
    stat = np.array([[f.center[0], f.center[1], f.depth, f.sigma] for f in fields if not f.mobile],
                    dtype=float).reshape(-1, 4)
    return mob, stat
