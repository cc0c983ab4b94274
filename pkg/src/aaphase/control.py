"""Tweezer-centre control signals on a uniform time grid.

Samples are joined by a natural cubic spline.  The spline is linear in the
samples, and :class:`NaturalSpline` also applies the transpose of that map,
which turns a functional derivative dJ/du(t) into a gradient with respect to
the samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solveh_banded


class NaturalSpline:
    """Natural cubic spline on ``n + 1`` uniformly spaced knots over ``[0, span]``."""

    def __init__(self, n: int, span: float):
        if n < 2:
            raise ValueError("need at least 3 knots")
        self.n = int(n)
        self.span = float(span)
        self.h = self.span / self.n
        band = np.empty((2, self.n - 1))
        band[0] = 1.0
        band[1] = 4.0
        self._band = band

    def _solve(self, rhs):
        if self.n == 2:
            return rhs / 4.0
        return solveh_banded(self._band, rhs, lower=False)

    def moments(self, u) -> np.ndarray:
        """Second derivatives at the knots (zero at both ends)."""
        u = np.asarray(u, dtype=float)
        rhs = 6.0 / self.h**2 * (u[:-2] - 2.0 * u[1:-1] + u[2:])
        m = np.zeros_like(u)
        m[1:-1] = self._solve(rhs)
        return m

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.floor(t / self.h).astype(int), 0, self.n - 1)
        tau = t / self.h - k
        return k, tau

    def _weights(self, tau, der):
        h = self.h
        if der == 0:
            return (1 - tau, tau, h * h / 6 * ((1 - tau) ** 3 - (1 - tau)), h * h / 6 * (tau**3 - tau))
        if der == 1:
            return (-1 / h + 0 * tau, 1 / h + 0 * tau, h / 6 * (1 - 3 * (1 - tau) ** 2),
                    h / 6 * (3 * tau**2 - 1))
        if der == 2:
            return (0 * tau, 0 * tau, 1 - tau, tau)
        raise ValueError("der must be 0, 1 or 2")

    def evaluate(self, u, t, der: int = 0) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        m = self.moments(u)
        k, tau = self._locate(t)
        wa, wb, wc, wd = self._weights(tau, der)
        return wa * u[k] + wb * u[k + 1] + wc * m[k] + wd * m[k + 1]

    def transpose(self, t, v, der: int = 0) -> np.ndarray:
        """Apply the transpose of ``u -> evaluate(u, t, der)`` to ``v``."""
        v = np.asarray(v, dtype=float)
        k, tau = self._locate(t)
        wa, wb, wc, wd = self._weights(tau, der)
        gu = np.zeros(self.n + 1)
        gm = np.zeros(self.n + 1)
        np.add.at(gu, k, wa * v)
        np.add.at(gu, k + 1, wb * v)
        np.add.at(gm, k, wc * v)
        np.add.at(gm, k + 1, wd * v)
        z = self._solve(gm[1:-1]) * 6.0 / self.h**2
        gu[:-2] += z
        gu[1:-1] -= 2.0 * z
        gu[2:] += z
        return gu


_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


@lru_cache(maxsize=16)
def _slope_gram(n: int, span: float) -> np.ndarray:
    """S with ∫ u'(t)² dt = uᵀ S u, exact for the cubic spline."""
    sp = NaturalSpline(n, span)
    tau = 0.5 * (_GL_X + 1.0)
    t = (np.arange(n)[:, None] + tau[None, :]).ravel() * sp.h
    w = np.tile(0.5 * _GL_W, n) * sp.h
    basis = np.empty((t.size, n + 1))
    eye = np.eye(n + 1)
    for k in range(n + 1):
        basis[:, k] = sp.evaluate(eye[k], t, der=1)
    gram = basis.T @ (w[:, None] * basis)
    gram.setflags(write=False)
    return gram


@dataclass
class ControlSignal:
    """Tweezer-centre samples ``(ux, uy)`` in µm on ``t_grid`` (µs)."""

    t_grid: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    _spline: NaturalSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.ux = np.asarray(self.ux, dtype=float).copy()
        self.uy = np.asarray(self.uy, dtype=float).copy()
        t = self.t_grid
        if t.ndim != 1 or t.size < 3:
            raise ValueError("time grid needs at least 3 samples")
        if self.ux.shape != t.shape or self.uy.shape != t.shape:
            raise ValueError("control samples must match the time grid")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        step = np.diff(t)
        h = t[-1] / (t.size - 1)
        if np.any(step <= 0) or not np.allclose(step, h, rtol=1e-9, atol=0):
            raise ValueError("time grid must be uniform and strictly increasing")
        if not (np.all(np.isfinite(self.ux)) and np.all(np.isfinite(self.uy))):
            raise ValueError("control samples must be finite")
        self._spline = NaturalSpline(t.size - 1, float(t[-1]))

    @classmethod
    def constant(cls, T: float, n: int, point) -> "ControlSignal":
        t = np.linspace(0.0, T, n + 1)
        return cls(t, np.full(n + 1, float(point[0])), np.full(n + 1, float(point[1])))

    @property
    def T(self) -> float:
        return float(self.t_grid[-1])

    @property
    def n(self) -> int:
        return self.t_grid.size - 1

    @property
    def spacing(self) -> float:
        return self._spline.h

    @property
    def spline(self) -> NaturalSpline:
        return self._spline

    def samples(self) -> np.ndarray:
        return np.stack([self.ux, self.uy], axis=1)

    def with_samples(self, ux, uy) -> "ControlSignal":
        return ControlSignal(self.t_grid, ux, uy)

    def __call__(self, t, der: int = 0) -> np.ndarray:
        """Centre (or its derivative) at times ``t``; shape (len(t), 2)."""
        return np.stack([self._spline.evaluate(self.ux, t, der),
                         self._spline.evaluate(self.uy, t, der)], axis=-1)

    CSV_COLUMNS = ("t_us", "ux_um", "uy_um")

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.t_grid, self.ux, self.uy]), delimiter=",",
                   fmt="%.17g", header=",".join(self.CSV_COLUMNS), comments="")

    @classmethod
    def from_csv(cls, path) -> "ControlSignal":
        with open(path) as fh:
            header = tuple(fh.readline().strip().split(","))
        if header != cls.CSV_COLUMNS:
            raise ValueError(f"{path}: expected control columns {','.join(cls.CSV_COLUMNS)}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2])

    def cost(self, nu_x: float, nu_y: float) -> float:
        """½ ∫ (ν_x u̇_x² + ν_y u̇_y²) dt, exact for the spline."""
        s = _slope_gram(self.n, self.T)
        # the Gram matrix annihilates constants; shifting keeps that exact
        dx, dy = self.ux - self.ux[0], self.uy - self.uy[0]
        return 0.5 * (nu_x * dx @ s @ dx + nu_y * dy @ s @ dy)

    def cost_gradient(self, nu_x: float, nu_y: float) -> np.ndarray:
        """Gradient of :meth:`cost` with respect to the samples, shape (n+1, 2)."""
        s = _slope_gram(self.n, self.T)
        return np.stack([nu_x * (s @ (self.ux - self.ux[0])), nu_y * (s @ (self.uy - self.uy[0]))],
                        axis=1)


def time_profile(tau, profile: str):
    """Fraction of the loop completed at normalised time ``tau``."""
    tau = np.asarray(tau, dtype=float)
    if profile == "uniform":
        return tau
    if profile == "smooth":
        return tau - np.sin(2 * np.pi * tau) / (2 * np.pi)
    raise ValueError(f"unknown time profile {profile!r}")


def loop_path(t, T, start, center, semi_axes, orientation=0.0, direction=1, profile="uniform"):
    """Points on a closed elliptical loop passing through ``start`` at t = 0 and t = T.

    ``orientation`` is the angle of the first semi-axis from +x.  The start
    point's parametric angle is inferred from ``start`` relative to ``center``.
    """
    a, b = semi_axes
    c, s = math.cos(orientation), math.sin(orientation)
    dx, dy = start[0] - center[0], start[1] - center[1]
    # coordinates of start in the ellipse frame
    xe, ye = c * dx + s * dy, -s * dx + c * dy
    phi0 = math.atan2(ye / b, xe / a)
    phi = phi0 + direction * 2 * np.pi * time_profile(np.asarray(t) / T, profile)
    xe, ye = a * np.cos(phi), b * np.sin(phi)
    return np.stack([center[0] + c * xe - s * ye, center[1] + s * xe + c * ye], axis=-1)


def loop_control(T, n, start, center, semi_axes, orientation=0.0, direction=1,
                 profile="smooth") -> ControlSignal:
    """Control tracing an ellipse through ``start``; circles have equal semi-axes."""
    t = np.linspace(0.0, T, n + 1)
    pts = loop_path(t, T, start, center, semi_axes, orientation, direction, profile)
    pts[0] = pts[-1] = start
    return ControlSignal(t, pts[:, 0], pts[:, 1])
