"""Discrete fields on the straightened grid and mapped differential operators.

Scalars are arrays of shape (N1, N2+1): axis 0 is the periodic y1 direction
(Fourier), axis 1 the wall-normal y2 direction (uniform nodes including both
walls). Vectors carry a leading axis of length 2, tensors two leading axes.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .geometry import ChannelGeometry, boundary_frame, metric_coeffs, slope_field

Array = np.ndarray

# one-sided wall derivative whose O(h^2) error matches the centered stencil,
# so nested first derivatives stay second order up to the wall
WALL_STENCIL = np.array([-2.0, 3.5, -2.0, 0.5])


def sbp_weights(n2: int) -> Array:
    """Second-order y2 quadrature weights on [0, 1] compatible with d_y2.

    With these weights sum(w * d_y2(f)) = f[-1] - f[0] holds exactly, which
    makes discrete flux identities hold to round-off.
    """
    if n2 < 8:
        raise ValueError("N2 must be at least 8")
    w = np.ones(n2 + 1)
    w[:3] = w[-3:][::-1] = (0.125, 1.5, 0.875)
    return w / n2


class MappedGrid:
    def __init__(self, geom: ChannelGeometry, n2: int, dealias: bool = True):
        if n2 < 8:
            raise ValueError(f"N2 must be at least 8, got {n2}")
        self.geom = geom
        self.n1 = geom.n1
        self.n2 = n2
        self.shape = (self.n1, n2 + 1)
        self.period = geom.period
        self.dy1 = geom.period / self.n1
        self.dy2 = 1.0 / n2
        self.y1 = geom.x1.copy()
        self.y2 = np.linspace(0.0, 1.0, n2 + 1)
        self.dealias_enabled = dealias
        m = np.arange(self.n1 // 2 + 1)
        self.k = 2.0 * np.pi * m / geom.period
        self.k_eff = self.k.copy()
        self.k_eff[-1] = 0.0  # Nyquist mode has no first derivative
        self.cutoff = self.n1 // 3
        self.w2 = sbp_weights(n2)

    # --- coordinates and metric -------------------------------------------------
    @cached_property
    def Y1(self) -> Array:
        return np.broadcast_to(self.y1[:, None], self.shape)

    @cached_property
    def Y2(self) -> Array:
        return np.broadcast_to(self.y2[None, :], self.shape)

    @cached_property
    def H(self) -> Array:
        return np.broadcast_to(self.geom.gap[:, None], self.shape)

    @cached_property
    def X2(self) -> Array:
        return self.geom.hm[:, None] + self.H * self.y2[None, :]

    @cached_property
    def slope(self) -> Array:
        return slope_field(self.geom, self.y2)

    @cached_property
    def cmap(self):
        return metric_coeffs(self.geom, self.n2)

    @cached_property
    def _chain(self):
        g = self.geom
        H = self.H
        c = -self.slope / H                      # d y2 / d x1
        e = 1.0 / H                              # d y2 / d x2
        dH = (g.hp1 - g.hm1)[:, None]
        dslope = g.hm2[:, None] + (g.hp2 - g.hm2)[:, None] * self.y2[None, :]
        # d c / d x1 = d_y1 c + c d_y2 c
        dc = -dslope / H + self.slope * dH / H**2 + c * (-dH / H)
        return c, e, dc

    @property
    def is_flat(self) -> bool:
        return self.geom.is_flat

    @cached_property
    def _frames(self):
        return {side: boundary_frame(self.geom, side) for side in ("bottom", "top")}

    def frame(self, side):
        return self._frames[side]

    def zeros(self) -> Array:
        return np.zeros(self.shape)

    # --- spectral helpers --------------------------------------------------------
    def fft(self, f: Array) -> Array:
        return np.fft.rfft(f, axis=-2)

    def ifft(self, fh: Array) -> Array:
        return np.fft.irfft(fh, n=self.n1, axis=-2)

    def dealias(self, f: Array) -> Array:
        if not self.dealias_enabled:
            return f
        fh = self.fft(f)
        fh[..., self.cutoff + 1:, :] = 0.0
        return self.ifft(fh)

    def product(self, a: Array, b: Array) -> Array:
        return self.dealias(a * b)

    # --- computational derivatives ---------------------------------------------
    def d_y1(self, f: Array) -> Array:
        return self.ifft(1j * self.k_eff[:, None] * self.fft(f))

    def d_y1y1(self, f: Array) -> Array:
        return self.ifft(-(self.k**2)[:, None] * self.fft(f))

    def d_y2(self, f: Array) -> Array:
        h = self.dy2
        out = np.empty_like(f)
        out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * h)
        out[..., 0] = f[..., :4] @ WALL_STENCIL / h
        out[..., -1] = -(f[..., :-5:-1] @ WALL_STENCIL) / h
        return out

    def d_y2y2(self, f: Array) -> Array:
        h2 = self.dy2**2
        out = np.empty_like(f)
        out[..., 1:-1] = (f[..., 2:] - 2 * f[..., 1:-1] + f[..., :-2]) / h2
        out[..., 0] = (2 * f[..., 0] - 5 * f[..., 1] + 4 * f[..., 2] - f[..., 3]) / h2
        out[..., -1] = (2 * f[..., -1] - 5 * f[..., -2] + 4 * f[..., -3] - f[..., -4]) / h2
        return out

    # --- physical derivatives ----------------------------------------------------
    def dx1(self, f: Array) -> Array:
        if self.is_flat:
            return self.d_y1(f)
        c, _, _ = self._chain
        return self.d_y1(f) + c * self.d_y2(f)

    def dx2(self, f: Array) -> Array:
        return self.d_y2(f) / self.H

    def gradient(self, f: Array) -> Array:
        return np.array([self.dx1(f), self.dx2(f)])

    def divergence(self, v: Array) -> Array:
        return self.dx1(v[0]) + self.dx2(v[1])

    def perp_gradient(self, phi: Array) -> Array:
        return np.array([-self.dx2(phi), self.dx1(phi)])

    def vorticity(self, u: Array) -> Array:
        return -self.dx2(u[0]) + self.dx1(u[1])

    def velocity_gradient(self, u: Array) -> Array:
        """G[i, j] = d_i u_j."""
        g0, g1 = self.gradient(u[0]), self.gradient(u[1])
        return np.array([[g0[0], g1[0]], [g0[1], g1[1]]])

    def symmetric_gradient(self, u: Array) -> Array:
        g = self.velocity_gradient(u)
        return 0.5 * (g + g.transpose(1, 0, 2, 3))

    def laplacian(self, f: Array) -> Array:
        """Physical Laplacian in non-divergence form."""
        if self.is_flat:
            return self.d_y1y1(f) + self.d_y2y2(f) / self.H**2
        c, e, dc = self._chain
        fy2 = self.d_y2(f)
        return (self.d_y1y1(f) + 2 * c * self.d_y1(fy2)
                + (c * c + e * e) * self.d_y2y2(f) + dc * fy2)

    def vector_laplacian(self, u: Array) -> Array:
        return np.array([self.laplacian(u[0]), self.laplacian(u[1])])

    def advect(self, u: Array, f: Array) -> Array:
        """Dealiased u . grad f."""
        g = self.gradient(f)
        return self.dealias(u[0] * g[0] + u[1] * g[1])

    # --- integrals and norms -----------------------------------------------------
    @cached_property
    def area_weights(self) -> Array:
        return self.dy1 * self.H * self.w2[None, :]

    def integrate_area(self, f: Array) -> float:
        return float(np.sum(f * self.area_weights))

    def integrate_boundary(self, g: Array, side: str) -> float:
        return float(np.sum(g * self.frame(side).sprime) * self.dy1)

    def lp_norm(self, f: Array, p: float = 2) -> float:
        mag = np.sqrt(np.sum(f * f, axis=0)) if f.ndim == 3 else np.abs(f)
        if np.isinf(p):
            return float(mag.max())
        return self.integrate_area(mag**p) ** (1.0 / p)

    def h1_seminorm(self, f: Array) -> float:
        comps = f if f.ndim == 3 else f[None]
        total = 0.0
        for c in comps:
            g = self.gradient(c)
            total += self.integrate_area(g[0]**2 + g[1]**2)
        return float(np.sqrt(total))

    def mean(self, f: Array) -> float:
        return self.integrate_area(f) / self.integrate_area(np.ones(self.shape))

    # --- boundary traces ---------------------------------------------------------
    @staticmethod
    def wall_index(side: str) -> int:
        return 0 if side == "bottom" else -1

    def wall_trace(self, f: Array, side: str) -> Array:
        return f[..., self.wall_index(side)]

    def tangential_velocity(self, u: Array, side: str) -> Array:
        tau = self.frame(side).tangent
        j = self.wall_index(side)
        return u[0][:, j] * tau[0] + u[1][:, j] * tau[1]

    def normal_velocity(self, u: Array, side: str) -> Array:
        n = self.frame(side).normal
        j = self.wall_index(side)
        return u[0][:, j] * n[0] + u[1][:, j] * n[1]

    def normal_derivative(self, f: Array, side: str) -> Array:
        """n . grad f at the wall via the one-sided y2 derivative."""
        n = self.frame(side).normal
        j = self.wall_index(side)
        g = self.gradient(f)
        return n[0] * g[0][:, j] + n[1] * g[1][:, j]

    def tangential_derivative(self, g: Array, side: str) -> Array:
        """tau . grad of a wall function, i.e. signed arclength derivative."""
        fr = self.frame(side)
        sgn = 1.0 if side == "bottom" else -1.0
        gh = np.fft.rfft(g)
        return sgn * np.fft.irfft(1j * self.k_eff * gh, n=self.n1) / fr.sprime
