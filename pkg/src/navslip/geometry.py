"""Periodic channel geometry: boundary heights, frames, curvature and the
straightening map onto the unit strip."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

Array = np.ndarray
Side = Literal["bottom", "top"]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class FourierSeries:
    """Real periodic function mean + sum_m a_m cos(k_m x) + b_m sin(k_m x), k_m = 2 pi m / period."""
    period: float
    mean: float = 0.0
    modes: tuple[tuple[int, float, float], ...] = ()

    @classmethod
    def from_spec(cls, spec, period: float) -> "FourierSeries":
        if isinstance(spec, FourierSeries):
            return cls(period, spec.mean, spec.modes)
        if isinstance(spec, (int, float)):
            return cls(period, float(spec))
        mean = float(spec.get("mean", 0.0))
        modes = []
        for entry in spec.get("modes", []):
            m, a, b = entry
            if int(m) != m or m < 1:
                raise GeometryError(f"mode index must be a positive integer, got {m!r}")
            modes.append((int(m), float(a), float(b)))
        return cls(period, mean, tuple(modes))

    def to_spec(self) -> dict:
        return {"mean": self.mean, "modes": [list(m) for m in self.modes]}

    def scaled(self, factor: float, shift: float = 0.0) -> "FourierSeries":
        modes = tuple((m, a * factor, b * factor) for m, a, b in self.modes)
        return FourierSeries(self.period, self.mean * factor + shift, modes)

    def __call__(self, x, deriv: int = 0) -> Array:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.mean if deriv == 0 else 0.0)
        for m, a, b in self.modes:
            k = 2.0 * np.pi * m / self.period
            c, s = np.cos(k * x), np.sin(k * x)
            # derivative of order n rotates (cos, sin) by n quarter turns
            for _ in range(deriv):
                c, s = -s * k, c * k
            out = out + a * c + b * s
        return out

    @property
    def is_constant(self) -> bool:
        return all(a == 0.0 and b == 0.0 for _, a, b in self.modes)


@dataclass(frozen=True)
class BoundaryFrame:
    side: str
    x1: Array
    normal: Array      # (2, n)
    tangent: Array     # (2, n)
    kappa: Array
    sprime: Array


@dataclass(frozen=True)
class ChannelGeometry:
    period: float
    h_minus: FourierSeries
    h_plus: FourierSeries
    n1: int
    d: float
    x1: Array = field(repr=False)
    hm: Array = field(repr=False)
    hm1: Array = field(repr=False)
    hm2: Array = field(repr=False)
    hp: Array = field(repr=False)
    hp1: Array = field(repr=False)
    hp2: Array = field(repr=False)

    @property
    def gap(self) -> Array:
        return self.hp - self.hm

    @property
    def is_flat(self) -> bool:
        return self.h_minus.is_constant and self.h_plus.is_constant

    @property
    def identical_profiles(self) -> bool:
        """True when h_plus = 1 + h_minus (constant vertical gap of 1)."""
        return (self.h_plus.modes == self.h_minus.modes
                and abs(self.h_plus.mean - self.h_minus.mean - 1.0) < 1e-12)

    def heights(self, side: Side) -> FourierSeries:
        return self.h_minus if side == "bottom" else self.h_plus

    def frame(self, side: Side, x1=None) -> BoundaryFrame:
        return boundary_frame(self, side, x1)

    def to_spec(self) -> dict:
        return {"period": self.period, "h_minus": self.h_minus.to_spec(),
                "h_plus": self.h_plus.to_spec(), "n1": self.n1}


def build_geometry(period: float, h_minus, h_plus, n1: int,
                   normalize: bool = False, tol: float = 1e-12) -> ChannelGeometry:
    if not period > 0:
        raise GeometryError(f"period must be positive, got {period}")
    if n1 < 8 or n1 % 2:
        raise GeometryError(f"N1 must be even and >= 8, got {n1}")
    hm = FourierSeries.from_spec(h_minus, period)
    hp = FourierSeries.from_spec(h_plus, period)
    mean_gap = hp.mean - hm.mean
    if normalize:
        if mean_gap <= 0:
            raise GeometryError(f"mean gap {mean_gap} is not positive")
        hm = hm.scaled(1.0 / mean_gap)
        hp = hp.scaled(1.0 / mean_gap)
    elif abs(mean_gap - 1.0) > tol:
        raise GeometryError(f"mean gap is {mean_gap!r}, expected 1 (set normalize to rescale)")

    fine = np.arange(4 * n1) * (period / (4 * n1))
    gap_fine = hp(fine) - hm(fine)
    i = int(np.argmin(gap_fine))
    if gap_fine[i] <= 0:
        raise GeometryError(f"boundaries touch or cross: h+ - h- = {gap_fine[i]:.3e} at x1 = {fine[i]:.6f}")

    x1 = np.arange(n1) * (period / n1)
    return ChannelGeometry(period, hm, hp, n1, float(gap_fine[i]), x1,
                           hm(x1), hm(x1, 1), hm(x1, 2), hp(x1), hp(x1, 1), hp(x1, 2))


def flat_geometry(period: float = 2.0, n1: int = 64) -> ChannelGeometry:
    return build_geometry(period, 0.0, 1.0, n1)


def geometry_from_config(cfg: dict, n1: int) -> ChannelGeometry:
    return build_geometry(float(cfg.get("period", 2.0)), cfg.get("h_minus", 0.0),
                          cfg.get("h_plus", 1.0), n1, bool(cfg.get("normalize", False)))


def _frame_arrays(geom: ChannelGeometry, side: Side, x1: Array):
    h = geom.heights(side)
    d1, d2 = h(x1, 1), h(x1, 2)
    sp = np.sqrt(1.0 + d1 * d1)
    if side == "bottom":
        n = np.array([d1, -np.ones_like(d1)]) / sp
        kappa = -d2 / sp**3
    elif side == "top":
        n = np.array([-d1, np.ones_like(d1)]) / sp
        kappa = d2 / sp**3
    else:
        raise GeometryError(f"unknown side {side!r}")
    tau = np.array([-n[1], n[0]])
    return n, tau, kappa, sp


def boundary_frame(geom: ChannelGeometry, side: Side, x1=None) -> BoundaryFrame:
    x1 = geom.x1 if x1 is None else np.asarray(x1, dtype=float)
    n, tau, kappa, sp = _frame_arrays(geom, side, x1)
    return BoundaryFrame(side, x1, n, tau, kappa, sp)


def curvature(geom: ChannelGeometry, side: Side, x1) -> Array:
    """Signed curvature n . (tau . grad) tau with the outward normal."""
    return _frame_arrays(geom, side, np.asarray(x1, dtype=float))[2]


@dataclass(frozen=True)
class CoordinateMap:
    """Straightening map x -> y = (x1, (x2 - h-)/(h+ - h-)) sampled on an (N1, N2+1) grid."""
    geom: ChannelGeometry
    y2: Array
    jac_phi: Array    # (2, 2, N1, N2+1), grad Phi composed with Psi
    jac_psi: Array    # (2, 2, N1, N2+1)
    a11: Array
    a12: Array
    a21: Array
    a22: Array

    def ellipticity(self) -> float:
        """Pointwise minimum eigenvalue of the symmetric metric."""
        half_tr = 0.5 * (self.a11 + self.a22)
        rad = np.sqrt((0.5 * (self.a11 - self.a22))**2 + self.a12 * self.a21)
        return float(np.min(half_tr - rad))

    def sampled_ellipticity(self, n_samples: int = 1000, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, self.a11.shape[0], n_samples)
        j = rng.integers(0, self.a11.shape[1], n_samples)
        ang = rng.uniform(0, 2 * np.pi, n_samples)
        x, y = np.cos(ang), np.sin(ang)
        q = (self.a11[i, j] * x * x + (self.a12[i, j] + self.a21[i, j]) * x * y
             + self.a22[i, j] * y * y)
        return float(q.min())


def slope_field(geom: ChannelGeometry, y2: Array) -> Array:
    """d x2 / d x1 along lines of constant y2: h-' + (h+' - h-') y2."""
    return geom.hm1[:, None] + (geom.hp1 - geom.hm1)[:, None] * y2[None, :]


def metric_coeffs(geom: ChannelGeometry, n2: int, corrupt: bool = False,
                  min_ellipticity: float = 1e-8) -> CoordinateMap:
    y2 = np.linspace(0.0, 1.0, n2 + 1)
    H = geom.gap[:, None] * np.ones_like(y2)[None, :]
    sl = slope_field(geom, y2)
    one, zero = np.ones_like(H), np.zeros_like(H)
    jac_phi = np.array([[one, zero], [-sl / H, 1.0 / H]])
    jac_psi = np.array([[one, zero], [sl, H]])
    # |det grad Phi|^{-1} sum_j dPhi_k/dx_j dPhi_l/dx_j, composed with Psi
    det = 1.0 / H
    a = np.einsum("kjab,ljab->klab", jac_phi, jac_phi) / det
    a11, a12, a21, a22 = a[0, 0], a[0, 1], a[1, 0], a[1, 1]
    if corrupt:
        a22 = -a22
    cmap = CoordinateMap(geom, y2, jac_phi, jac_psi, a11, a12, a21, a22)
    if np.max(np.abs(a12 - a21)) > 1e-12:
        raise GeometryError("metric coefficients are not symmetric")
    c = cmap.ellipticity()
    if not c >= min_ellipticity:
        raise GeometryError(f"metric is not uniformly elliptic: min eigenvalue {c:.3e}")
    return cmap


def map_points(geom: ChannelGeometry, points, direction: str = "forward", tol: float = 1e-12) -> Array:
    """Apply Phi (forward) or Psi (inverse) to an (n, 2) array of points."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x1 = p[:, 0]
    hm, hp = geom.h_minus(x1), geom.h_plus(x1)
    if direction == "forward":
        y2 = (p[:, 1] - hm) / (hp - hm)
        bad = np.flatnonzero((y2 < -tol) | (y2 > 1 + tol))
        if bad.size:
            raise GeometryError(f"points outside the channel at indices {bad.tolist()}")
        return np.column_stack([x1, y2])
    if direction == "inverse":
        bad = np.flatnonzero((p[:, 1] < -tol) | (p[:, 1] > 1 + tol)
                             | (x1 < -tol) | (x1 > geom.period + tol))
        if bad.size:
            raise GeometryError(f"points outside the unit strip at indices {bad.tolist()}")
        return np.column_stack([x1, hm + (hp - hm) * p[:, 1]])
    raise GeometryError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class SlipSpec:
    """Navier-slip coefficient alpha on each wall."""
    bottom: FourierSeries
    top: FourierSeries

    @classmethod
    def constant(cls, alpha: float, period: float = 2.0) -> "SlipSpec":
        s = FourierSeries(period, float(alpha))
        out = cls(s, s)
        out.validate()
        return out

    @classmethod
    def from_config(cls, cfg, period: float) -> "SlipSpec":
        if isinstance(cfg, (int, float)):
            return cls.constant(float(cfg), period)
        if "slip_length" in cfg:
            return cls.constant(1.0 / (2.0 * float(cfg["slip_length"])), period)
        if "alpha" in cfg:
            return cls.constant(float(cfg["alpha"]), period)
        out = cls(FourierSeries.from_spec(cfg["bottom"], period),
                  FourierSeries.from_spec(cfg["top"], period))
        out.validate()
        return out

    def to_config(self) -> dict:
        if self.is_constant:
            return {"alpha": self.bottom.mean}
        return {"bottom": self.bottom.to_spec(), "top": self.top.to_spec()}

    def validate(self, n: int = 1024):
        for side in ("bottom", "top"):
            s = self.series(side)
            x = np.arange(n) * (s.period / n)
            if np.min(s(x)) <= 0:
                raise GeometryError(f"slip coefficient on the {side} wall must be positive")

    def series(self, side: Side) -> FourierSeries:
        return self.bottom if side == "bottom" else self.top

    def alpha(self, side: Side, x1) -> Array:
        return self.series(side)(x1)

    @property
    def is_constant(self) -> bool:
        return (self.bottom.is_constant and self.top.is_constant
                and self.bottom.mean == self.top.mean)

    @property
    def slip_length(self) -> float:
        if not self.is_constant:
            raise GeometryError("slip length is defined only for a constant coefficient")
        return 1.0 / (2.0 * self.bottom.mean)


def bound_norms(geom: ChannelGeometry, slip: SlipSpec, n: int | None = None) -> dict:
    """Sup and W^{1,inf} norms of alpha and kappa on both walls (arclength derivatives)."""
    n = n or 16 * geom.n1
    x = np.arange(n) * (geom.period / n)
    out = {"alpha_inf": 0.0, "alpha_w1": 0.0, "kappa_inf": 0.0, "kappa_w1": 0.0,
           "inv_alpha_kappa": 0.0, "alpha_plus_kappa": 0.0}
    for side in ("bottom", "top"):
        h = geom.heights(side)
        sp = np.sqrt(1 + h(x, 1)**2)
        sgn = -1.0 if side == "bottom" else 1.0
        k = sgn * h(x, 2) / sp**3
        # d kappa / dx1 by the quotient rule
        dk = sgn * (h(x, 3) / sp**3 - 3 * h(x, 2)**2 * h(x, 1) / sp**5)
        a = slip.alpha(side, x)
        da = slip.series(side)(x, 1)
        out["alpha_inf"] = max(out["alpha_inf"], np.max(np.abs(a)))
        out["kappa_inf"] = max(out["kappa_inf"], np.max(np.abs(k)))
        out["alpha_w1"] = max(out["alpha_w1"], np.max(np.abs(a)) + np.max(np.abs(da / sp)))
        out["kappa_w1"] = max(out["kappa_w1"], np.max(np.abs(k)) + np.max(np.abs(dk / sp)))
        out["inv_alpha_kappa"] = max(out["inv_alpha_kappa"], np.max((1 + np.abs(k)) / a))
        out["alpha_plus_kappa"] = max(out["alpha_plus_kappa"], np.max(np.abs(a + k)))
    return {key: float(v) for key, v in out.items()}
