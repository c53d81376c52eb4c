"""Nusselt estimators, integral identities, conservation monitors and the
decay detector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import EllipticOperator, hminus1_proxy, solve_pressure_neumann
from .fields import MappedGrid
from .geometry import SlipSpec

Array = np.ndarray
SIDES = ("bottom", "top")


# --- Nusselt number ------------------------------------------------------------------


def nusselt_flux(grid: MappedGrid, theta: Array) -> float:
    """(1/Gamma) * integral over the bottom wall of n . grad theta."""
    return grid.integrate_boundary(grid.normal_derivative(theta, "bottom"), "bottom") / grid.period


def gradient_integrand(grid: MappedGrid, theta: Array) -> float:
    g = grid.gradient(theta)
    return grid.integrate_area(g[0] ** 2 + g[1] ** 2) / grid.period


def column_weights(grid: MappedGrid, z_lo: Array, z_hi: Array) -> Array:
    """Per-node weights integrating a function piecewise linear in y2 over heights
    z in [z_lo, z_hi] above the bottom wall (z = H y2), column by column."""
    H = grid.geom.gap
    n = grid.n2
    w = np.zeros(grid.shape)
    for i in range(grid.n1):
        a, b = z_lo[i] / H[i] * n, z_hi[i] / H[i] * n   # in cell units
        a, b = max(a, 0.0), min(b, float(n))
        if b <= a:
            continue
        ja, jb = int(math.floor(a)), int(math.floor(b))
        for j in range(ja, min(jb, n - 1) + 1):
            lo, hi = max(a, j), min(b, j + 1)
            if hi <= lo:
                continue
            # integral over [lo, hi] of the two hats on cell [j, j+1], in cell units
            s0, s1 = lo - j, hi - j
            w[i, j] += (s1 - s0) - 0.5 * (s1 * s1 - s0 * s0)
            w[i, j + 1] += 0.5 * (s1 * s1 - s0 * s0)
        w[i] *= H[i] / n
    return w


def nusselt_strip(grid: MappedGrid, theta: Array, u: Array, delta: float) -> float:
    """(1/(delta Gamma)) integral over the bottom strip of n+ . (u - grad) theta."""
    if not 0 < delta < grid.geom.d:
        raise ValueError(f"strip width {delta} must lie in (0, d = {grid.geom.d})")
    g = grid.gradient(theta)
    F1, F2 = u[0] * theta - g[0], u[1] * theta - g[1]
    q = -grid.geom.hm1[:, None] * F1 + F2
    w = column_weights(grid, np.zeros(grid.n1), np.full(grid.n1, delta))
    return float(np.sum(q * w) * grid.dy1 / (delta * grid.period))


def nusselt_convective(grid: MappedGrid, theta: Array, u: Array) -> float:
    """Lower estimate (max h+ - min h-)^-1 (1/Gamma) integral of (u2 - d2) theta."""
    span = float(np.max(grid.geom.hp) - np.min(grid.geom.hm))
    return grid.integrate_area(u[1] * theta - grid.dx2(theta)) / (span * grid.period)


@dataclass
class BackgroundProfile:
    """Piecewise-linear profile eta of boundary-layer width delta, identical-profile channels."""
    grid: MappedGrid
    delta: float
    eta: Array = field(init=False)
    grad: Array = field(init=False)
    weights: Array = field(init=False)

    def __post_init__(self):
        g = self.grid
        if not g.geom.identical_profiles:
            raise ValueError("the background profile needs h+ = 1 + h- (identical profiles)")
        if not 0 < self.delta <= 0.5:
            raise ValueError("delta_bg must lie in (0, 1/2]")
        d = self.delta
        z = g.Y2  # height above the bottom wall, gap is 1
        self.eta = np.where(z < d, (2 * d - z) / (2 * d),
                            np.where(z > 1 - d, (1 - z) / (2 * d), 0.5))
        hp = np.broadcast_to(g.geom.hm1[:, None], g.shape)
        self.grad = np.array([hp, -np.ones(g.shape)]) / (2 * d)
        n1 = g.n1
        # area weights restricted exactly to the two strips
        self.weights = (column_weights(g, np.zeros(n1), np.full(n1, d))
                        + column_weights(g, np.full(n1, 1 - d), np.ones(n1))) * g.dy1

    def strip_integral(self, f: Array) -> float:
        return float(np.sum(f * self.weights))

    def terms(self, theta: Array, u: Array) -> dict:
        g = self.grid
        gt = g.gradient(theta)
        vs = theta - self.eta
        e1, e2 = self.grad
        grad_eta_sq = self.strip_integral(e1**2 + e2**2)
        adv = self.strip_integral(vs * (u[0] * e1 + u[1] * e2))
        # |grad vs|^2 = |grad theta|^2 - 2 grad theta . grad eta + |grad eta|^2
        grad_vs_sq = (g.integrate_area(gt[0] ** 2 + gt[1] ** 2)
                      - 2 * self.strip_integral(gt[0] * e1 + gt[1] * e2) + grad_eta_sq)
        G = g.period
        return {"grad_eta": grad_eta_sq / G, "advective": adv / G, "grad_varsigma": grad_vs_sq / G,
                "nu": (grad_eta_sq - 2 * adv - grad_vs_sq) / G}


def background_nusselt_inst(profile: BackgroundProfile, theta: Array, u: Array) -> float:
    return profile.terms(theta, u)["nu"]


# --- energy and identities -----------------------------------------------------------


def boundary_dissipation(grid: MappedGrid, u: Array, slip: SlipSpec) -> float:
    total = 0.0
    for side in SIDES:
        ut = grid.tangential_velocity(u, side)
        total += grid.integrate_boundary(slip.alpha(side, grid.y1) * ut**2, side)
    return total


def curvature_term(grid: MappedGrid, u: Array) -> float:
    total = 0.0
    for side in SIDES:
        ut = grid.tangential_velocity(u, side)
        total += grid.integrate_boundary(grid.frame(side).kappa * ut**2, side)
    return total


def sym_grad_sq(grid: MappedGrid, u: Array) -> float:
    D = grid.symmetric_gradient(u)
    return grid.integrate_area(np.sum(D * D, axis=(0, 1)))


def grad_sq(grid: MappedGrid, u: Array) -> float:
    G = grid.velocity_gradient(u)
    return grid.integrate_area(np.sum(G * G, axis=(0, 1)))


def energy_terms(grid: MappedGrid, u: Array, theta: Array, Ra: float, slip: SlipSpec) -> dict:
    return {"kinetic": grid.integrate_area(u[0] ** 2 + u[1] ** 2),
            "sym_grad": sym_grad_sq(grid, u),
            "boundary": boundary_dissipation(grid, u, slip),
            "buoyancy": Ra * grid.integrate_area(theta * u[1])}


def energy_balance_residual(grid: MappedGrid, prev, nxt, Ra: float, Pr: float, slip: SlipSpec) -> float:
    """Relative residual of d/dt |u|^2/(2 Pr) + 2|Du|^2 + 2 int alpha u_tau^2 - Ra int theta u2."""
    dt = nxt.t - prev.t
    if dt <= 0:
        return 0.0
    a = energy_terms(grid, prev.u, prev.theta, Ra, slip)
    b = energy_terms(grid, nxt.u, nxt.theta, Ra, slip)
    rate = (b["kinetic"] - a["kinetic"]) / (2 * Pr * dt)
    diss = (a["sym_grad"] + b["sym_grad"]) + (a["boundary"] + b["boundary"])
    buoy = 0.5 * (a["buoyancy"] + b["buoyancy"])
    scale = max(abs(rate), abs(diss), abs(buoy))
    if scale == 0:
        return 0.0
    return abs(rate + diss - buoy) / scale


def grad_identity_values(grid: MappedGrid, u: Array) -> tuple[float, float, float]:
    k = curvature_term(grid, u)
    omega = grid.vorticity(u)
    return (2 * sym_grad_sq(grid, u) - k, grad_sq(grid, u),
            grid.integrate_area(omega**2) + k)


def grad_identity_residuals(grid: MappedGrid, u: Array) -> tuple[float, float, float]:
    q1, q2, q3 = grad_identity_values(grid, u)
    scale = max(abs(q1), abs(q2), abs(q3))
    if scale == 0:
        return (0.0, 0.0, 0.0)
    return (abs(q1 - q2) / scale, abs(q2 - q3) / scale, abs(q1 - q3) / scale)


def laplacian_vorticity_residual(grid: MappedGrid, u: Array) -> float:
    """L2 norm of Delta u - perp grad omega."""
    r = grid.vector_laplacian(u) - grid.perp_gradient(grid.vorticity(u))
    return grid.lp_norm(r)


def boundary_pressure_work(grid: MappedGrid, u: Array, p: Array, slip: SlipSpec) -> tuple[float, float]:
    """Direct form of int (alpha + kappa) u . grad p over both walls, and its integrated-by-parts form."""
    gp = grid.gradient(p)
    direct = parts = 0.0
    for side in SIDES:
        fr = grid.frame(side)
        j = grid.wall_index(side)
        ak = slip.alpha(side, fr.x1) + fr.kappa
        udp = u[0][:, j] * gp[0][:, j] + u[1][:, j] * gp[1][:, j]
        direct += grid.integrate_boundary(ak * udp, side)
        ut = grid.tangential_velocity(u, side)
        parts -= grid.integrate_boundary(p[:, j] * grid.tangential_derivative(ak * ut, side), side)
    return direct, parts


def coercivity_ratio(grid: MappedGrid, u: Array, slip: SlipSpec) -> float:
    num = sym_grad_sq(grid, u) + boundary_dissipation(grid, u, slip)
    h1 = grid.integrate_area(u[0] ** 2 + u[1] ** 2) + grad_sq(grid, u)
    return num / h1


# --- random wall-constant streamfunctions ---------------------------------------------


@dataclass(frozen=True)
class RandomStreamfunction:
    """phi(y) = c y2 + sum a_mn cos(k_m y1) sin(n pi y2) + b_mn sin(k_m y1) sin(n pi y2).

    Constant on each wall in straightened coordinates; derivatives are analytic.
    """
    period: float
    c: float
    a: Array
    b: Array

    @classmethod
    def draw(cls, rng: np.random.Generator, period: float, m_max: int = 4, n_max: int = 4):
        m = np.arange(m_max + 1)[:, None]
        n = np.arange(1, n_max + 1)[None, :]
        decay = 1.0 / (1.0 + m**2 + n**2)
        a = rng.standard_normal(decay.shape) * decay
        b = rng.standard_normal(decay.shape) * decay
        b[0] = 0.0
        return cls(period, float(rng.standard_normal()), a, b)

    def _terms(self, grid: MappedGrid):
        km = 2 * np.pi * np.arange(self.a.shape[0]) / self.period
        n = np.pi * np.arange(1, self.a.shape[1] + 1)
        y1, y2 = grid.y1, grid.y2
        C, S = np.cos(np.outer(km, y1)), np.sin(np.outer(km, y1))      # (M, n1)
        s, c = np.sin(np.outer(n, y2)), np.cos(np.outer(n, y2))        # (N, n2+1)
        return km, n, C, S, s, c

    def derivatives(self, grid: MappedGrid):
        km, n, C, S, s, c = self._terms(grid)
        A, B = self.a, self.b
        val = C.T @ A @ s + S.T @ B @ s + self.c * grid.Y2
        d1 = (-S.T * km) @ A @ s + (C.T * km) @ B @ s
        d2 = C.T @ (A * n) @ c + S.T @ (B * n) @ c + self.c
        return val, d1, d2

    def value(self, grid: MappedGrid) -> Array:
        return self.derivatives(grid)[0]

    def velocity(self, grid: MappedGrid) -> Array:
        """Exact samples of u = perp grad phi in physical coordinates."""
        _, d1, d2 = self.derivatives(grid)
        c = -grid.slope / grid.H
        px1 = d1 + c * d2
        px2 = d2 / grid.H
        return np.array([-px2, px1])


# --- non-diffusive monitors --------------------------------------------------------------


def hydrostatic_residual(grid: MappedGrid, p: Array, theta: Array, op: EllipticOperator) -> float:
    gp = grid.gradient(p)
    return hminus1_proxy(op, np.array([gp[0], gp[1] - theta]))


def nd_monitors(grid: MappedGrid, state, prev, slip: SlipSpec, poisson: EllipticOperator,
                neumann: EllipticOperator, beta: float = 1.0, gamma: float = 0.0) -> dict:
    p, _ = solve_pressure_neumann(neumann, state.u, state.theta, 1.0, 1.0, slip)
    dt = state.t - prev.t
    ut = (grid.lp_norm(state.u - prev.u) / dt) if dt > 0 else float("nan")
    return {"theta_l2": grid.lp_norm(state.theta, 2), "theta_l4": grid.lp_norm(state.theta, 4),
            "u_l2": grid.lp_norm(state.u, 2),
            "u_h1": math.sqrt(grid.lp_norm(state.u, 2) ** 2 + grid.h1_seminorm(state.u) ** 2),
            "hydrostatic_residual": hydrostatic_residual(grid, p, state.theta, poisson),
            "u_t": ut, "theta_minus_reference": grid.lp_norm(state.theta - (beta * grid.X2 + gamma), 2)}


# --- decay detector ------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayVerdict:
    found: bool
    T: float | None = None
    reason: str = ""


def decay_detector(t: Array, f: Array, C: float, eps: float, budget: float | None = None,
                   tol: float = 1e-6) -> DecayVerdict:
    """Check f >= 0, f' <= C and a finite tail integral; then return the first T after
    which f < eps holds for every sample."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if t.size < 3:
        raise ValueError("decay detection needs at least 3 samples")
    if np.any(f < -tol * max(1.0, np.max(np.abs(f)))):
        return DecayVerdict(False, reason="f >= 0 violated")
    slopes = np.diff(f) / np.diff(t)
    if np.any(slopes > C * (1 + tol) + tol):
        return DecayVerdict(False, reason="derivative bound f' <= C violated")
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    tail = float(np.trapezoid(f[half], t[half]))
    if budget is None:
        budget = eps * (t[-1] - t[half][0])
    if tail >= budget:
        return DecayVerdict(False, reason=f"L1 budget exceeded (tail integral {tail:.3e} >= {budget:.3e})")
    below = f < eps
    if not below[-1]:
        return DecayVerdict(False, reason="f has not dropped below eps by the end of the series")
    # first index after the last sample with f >= eps
    above = np.flatnonzero(~below)
    k = 0 if above.size == 0 else above[-1] + 1
    return DecayVerdict(True, T=float(t[k]))


# --- run records ---------------------------------------------------------------------------


def window_mask(t: Array, fraction: float) -> Array:
    """Samples in the final `fraction` of the time span."""
    if t.size == 0:
        return np.zeros(0, dtype=bool)
    start = t[-1] - fraction * (t[-1] - t[0])
    return t >= start - 1e-12 * max(1.0, abs(t[-1]))


def time_average(t: Array, f: Array) -> float:
    if t.size == 0:
        raise ValueError("window is empty")
    if t.size == 1 or t[-1] == t[0]:
        return float(np.mean(f))
    return float(np.trapezoid(f, t) / (t[-1] - t[0]))


def _fmt(delta: float) -> str:
    return f"{delta:g}"


class DiagnosticsRecorder:
    """Sink for dynamics.run that builds one record row per sample."""

    def __init__(self, grid: MappedGrid, params, deltas=(0.05, 0.1), delta_bg: float = 0.1,
                 reference=(1.0, 0.0)):
        self.grid = grid
        self.params = params
        self.deltas = tuple(d for d in deltas if d < grid.geom.d)
        self.delta_bg = delta_bg
        self.reference = tuple(reference)
        self.profile = (BackgroundProfile(grid, delta_bg)
                        if params.diffusive and grid.geom.identical_profiles else None)
        self._neumann = None
        self._poisson = None
        self.rows: list[dict] = []

    @property
    def columns(self) -> list[str]:
        cols = ["t", "step", "dt", "nu_flux", "nu_gradient_inst"]
        cols += [f"nu_strip_{_fmt(d)}" for d in self.deltas]
        cols += ["nu_convective", "nu_background_inst", "kinetic_energy", "grad_u_sq", "sym_grad_u_sq",
                 "boundary_dissipation", "energy_residual", "grad_id_12", "grad_id_23", "grad_id_13",
                 "theta_min", "theta_max", "theta_l2", "theta_l4", "u_l2", "u_h1",
                 "hydrostatic_residual", "theta_minus_reference", "u_t", "coupling_mismatch"]
        return cols

    def _ops(self):
        if self._neumann is None:
            method = "flat" if self.grid.is_flat else "direct"
            self._neumann = EllipticOperator(self.grid, bc="neumann", method=method)
            self._poisson = EllipticOperator(self.grid, method=method)
        return self._neumann, self._poisson

    def compute(self, prev, state) -> dict:
        g, p = self.grid, self.params
        th, u = state.theta, state.u
        nan = float("nan")
        row = {"t": state.t, "step": state.step, "dt": state.dt}
        if p.diffusive:
            row["nu_flux"] = nusselt_flux(g, th)
            row["nu_gradient_inst"] = gradient_integrand(g, th)
            for d in self.deltas:
                row[f"nu_strip_{_fmt(d)}"] = nusselt_strip(g, th, u, d)
            row["nu_convective"] = nusselt_convective(g, th, u)
            row["nu_background_inst"] = (background_nusselt_inst(self.profile, th, u)
                                         if self.profile is not None else nan)
        else:
            for key in ["nu_flux", "nu_gradient_inst", "nu_convective", "nu_background_inst"]:
                row[key] = nan
            for d in self.deltas:
                row[f"nu_strip_{_fmt(d)}"] = nan
        e = energy_terms(g, u, th, p.Ra, p.slip)
        row["kinetic_energy"] = e["kinetic"]
        row["grad_u_sq"] = grad_sq(g, u)
        row["sym_grad_u_sq"] = e["sym_grad"]
        row["boundary_dissipation"] = e["boundary"]
        row["energy_residual"] = (energy_balance_residual(g, prev, state, p.Ra, p.Pr, p.slip)
                                  if state.t > prev.t else nan)
        row["grad_id_12"], row["grad_id_23"], row["grad_id_13"] = grad_identity_residuals(g, u)
        row["theta_min"], row["theta_max"] = float(th.min()), float(th.max())
        row["theta_l2"], row["theta_l4"] = g.lp_norm(th, 2), g.lp_norm(th, 4)
        row["u_l2"] = g.lp_norm(u, 2)
        row["u_h1"] = math.sqrt(row["u_l2"] ** 2 + row["grad_u_sq"])
        if p.diffusive:
            row["hydrostatic_residual"] = nan
        else:
            neumann, poisson = self._ops()
            pres, _ = solve_pressure_neumann(neumann, u, th, 1.0, 1.0, p.slip)
            row["hydrostatic_residual"] = hydrostatic_residual(g, pres, th, poisson)
        beta, gamma = self.reference
        row["theta_minus_reference"] = g.lp_norm(th - (beta * g.X2 + gamma), 2)
        row["u_t"] = g.lp_norm(u - prev.u) / (state.t - prev.t) if state.t > prev.t else nan
        row["coupling_mismatch"] = state.coupling_mismatch
        return row

    def __call__(self, prev, state, stepper=None):
        self.rows.append(self.compute(prev, state))

    def series(self, key: str) -> Array:
        return np.array([r[key] for r in self.rows], dtype=float)

    def window_average(self, key: str, fraction: float = 0.6) -> float:
        t = self.series("t")
        m = window_mask(t, fraction)
        return time_average(t[m], self.series(key)[m])

    def summary(self, fraction: float = 0.6, eps_max: float = 1e-3) -> dict:
        return summarize_rows(self.rows, self.columns, fraction, eps_max, self.params.diffusive)

    def write_csv(self, path) -> None:
        write_csv(path, self.columns, self.rows)


def summarize_rows(rows: list[dict], columns: list[str], fraction: float = 0.6,
                   eps_max: float = 1e-3, diffusive: bool = True) -> dict:
    out = {"samples": len(rows), "window_fraction": fraction}
    if not rows:
        return out
    t = np.array([r["t"] for r in rows], dtype=float)
    m = window_mask(t, fraction)
    out["window"] = [float(t[m][0]), float(t[m][-1])]
    col = {c: np.array([r[c] for r in rows], dtype=float) for c in columns}
    if diffusive:
        nu = {}
        for c in columns:
            if c.startswith("nu_"):
                name = c.replace("_inst", "")
                vals = col[c][m]
                nu[name] = time_average(t[m], vals) if np.all(np.isfinite(vals)) else None
        out["nusselt"] = nu
        if nu.get("nu_convective") is not None and nu.get("nu_flux") is not None:
            out["nu_convective_is_lower_estimate"] = bool(nu["nu_convective"] <= 1.03 * nu["nu_flux"])
    tmin, tmax = float(np.min(col["theta_min"])), float(np.max(col["theta_max"]))
    out["theta_range"] = [tmin, tmax]
    if diffusive:
        out["maximum_principle_ok"] = bool(tmin >= -eps_max and tmax <= 1 + eps_max)
    for c in ("energy_residual", "grad_id_12", "grad_id_23", "grad_id_13", "coupling_mismatch"):
        vals = col[c][np.isfinite(col[c])]
        out[f"max_{c}"] = float(vals.max()) if vals.size else None
    out["final"] = {c: (float(col[c][-1]) if np.isfinite(col[c][-1]) else None) for c in columns}
    return out


def write_csv(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(r[c])) if c != "step" else str(int(r[c])) for c in columns) + "\n")


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path) as fh:
        columns = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            vals = line.strip().split(",")
            if len(vals) == len(columns):
                rows.append({c: float(v) for c, v in zip(columns, vals)})
    return columns, rows
