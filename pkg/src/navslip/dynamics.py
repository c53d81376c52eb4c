"""Time integration in vorticity-streamfunction form with Navier-slip walls.

Diffusive mode:   omega_t + u.grad omega = Pr Delta omega + Pr Ra d1 theta
                  theta_t + u.grad theta = Delta theta, theta = 1 (bottom), 0 (top)
Non-diffusive:    Ra = Pr = 1 and theta is transported without diffusion.
Walls:            omega = -2 (alpha + kappa) u_tau, phi = 0 (bottom), -Qbar (top).

One step is first-order IMEX: explicit dealiased advection and buoyancy,
implicit diffusion through Helmholtz solves, and an exact (influence matrix)
or iterated (sweep) solve of the slip coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
import scipy.linalg as sla

from .elliptic import EllipticOperator
from .fields import MappedGrid
from .geometry import SlipSpec

Array = np.ndarray


class StepError(RuntimeError):
    pass


class CFLError(StepError):
    def __init__(self, dt: float, suggested: float):
        super().__init__(f"time step {dt:.3e} violates the CFL limit; suggested dt <= {suggested:.3e}")
        self.suggested = suggested


class NaNError(StepError):
    def __init__(self, step: int):
        super().__init__(f"non-finite values after step {step}")
        self.step = step


@dataclass(frozen=True)
class SimParams:
    Ra: float = 1e2
    Pr: float = 1.0
    mode: str = "diffusive"
    slip: SlipSpec = field(default_factory=lambda: SlipSpec.constant(1.0))
    dt: float | None = None
    cfl: float = 0.5
    dt_max: float = 1e-2
    T: float = 1.0
    coupling: str = "influence"
    K: int = 2
    coupling_tol: float = 1e-6
    coupling_max_sweeps: int = 50
    mean_flux: float = 0.0
    nu_h: float = 0.0
    seed: int = 0
    solver: str = "auto"
    solver_tol: float = 1e-11

    def __post_init__(self):
        if not self.Ra >= 1:
            raise ValueError(f"Ra must be >= 1, got {self.Ra}")
        if not (0 < self.Pr < math.inf):
            raise ValueError(f"Pr must be positive and finite, got {self.Pr}")
        if self.mode not in ("diffusive", "non_diffusive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "non_diffusive" and (self.Ra != 1 or self.Pr != 1):
            raise ValueError("the non-diffusive system fixes Ra = Pr = 1")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.cfl > 0 or not self.dt_max > 0:
            raise ValueError("cfl and dt_max must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if self.coupling not in ("influence", "sweep"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.nu_h < 0:
            raise ValueError("hyperviscosity must be non-negative")

    @property
    def diffusive(self) -> bool:
        return self.mode == "diffusive"


@dataclass(frozen=True)
class State:
    t: float
    step: int
    omega: Array
    theta: Array
    phi: Array
    u: Array
    dt: float = 0.0
    coupling_mismatch: float = 0.0

    def fields(self) -> dict[str, Array]:
        return {"omega": self.omega, "theta": self.theta, "phi": self.phi}


def wall_tangential(grid: MappedGrid, phi: Array) -> tuple[Array, Array]:
    u = grid.perp_gradient(phi)
    return grid.tangential_velocity(u, "bottom"), grid.tangential_velocity(u, "top")


def smooth_random(grid: MappedGrid, rng: np.random.Generator, modes: int = 8) -> Array:
    """Random smooth field vanishing on both walls, max |.| = 1."""
    f = np.zeros(grid.shape)
    kx = 2 * np.pi / grid.period
    for m in range(modes + 1):
        for n in range(1, modes + 1):
            a, b = rng.standard_normal(2) / (1 + m * m + n * n)
            f += (a * np.cos(m * kx * grid.Y1) + b * np.sin(m * kx * grid.Y1)) * np.sin(n * np.pi * grid.Y2)
    return f / np.max(np.abs(f))


class Stepper:
    """Owns the operators for one grid and parameter set."""

    def __init__(self, grid: MappedGrid, params: SimParams):
        self.grid = grid
        self.params = params
        method = params.solver
        if method == "auto":
            method = "flat" if grid.is_flat else "direct"
        self.method = method
        self.poisson = EllipticOperator(grid, 0.0, method=method, tol=params.solver_tol)
        self._helm: dict[float, EllipticOperator] = {}
        self._influence: dict[float, tuple] = {}
        fb, ft = grid.frame("bottom"), grid.frame("top")
        self.ak = (params.slip.alpha("bottom", fb.x1) + fb.kappa,
                   params.slip.alpha("top", ft.x1) + ft.kappa)
        self._hyper = None

    # --- operator caches ---------------------------------------------------------------
    def helmholtz(self, sigma: float) -> EllipticOperator:
        op = self._helm.get(sigma)
        if op is None:
            op = EllipticOperator(self.grid, sigma, method=self.method, tol=self.params.solver_tol)
            self._helm[sigma] = op
        return op

    def omega_sigma(self, dt: float) -> float:
        return 1.0 / (self.params.Pr * dt)

    def influence(self, dt: float):
        """LU factors of I + 2 (alpha + kappa) T, T mapping wall vorticity to u_tau."""
        entry = self._influence.get(dt)
        if entry is not None:
            return entry
        g = self.grid
        n1 = g.n1
        hop = self.helmholtz(self.omega_sigma(dt))
        zero = g.zeros()
        cols = np.empty((2 * n1, 2 * n1))
        for k in range(2 * n1):
            wb = np.zeros(n1)
            wt = np.zeros(n1)
            (wb if k < n1 else wt)[k % n1] = 1.0
            om = hop.solve(zero, wb, wt)
            ph = self.poisson.solve(-om, 0.0, 0.0)
            ub, ut = wall_tangential(g, ph)
            cols[:, k] = np.concatenate([ub, ut])
        scale = 2.0 * np.concatenate(self.ak)
        M = np.eye(2 * n1) + scale[:, None] * cols
        entry = (sla.lu_factor(M), scale)
        self._influence[dt] = entry
        return entry

    def hyper_factor(self, dt: float) -> Array:
        k4 = self.grid.k[:, None] ** 4
        return 1.0 / (1.0 + self.params.nu_h * dt * k4)

    # --- elementary pieces -------------------------------------------------------------
    def streamfunction(self, omega: Array) -> Array:
        return self.poisson.solve(-omega, 0.0, -self.params.mean_flux)

    def make_state(self, t: float, step: int, omega: Array, theta: Array, phi: Array | None = None,
                   dt: float = 0.0, mismatch: float = 0.0) -> State:
        if phi is None:
            phi = self.streamfunction(omega)
        u = self.grid.perp_gradient(phi)
        return State(t, step, omega, theta, phi, u, dt, mismatch)

    def wall_mismatch(self, omega: Array, phi: Array) -> float:
        ub, ut = wall_tangential(self.grid, phi)
        target = -2.0 * np.concatenate([self.ak[0] * ub, self.ak[1] * ut])
        walls = np.concatenate([omega[:, 0], omega[:, -1]])
        scale = max(np.max(np.abs(target)), np.max(np.abs(walls)), 1e-12)
        return float(np.max(np.abs(walls - target)) / scale)

    def cfl_dt(self, state: State) -> float:
        p = self.params
        if p.dt is not None:
            return p.dt
        return min(p.dt_max, p.cfl * advective_limit(self.grid, state.u))

    def choose_dt(self, state: State) -> float:
        """Adaptive step restricted to dt_max / 2^k so operators are reused."""
        p = self.params
        if p.dt is not None:
            return p.dt
        limit = self.cfl_dt(state)
        k = max(0, math.ceil(math.log2(p.dt_max / limit) - 1e-12))
        return p.dt_max / 2**k

    # --- the step --------------------------------------------------------------------------
    def step(self, state: State, dt: float | None = None) -> State:
        g, p = self.grid, self.params
        dt = self.choose_dt(state) if dt is None else dt
        limit = advective_limit(g, state.u)
        if dt > p.cfl * limit * (1 + 1e-12):
            raise CFLError(dt, p.cfl * limit)
        u = state.u
        if p.diffusive:
            n_theta = g.advect(u, state.theta)
            theta = self.helmholtz(1.0 / dt).solve(state.theta / dt - n_theta, 1.0, 0.0)
        else:
            theta = self._transport(state.theta, u, dt)
        n_omega = g.advect(u, state.omega)
        rhs = (state.omega / dt - n_omega) / p.Pr + p.Ra * g.dx1(state.theta)
        if not (np.all(np.isfinite(rhs)) and np.all(np.isfinite(theta))):
            raise NaNError(state.step + 1)
        omega, phi, mismatch = self._couple(rhs, state.phi, dt)
        new = self.make_state(state.t + dt, state.step + 1, omega, theta, phi, dt, mismatch)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(theta))):
            raise NaNError(new.step)
        return new

    def _transport(self, theta: Array, u: Array, dt: float) -> Array:
        # Heun with frozen velocity; forward Euler is unstable for pure transport
        g = self.grid
        k1 = g.advect(u, theta)
        pred = theta - dt * k1
        out = theta - 0.5 * dt * (k1 + g.advect(u, pred))
        if self.params.nu_h > 0:
            out = g.ifft(g.fft(out) * self.hyper_factor(dt))
        return out

    def _couple(self, rhs: Array, phi_prev: Array, dt: float):
        p = self.params
        hop = self.helmholtz(self.omega_sigma(dt))
        n1 = self.grid.n1
        if p.coupling == "influence":
            lu, scale = self.influence(dt)
            om_p = hop.solve(rhs, 0.0, 0.0)
            ph_p = self.streamfunction(om_p)
            ub, ut = wall_tangential(self.grid, ph_p)
            gw = sla.lu_solve(lu, -scale * np.concatenate([ub, ut]))
            omega = hop.solve(rhs, gw[:n1], gw[n1:])
            phi = self.streamfunction(omega)
            return omega, phi, self.wall_mismatch(omega, phi)
        ub, ut = wall_tangential(self.grid, phi_prev)
        gb, gt = -2 * self.ak[0] * ub, -2 * self.ak[1] * ut
        for sweep in range(p.coupling_max_sweeps):
            omega = hop.solve(rhs, gb, gt)
            phi = self.streamfunction(omega)
            mismatch = self.wall_mismatch(omega, phi)
            if sweep + 1 >= p.K and mismatch <= p.coupling_tol:
                break
            ub, ut = wall_tangential(self.grid, phi)
            gb, gt = -2 * self.ak[0] * ub, -2 * self.ak[1] * ut
        return omega, phi, mismatch


def advective_limit(grid: MappedGrid, u: Array) -> float:
    """min over nodes of dy1/|u1| and H dy2/|u2| (inf for a fluid at rest)."""
    with np.errstate(divide="ignore", over="ignore"):
        a = grid.dy1 / np.abs(u[0])
        b = grid.H * grid.dy2 / np.abs(u[1])
    return float(min(np.min(a), np.min(b)))


def cfl_dt(grid: MappedGrid, state: State, params: SimParams) -> float:
    if params.dt is not None:
        return params.dt
    return min(params.dt_max, params.cfl * advective_limit(grid, state.u))


def initial_state(stepper: Stepper, kind: str = "conduction_perturbed", amplitude: float = 1e-2,
                  seed: int | None = None, blob: dict | None = None, stratification=(1.0, 0.0),
                  snapshot: dict | None = None) -> State:
    g, p = stepper.grid, stepper.params
    rng = np.random.default_rng(p.seed if seed is None else seed)
    omega = g.zeros()
    if kind == "conduction_perturbed":
        theta = 1.0 - g.Y2
        if amplitude:
            theta = theta + amplitude * g.dealias(smooth_random(g, rng))
        if p.diffusive:
            theta = np.clip(theta, 0.0, 1.0)
            theta[:, 0], theta[:, -1] = 1.0, 0.0
    elif kind == "stratified_blob":
        b = {"amplitude": 4.0, "width": 0.25, "center": (0.5 * g.period, 0.5), **(blob or {})}
        beta, gamma = stratification
        x1c, x2c = b["center"]
        dx = (g.Y1 - x1c + 0.5 * g.period) % g.period - 0.5 * g.period
        r2 = dx**2 + (g.X2 - x2c) ** 2
        theta = beta * g.X2 + gamma + b["amplitude"] * np.exp(-r2 / (2 * b["width"] ** 2))
    elif kind == "hydrostatic":
        beta, gamma = stratification
        theta = beta * g.X2 + gamma
    elif kind == "custom":
        if snapshot is None:
            raise ValueError("custom initial state needs a snapshot")
        for name, arr in snapshot.items():
            if name in ("omega", "theta", "phi") and arr.shape != g.shape:
                raise ValueError(f"snapshot field {name} has shape {arr.shape}, grid is {g.shape}")
        theta = np.array(snapshot["theta"], dtype=float)
        omega = np.array(snapshot.get("omega", omega), dtype=float)
        phi = snapshot.get("phi")
        return stepper.make_state(0.0, 0, omega, theta, None if phi is None else np.array(phi))
    else:
        raise ValueError(f"unknown initial state kind {kind!r}")
    return stepper.make_state(0.0, 0, omega, np.ascontiguousarray(theta))


Sink = Callable[[State, State, Stepper], None]


def run(stepper: Stepper, initial: State, cadence: int = 10, sinks: Iterable[Sink] = (),
        T: float | None = None, max_steps: int | None = None,
        on_step: Callable[[State], None] | None = None) -> State:
    """Advance to time T, calling every sink with (previous, current) every cadence steps.

    Sinks also see the initial state (previous = current) so records start at t0.
    """
    T = stepper.params.T if T is None else T
    sinks = list(sinks)
    state = initial
    if T <= initial.t:
        return state
    for sink in sinks:
        sink(state, state, stepper)
    try:
        # the last step may overshoot T so that cached operators are reused
        while state.t < T * (1 - 1e-10):
            prev, state = state, stepper.step(state)
            if on_step is not None:
                on_step(state)
            if state.step % cadence == 0:
                for sink in sinks:
                    sink(prev, state, stepper)
            if max_steps is not None and state.step >= max_steps:
                break
    finally:
        for sink in sinks:
            flush = getattr(sink, "flush", None)
            if flush is not None:
                flush()
    return state


def with_params(stepper: Stepper, **changes) -> Stepper:
    return Stepper(stepper.grid, replace(stepper.params, **changes))
