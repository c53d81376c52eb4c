"""Refinement studies for the integral identities, the elliptic solvers and the
coercivity probe. Each check yields one row of a pass/fail table."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import (RandomStreamfunction, boundary_pressure_work, coercivity_ratio,
                          grad_identity_residuals, laplacian_vorticity_residual)
from .elliptic import EllipticOperator, solve_dirichlet, solve_pressure_neumann, solve_streamfunction
from .fields import MappedGrid
from .geometry import GeometryError, SlipSpec, bound_norms, build_geometry, geometry_from_config, metric_coeffs

Array = np.ndarray

NAMED_GEOMETRIES = {
    "flat": {"period": 2.0, "h_minus": 0.0, "h_plus": 1.0},
    "curved": {"period": 2.0, "h_minus": {"mean": 0.0, "modes": [[1, 0.0, 0.1]]},
               "h_plus": {"mean": 1.0, "modes": [[1, 0.0, 0.1]]}},
}


@dataclass
class Check:
    name: str
    geometry: str
    values: list[float]
    orders: list[float] = field(default_factory=list)
    passed: bool = False
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "geometry": self.geometry, "values": self.values,
                "orders": self.orders, "passed": self.passed, "detail": self.detail}


def observed_orders(values, ratio: float = 2.0) -> list[float]:
    v = [float(x) for x in values]
    out = []
    for a, b in zip(v, v[1:]):
        out.append(math.log(a / b, ratio) if a > 0 and b > 0 else float("inf"))
    return out


def refinement_verdict(values, min_order: float, floor: float) -> tuple[list[float], bool, str]:
    """Pass when every refinement step shows order >= min_order, or the error has
    reached the round-off floor."""
    orders = observed_orders(values)
    ok = True
    for k, order in enumerate(orders):
        if values[k + 1] <= floor:
            continue
        if not order >= min_order:
            ok = False
    detail = "at round-off floor" if all(v <= floor for v in values) else ""
    return orders, ok, detail


def named_geometry(name, n1: int):
    spec = NAMED_GEOMETRIES[name] if isinstance(name, str) else name
    label = name if isinstance(name, str) else "custom"
    return label, geometry_from_config({"normalize": False, **spec}, n1)


def _pressure_theta(grid: MappedGrid) -> Array:
    return 1.0 - grid.Y2 + 0.1 * np.sin(np.pi * grid.Y1) * np.sin(np.pi * grid.Y2)


def identity_refinement(geom, label: str, resolutions, n_fields: int, seed: int, min_order: float,
                        floor: float, slip: SlipSpec) -> list[Check]:
    rng = np.random.default_rng(seed)
    fields = [RandomStreamfunction.draw(rng, geom.period) for _ in range(n_fields)]
    names = ["grad_id_12", "grad_id_23", "grad_id_13", "laplacian_vorticity", "pressure_work"]
    series = {k: [] for k in names}
    for n2 in resolutions:
        g = MappedGrid(geom, int(n2))
        neumann = EllipticOperator(g, bc="neumann", method="flat" if g.is_flat else "direct")
        theta = _pressure_theta(g)
        worst = dict.fromkeys(names, 0.0)
        for f in fields:
            u = f.velocity(g)
            r12, r23, r13 = grad_identity_residuals(g, u)
            scale = max(g.lp_norm(g.vector_laplacian(u)), 1e-300)
            p, _ = solve_pressure_neumann(neumann, u, theta, 100.0, 1.0, slip, warn_defect=np.inf)
            direct, parts = boundary_pressure_work(g, u, p, slip)
            mismatch = abs(direct - parts) / max(abs(direct), abs(parts), 1e-300)
            for k, v in zip(names, (r12, r23, r13, laplacian_vorticity_residual(g, u) / scale, mismatch)):
                worst[k] = max(worst[k], v)
        for k in names:
            series[k].append(worst[k])
    out = []
    for k in names:
        orders, ok, detail = refinement_verdict(series[k], min_order, floor)
        out.append(Check(k, label, series[k], orders, ok, detail))
    return out


def _manufactured(grid: MappedGrid, sigma: float):
    x1, x2 = grid.Y1, grid.X2
    phi = np.sin(np.pi * x1) * np.cos(1.3 * x2) + x2**3
    lap = -(np.pi**2 + 1.69) * np.sin(np.pi * x1) * np.cos(1.3 * x2) + 6 * x2
    return phi, sigma * phi - lap


def manufactured_refinement(geom, label: str, resolutions, min_order: float, floor: float) -> list[Check]:
    out = []
    for sigma, name in ((0.0, "manufactured_poisson"), (10.0, "manufactured_helmholtz")):
        errs = []
        for n2 in resolutions:
            g = MappedGrid(geom, int(n2))
            op = EllipticOperator(g, sigma=sigma)
            exact, rhs = _manufactured(g, sigma)
            phi = op.solve(rhs, exact[:, 0], exact[:, -1])
            errs.append(float(np.max(np.abs(phi - exact))))
        orders, ok, detail = refinement_verdict(errs, min_order, floor)
        out.append(Check(name, label, errs, orders, ok, detail))
    return out


def solver_agreement(n1: int, n2: int, seed: int, tol: float = 1e-9) -> Check:
    """Flat fast path against the generic sparse paths on a flat channel."""
    g = MappedGrid(build_geometry(2.0, 0.0, 1.0, n1), n2)
    rng = np.random.default_rng(seed)
    f = g.dealias(rng.standard_normal(g.shape))
    worst = 0.0
    for sigma, bc in ((0.0, "dirichlet"), (5.0, "dirichlet"), (0.0, "neumann")):
        sols = {}
        for method in ("flat", "direct", "gmres"):
            op = EllipticOperator(g, sigma=sigma, bc=bc, method=method)
            if bc == "neumann":
                src = f - g.mean(f)
                p = op.solve(src, 0.0, 0.0)
                sols[method] = p - g.mean(p)
            else:
                sols[method] = op.solve(f, 0.3, -0.2)
        scale = max(np.max(np.abs(sols["direct"])), 1e-300)
        worst = max(worst, *(float(np.max(np.abs(sols[m] - sols["direct"])) / scale) for m in ("flat", "gmres")))
    return Check("fast_vs_sparse", "flat", [worst], [], worst <= tol, f"tolerance {tol:g}")


def flux_identity(geom, label: str, n2: int, seed: int, mean_flux: float = 0.37, tol: float = 1e-8) -> Check:
    g = MappedGrid(geom, n2)
    rng = np.random.default_rng(seed)
    omega = g.dealias(rng.standard_normal(g.shape))
    phi = solve_streamfunction(EllipticOperator(g), omega, mean_flux)
    u = g.perp_gradient(phi)
    flux = g.integrate_area(u[0]) / geom.period
    err = abs(flux + float(np.mean(phi[:, -1])))
    return Check("flux_identity", label, [err], [], err <= tol, f"tolerance {tol:g}")


def ellipticity_check(geom, label: str, n2: int, corrupt: bool) -> Check:
    try:
        cmap = metric_coeffs(geom, n2, corrupt=corrupt)
    except GeometryError as exc:
        return Check("metric_ellipticity", label, [float("nan")], [], False, str(exc))
    c = cmap.ellipticity()
    return Check("metric_ellipticity", label, [c], [], c > 0, "")


def coercivity_study(geom, label: str, alpha: float, resolutions, ensemble: int, seed: int,
                     fraction: float = 0.01, spread: float = 0.2) -> Check:
    slip = SlipSpec.constant(alpha, geom.period)
    C2 = 1.0 + bound_norms(geom, slip)["inv_alpha_kappa"]
    mins = []
    for n2 in resolutions:
        g = MappedGrid(geom, int(n2))
        rng = np.random.default_rng(seed)
        ratios = [coercivity_ratio(g, RandomStreamfunction.draw(rng, geom.period).velocity(g), slip)
                  for _ in range(ensemble)]
        mins.append(float(min(ratios)))
    stable = all(abs(m / mins[0] - 1) <= spread for m in mins[1:])
    ok = min(mins) > 0 and stable and min(mins) >= fraction / C2
    detail = f"alpha={alpha:g} C2^-1={1 / C2:.4g} min/C2^-1={min(mins) * C2:.3g}"
    return Check(f"coercivity_alpha_{alpha:g}", label, mins, [], ok, detail)


def run_identity_suite(ident: dict, log=None) -> list[Check]:
    n1 = int(ident["n1"])
    seed = int(ident["seed"])
    floor = float(ident["round_off_floor"])
    min_order = float(ident["min_order"])
    slip = SlipSpec.constant(1.0)
    checks: list[Check] = []

    def add(items):
        for c in items:
            checks.append(c)
            if log:
                log(c)

    for spec in ident["geometries"]:
        label, geom = named_geometry(spec, n1)
        add([ellipticity_check(geom, label, int(ident["resolutions"][0]), bool(ident["corrupt_metric"]))])
        if not checks[-1].passed:
            continue
        add(identity_refinement(geom, label, ident["resolutions"], int(ident["fields"]), seed,
                                min_order, floor, slip))
        add(manufactured_refinement(geom, label, ident["manufactured_resolutions"], min_order, floor))
        add([flux_identity(geom, label, int(ident["resolutions"][0]), seed)])
        for alpha in ident["alphas"]:
            add([coercivity_study(geom, label, float(alpha), ident["coercivity_resolutions"],
                                  int(ident["ensemble"]), seed)])
    add([solver_agreement(n1, int(ident["resolutions"][0]), seed)])
    return checks


def format_table(checks: list[Check]) -> str:
    lines = [f"{'check':<26} {'geometry':<8} {'result':<6} {'values':<40} orders"]
    for c in checks:
        vals = " ".join(f"{v:.2e}" for v in c.values)
        ords = " ".join(f"{o:.2f}" for o in c.orders)
        lines.append(f"{c.name:<26} {c.geometry:<8} {'PASS' if c.passed else 'FAIL':<6} {vals:<40} {ords}"
                     + (f"  [{c.detail}]" if c.detail else ""))
    return "\n".join(lines)
