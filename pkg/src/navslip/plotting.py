"""Figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def nusselt_series(rows: list[dict], path, window: tuple[float, float] | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.array([r["t"] for r in rows])
        for key in rows[0]:
            if key.startswith("nu_"):
                y = np.array([r[key] for r in rows], dtype=float)
                if np.all(np.isfinite(y)):
                    ax.plot(t, y, lw=1, label=key)
        if window:
            ax.axvspan(*window, color="0.85", zorder=0, label="averaging window")
        ax.set_xlabel("t")
        ax.set_ylabel("Nu")
        ax.legend(fontsize=7)
        return _save(fig, path)


def energy_series(rows: list[dict], path) -> Path:
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.0))
        t = np.array([r["t"] for r in rows])
        a.plot(t, [r["kinetic_energy"] for r in rows], lw=1)
        a.set_ylabel("|u|^2")
        res = np.array([r["energy_residual"] for r in rows], dtype=float)
        m = np.isfinite(res) & (res > 0)
        if np.any(m):
            b.semilogy(t[m], res[m], lw=1)
        b.set_ylabel("energy residual")
        b.set_xlabel("t")
        return _save(fig, path)


def field_image(grid, values: np.ndarray, path, title: str = "") -> Path:
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(6.4, 6.4 / max(grid.period, 1.0) + 0.8))
        x1 = np.concatenate([grid.Y1, grid.Y1[:1] + grid.period])
        x2 = np.concatenate([grid.X2, grid.X2[:1]])
        v = np.concatenate([values, values[:1]])
        im = ax.pcolormesh(x1, x2, v, shading="gouraud", cmap="RdBu_r")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        return _save(fig, path)


def sweep_loglog(rows: list[dict], fit: dict | None, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pts = [(r["Ra"], r["Nu"]) for r in rows if r.get("Nu") is not None]
        if pts:
            ra, nu = map(np.array, zip(*pts))
            ax.loglog(ra, nu, "o", label="measured")
            if fit:
                xs = np.geomspace(ra.min(), ra.max(), 50)
                ax.loglog(xs, math.exp(fit["intercept"]) * xs ** fit["beta"], "--",
                          label=f"fit beta={fit['beta']:.3f}")
        ax.set_xlabel("Ra")
        ax.set_ylabel("Nu")
        ax.legend()
        return _save(fig, path)


def nd_monitors(rows: list[dict], path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 6.4))
        t = np.array([r["t"] for r in rows])
        l2 = np.array([r["theta_l2"] for r in rows])
        l4 = np.array([r["theta_l4"] for r in rows])
        axes[0].plot(t, l2 / l2[0] - 1, lw=1, label="|theta|_2 drift")
        axes[0].plot(t, l4 / l4[0] - 1, lw=1, label="|theta|_4 drift")
        axes[0].legend()
        u = np.array([r["u_l2"] for r in rows], dtype=float)
        m = u > 0
        axes[1].semilogy(t[m], u[m], lw=1)
        axes[1].set_ylabel("|u|_2")
        h = np.array([r["hydrostatic_residual"] for r in rows], dtype=float)
        m = np.isfinite(h) & (h > 0)
        axes[2].semilogy(t[m], h[m], lw=1)
        axes[2].set_ylabel("hydrostatic residual")
        axes[2].set_xlabel("t")
        return _save(fig, path)


def run_figures(grid, rows: list[dict], state, out, diffusive: bool, window=None) -> list[Path]:
    out = Path(out)
    paths = []
    if not rows:
        return paths
    if diffusive:
        paths.append(nusselt_series(rows, out / "nusselt.png", window))
    else:
        paths.append(nd_monitors(rows, out / "nd_monitors.png"))
    paths.append(energy_series(rows, out / "energy.png"))
    paths.append(field_image(grid, state.theta, out / "theta.png", f"theta, t={state.t:.3g}"))
    paths.append(field_image(grid, state.omega, out / "omega.png", f"omega, t={state.t:.3g}"))
    return paths
