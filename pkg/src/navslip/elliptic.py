"""Elliptic solves in straightened coordinates.

The operator is A = sigma * H - Lbar with
Lbar phi = d_l (a_kl d_k phi), H = h+ - h- the Jacobian of the straightening
map, so that sigma phi - Delta phi = r is equivalent to A phi = H r.

Unknowns are ordered wall-normal-major (index j * N1 + i) so the assembled
matrix is block tridiagonal.
"""

from __future__ import annotations

import warnings
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import WALL_STENCIL, MappedGrid

Array = np.ndarray


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final relative residual {residual:.3e})")
        self.residual = residual


class CompatibilityWarning(UserWarning):
    pass


def fourier_diff_matrix(grid: MappedGrid) -> Array:
    eye = np.eye(grid.n1)
    return np.fft.irfft(1j * grid.k_eff[:, None] * np.fft.rfft(eye, axis=0), n=grid.n1, axis=0)


def nyquist_projector(n1: int) -> Array:
    s = (-1.0) ** np.arange(n1)
    return np.outer(s, s) / n1


def _flatten(f: Array) -> Array:
    return f.T.reshape(-1)


def _unflatten(v: Array, grid: MappedGrid) -> Array:
    return v.reshape(grid.n2 + 1, grid.n1).T


class FlatModeSolver:
    """Per-Fourier-mode tridiagonal solves of the constant-coefficient operator.

    Exact for flat channels; with averaged coefficients it serves as the
    preconditioner for the curved case.
    """

    def __init__(self, grid: MappedGrid, sigma: float, bc: str, c11: float = 1.0,
                 c22: float = 1.0, mass: float = 1.0, qn: float = 1.0):
        self.grid = grid
        self.bc = bc
        n1, n = grid.n1, grid.n2 + 1
        m = n1 // 2 + 1
        self.m = m
        h2 = grid.dy2**2
        diag = np.empty((m, n))
        lower = np.zeros((m, n))   # coefficient of j-1
        upper = np.zeros((m, n))   # coefficient of j+1
        diag[:, 1:-1] = (sigma * mass + c11 * grid.k[:, None]**2 + 2 * c22 / h2)
        lower[:, 1:-1] = -c22 / h2
        upper[:, 1:-1] = -c22 / h2
        rows, cols, vals = [], [], []
        base = (np.arange(m) * n)[:, None]
        jj = np.arange(1, n - 1)[None, :]
        for off, coef in ((0, diag[:, 1:-1]), (-1, lower[:, 1:-1]), (1, upper[:, 1:-1])):
            rows.append((base + jj).ravel())
            cols.append((base + jj + off).ravel())
            vals.append(coef.ravel())
        if bc == "dirichlet":
            for j in (0, n - 1):
                rows.append(base.ravel() + j)
                cols.append(base.ravel() + j)
                vals.append(np.ones(m))
        elif bc == "neumann":
            stencil = -qn * WALL_STENCIL / grid.dy2
            for j0, sgn in ((0, 1), (n - 1, -1)):
                for q, c in enumerate(stencil):
                    rows.append(base.ravel() + j0)
                    cols.append(base.ravel() + j0 + sgn * q)
                    vals.append(np.full(m, c))
        else:
            raise ValueError(f"unknown boundary condition {bc!r}")
        size = m * n
        if bc == "neumann":
            # border mode 0: source shift column and zero-mean row
            rows.append(np.arange(1, n - 1))
            cols.append(np.full(n - 2, size))
            vals.append(np.full(n - 2, -mass))
            rows.append(np.full(n, size))
            cols.append(np.arange(n))
            vals.append(grid.w2.copy())
            size += 1
        A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))
        self.size = size
        self.lu = spla.splu(A)

    def solve_modes(self, b: Array) -> tuple[Array, complex]:
        """b: physical right-hand side (N1, N2+1) already holding wall rows."""
        bh = np.fft.rfft(b, axis=0)
        rhs = np.zeros((self.size, 2))
        rhs[: self.m * bh.shape[1], 0] = bh.real.ravel()
        rhs[: self.m * bh.shape[1], 1] = bh.imag.ravel()
        x = self.lu.solve(rhs)
        n = bh.shape[1]
        xh = (x[: self.m * n, 0] + 1j * x[: self.m * n, 1]).reshape(self.m, n)
        lam = x[-1, 0] / self.grid.n1 if self.bc == "neumann" else 0.0
        return np.fft.irfft(xh, n=self.grid.n1, axis=0), lam


class EllipticOperator:
    """sigma * H - Lbar with Dirichlet or Neumann wall rows."""

    def __init__(self, grid: MappedGrid, sigma: float = 0.0, bc: str = "dirichlet",
                 method: str = "auto", tol: float = 1e-11, maxiter: int = 400):
        if sigma < 0:
            raise ValueError("Helmholtz shift must be non-negative")
        if bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {bc!r}")
        if bc == "neumann" and sigma != 0:
            raise ValueError("Neumann rows are only supported for the pure Laplacian")
        if method == "auto":
            method = "flat" if grid.is_flat else "gmres"
        if method == "flat" and not grid.is_flat:
            raise ValueError("the flat fast path needs a flat channel")
        self.grid = grid
        self.sigma = float(sigma)
        self.bc = bc
        self.method = method
        self.tol = tol
        self.maxiter = maxiter
        self.last_iterations = 0

    # --- coefficients ------------------------------------------------------------
    @cached_property
    def _coeffs(self):
        g = self.grid
        cm = g.cmap
        y_half = (np.arange(g.n2) + 0.5) * g.dy2
        sl = g.geom.hm1[:, None] + (g.geom.hp1 - g.geom.hm1)[:, None] * y_half[None, :]
        a22_half = (1 + sl**2) / g.geom.gap[:, None]
        return cm.a11[:, 0], cm.a12, a22_half

    @cached_property
    def _neumann_coeffs(self):
        g = self.grid.geom
        H = g.gap
        out = {}
        for side, h1 in (("bottom", g.hm1), ("top", g.hp1)):
            sp_ = np.sqrt(1 + h1**2)
            out[side] = (h1 / sp_, (1 + h1**2) / (H * sp_))
        return out

    # --- matrix-free application ---------------------------------------------------
    def apply(self, phi: Array) -> Array:
        g = self.grid
        a11, a12, a22h = self._coeffs
        h = g.dy2
        H = g.geom.gap
        kN = g.k[-1]
        nyq = np.fft.rfft(phi, axis=0)
        nyq[:-1] = 0.0
        nyq_part = np.fft.irfft(nyq, n=g.n1, axis=0)
        t1 = g.d_y1(a11[:, None] * g.d_y1(phi)) - kN**2 * np.mean(a11) * nyq_part
        out = np.empty_like(phi)
        Lbar = t1[:, 1:-1].copy()
        dphi2 = (phi[:, 2:] - phi[:, :-2]) / (2 * h)
        Lbar += g.d_y1(a12[:, 1:-1] * dphi2)
        q = a12 * g.d_y1(phi)
        Lbar += (q[:, 2:] - q[:, :-2]) / (2 * h)
        flux = a22h * (phi[:, 1:] - phi[:, :-1]) / h
        Lbar += (flux[:, 1:] - flux[:, :-1]) / h
        out[:, 1:-1] = self.sigma * H[:, None] * phi[:, 1:-1] - Lbar
        if self.bc == "dirichlet":
            out[:, 0] = phi[:, 0]
            out[:, -1] = phi[:, -1]
        else:
            out[:, 0] = self.neumann_trace(phi, "bottom")
            out[:, -1] = self.neumann_trace(phi, "top")
        return out

    def neumann_trace(self, phi: Array, side: str) -> Array:
        """Discrete n . grad phi on a wall (the Neumann row)."""
        g = self.grid
        t, q = self._neumann_coeffs[side]
        h = g.dy2
        if side == "bottom":
            dn = phi[:, :4] @ WALL_STENCIL / h
            return t * g.d_y1(phi[:, :1])[:, 0] - q * dn
        dn = -(phi[:, :-5:-1] @ WALL_STENCIL) / h
        return -t * g.d_y1(phi[:, -1:])[:, 0] + q * dn

    # --- assembled matrix ----------------------------------------------------------
    @cached_property
    def matrix(self) -> sp.csr_matrix:
        g = self.grid
        n1, n = g.n1, g.n2 + 1
        h = g.dy2
        a11, a12, a22h = self._coeffs
        D1 = fourier_diff_matrix(g)
        T1 = D1 @ (a11[:, None] * D1) - g.k[-1]**2 * np.mean(a11) * nyquist_projector(n1)
        H = g.geom.gap
        rows, cols, vals = [], [], []
        ii = np.arange(n1)
        J = np.arange(1, n - 1)

        def add_blocks(jrow, jcol, blocks):
            r = (jrow[:, None, None] * n1 + ii[None, :, None])
            c = (jcol[:, None, None] * n1 + ii[None, None, :])
            r, c = np.broadcast_arrays(r, c)
            mask = blocks != 0
            rows.append(r[mask]); cols.append(c[mask]); vals.append(blocks[mask])

        def add_diag(jrow, jcol, d):
            r = (jrow[:, None] * n1 + ii[None, :])
            c = (jcol[:, None] * n1 + ii[None, :])
            rows.append(r.ravel()); cols.append(c.ravel()); vals.append(d.ravel())

        # -T1 plus sigma H on the diagonal blocks
        add_blocks(J, J, np.broadcast_to(-T1, (len(J), n1, n1)).copy())
        aT = a12.T  # (n, n1)
        if np.any(a12 != 0):
            up = (D1[None] * aT[J][:, None, :] + aT[J + 1][:, :, None] * D1[None]) / (2 * h)
            dn = (D1[None] * aT[J][:, None, :] + aT[J - 1][:, :, None] * D1[None]) / (2 * h)
            add_blocks(J, J + 1, -up)
            add_blocks(J, J - 1, dn)
        ap = a22h.T[J] / h**2       # (J, n1) at j + 1/2
        am = a22h.T[J - 1] / h**2   # at j - 1/2
        add_diag(J, J, ap + am + self.sigma * H[None, :])
        add_diag(J, J + 1, -ap)
        add_diag(J, J - 1, -am)
        if self.bc == "dirichlet":
            for j in (0, n - 1):
                add_diag(np.array([j]), np.array([j]), np.ones((1, n1)))
        else:
            st = -WALL_STENCIL / h
            for side, j0, sgn in (("bottom", 0, 1), ("top", n - 1, -1)):
                t, q = self._neumann_coeffs[side]
                tang = (t if side == "bottom" else -t)[:, None] * D1
                add_blocks(np.array([j0]), np.array([j0]), tang[None])
                for k, c in enumerate(st):
                    add_diag(np.array([j0]), np.array([j0 + sgn * k]), (q * c)[None, :])
        size = n1 * n
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))
        A.sum_duplicates()
        return A

    @cached_property
    def bordered_matrix(self) -> sp.csr_matrix:
        g = self.grid
        A = self.matrix
        col = -_flatten(g.H * np.concatenate(
            [np.zeros((g.n1, 1)), np.ones((g.n1, g.n2 - 1)), np.zeros((g.n1, 1))], axis=1))
        row = _flatten(g.area_weights)
        return sp.bmat([[A, sp.csr_matrix(col[:, None])],
                        [sp.csr_matrix(row[None, :]), None]], format="csr")

    @cached_property
    def _lu(self):
        A = self.bordered_matrix if self.bc == "neumann" else self.matrix
        return spla.splu(A.tocsc())

    @cached_property
    def _flat(self) -> FlatModeSolver:
        g = self.grid
        a11, _, a22h = self._coeffs
        qn = float(np.mean(self._neumann_coeffs["bottom"][1]))
        return FlatModeSolver(g, self.sigma, self.bc, c11=float(np.mean(a11)),
                              c22=float(np.mean(a22h)), mass=float(np.mean(g.geom.gap)), qn=qn)

    # --- solves ----------------------------------------------------------------------
    def _rhs(self, rhs: Array, bottom, top) -> Array:
        g = self.grid
        b = np.empty(g.shape)
        b[:, 1:-1] = g.H[:, 1:-1] * rhs[:, 1:-1]
        b[:, 0] = bottom
        b[:, -1] = top
        return b

    def solve(self, rhs: Array, bottom=0.0, top=0.0) -> Array:
        """Solve sigma phi - Delta phi = rhs with wall data (values or normal derivatives)."""
        phi, _ = self._solve(rhs, bottom, top)
        return phi

    def _solve(self, rhs, bottom, top):
        g = self.grid
        b = self._rhs(np.asarray(rhs, dtype=float), bottom, top)
        if self.method == "flat":
            return self._flat.solve_modes(b)
        neumann = self.bc == "neumann"
        bv = _flatten(b)
        if neumann:
            bv = np.append(bv, 0.0)
        if self.method == "direct":
            x = self._lu.solve(bv)
        elif self.method == "gmres":
            x = self._gmres(bv)
        else:
            raise ValueError(f"unknown solver method {self.method!r}")
        if neumann:
            return _unflatten(x[:-1], g), x[-1]
        return _unflatten(x, g), 0.0

    def _gmres(self, bv: Array) -> Array:
        g = self.grid
        A = self.bordered_matrix if self.bc == "neumann" else self.matrix
        size = A.shape[0]
        nf = g.n1 * (g.n2 + 1)

        def precond(v):
            x, lam = self._flat.solve_modes(_unflatten(v[:nf], g))
            out = _flatten(x)
            return np.append(out, lam) if size > nf else out

        M = spla.LinearOperator((size, size), matvec=precond)
        counter = {"n": 0}

        def cb(_):
            counter["n"] += 1

        x0 = precond(bv)
        x, info = spla.gmres(A, bv, x0=x0, M=M, rtol=self.tol, atol=0.0, restart=60,
                             maxiter=self.maxiter, callback=cb, callback_type="pr_norm")
        self.last_iterations = counter["n"]
        bnorm = np.linalg.norm(bv) or 1.0
        res = float(np.linalg.norm(bv - A @ x) / bnorm)
        if info != 0 or res > 100 * self.tol:
            raise SolverError("GMRES did not converge", res)
        return x

    def residual(self, phi: Array, rhs: Array, bottom=0.0, top=0.0) -> float:
        b = self._rhs(rhs, bottom, top)
        r = self.apply(phi) - b
        return float(np.linalg.norm(r) / (np.linalg.norm(b) or 1.0))


# --- convenience API -------------------------------------------------------------


def solve_dirichlet(op: EllipticOperator, f: Array, g_minus=0.0, g_plus=0.0) -> Array:
    """Solve Delta phi = f (sigma = 0) or sigma phi - Delta phi = -f otherwise, with wall values."""
    return op.solve(-np.asarray(f, dtype=float), g_minus, g_plus)


def solve_helmholtz_dirichlet(op: EllipticOperator, rhs: Array, g_minus=0.0, g_plus=0.0) -> Array:
    if op.sigma <= 0:
        raise ValueError("Helmholtz solve needs sigma > 0")
    return op.solve(rhs, g_minus, g_plus)


def solve_streamfunction(op: EllipticOperator, omega: Array, mean_flux: float = 0.0) -> Array:
    """phi with Delta phi = omega, phi = 0 on the bottom wall and -mean_flux on the top."""
    return op.solve(-omega, 0.0, -mean_flux)


def pressure_data(grid: MappedGrid, u: Array, theta: Array, Ra: float, Pr: float, slip):
    """Right-hand side and Neumann data of the pressure problem."""
    G = grid.velocity_gradient(u)
    contraction = (G[0, 0] * G[0, 0] + G[0, 1] * G[1, 0]
                   + G[1, 0] * G[0, 1] + G[1, 1] * G[1, 1])
    f = -contraction / Pr + Ra * grid.dx2(theta)
    data = {}
    for side in ("bottom", "top"):
        fr = grid.frame(side)
        ut = grid.tangential_velocity(u, side)
        ak = slip.alpha(side, fr.x1) + fr.kappa
        th = grid.wall_trace(theta, side)
        data[side] = (-fr.kappa * ut**2 / Pr + 2 * grid.tangential_derivative(ak * ut, side)
                      + fr.normal[1] * Ra * th)
    return f, data["bottom"], data["top"]


def solve_pressure_neumann(op: EllipticOperator, u: Array, theta: Array, Ra: float, Pr: float,
                           slip, warn_defect: float = 1e-2) -> tuple[Array, float]:
    """Zero-mean pressure and the relative compatibility defect that was removed."""
    if op.bc != "neumann":
        raise ValueError("pressure solve needs a Neumann operator")
    grid = op.grid
    f, gb, gt = pressure_data(grid, u, theta, Ra, Pr, slip)
    p, lam = op._solve(-f, gb, gt)
    scale = max(float(np.max(np.abs(f))), float(np.max(np.abs(gb))), float(np.max(np.abs(gt))), 1e-300)
    defect = abs(float(lam)) / scale
    if defect > warn_defect:
        warnings.warn(f"pressure compatibility defect {defect:.3e} exceeds {warn_defect}",
                      CompatibilityWarning, stacklevel=2)
    p = p - grid.mean(p)
    return p, defect


def hminus1_proxy(op: EllipticOperator, f: Array, subtract_mean: bool = True) -> float:
    """(sum_i ||grad w_i||^2)^(1/2) with -Delta w_i = f_i (mean removed), w_i = 0 on walls."""
    if op.bc != "dirichlet" or op.sigma != 0:
        raise ValueError("H^-1 proxy needs the Dirichlet Laplacian")
    grid = op.grid
    total = 0.0
    for comp in (f if f.ndim == 3 else f[None]):
        src = comp - grid.mean(comp) if subtract_mean else comp
        w = op.solve(src, 0.0, 0.0)
        total += grid.h1_seminorm(w) ** 2
    return float(np.sqrt(total))
