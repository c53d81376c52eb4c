import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from navslip.elliptic import (EllipticOperator, SolverError, hminus1_proxy, solve_dirichlet,
                              solve_helmholtz_dirichlet, solve_pressure_neumann, solve_streamfunction)
from navslip.fields import MappedGrid
from navslip.geometry import SlipSpec, flat_geometry

from conftest import order


def test_validation(flat, curved):
    g = MappedGrid(flat, 16)
    with pytest.raises(ValueError):
        EllipticOperator(g, sigma=-1)
    with pytest.raises(ValueError):
        EllipticOperator(g, bc="robin")
    with pytest.raises(ValueError):
        EllipticOperator(g, sigma=1.0, bc="neumann")
    with pytest.raises(ValueError):
        EllipticOperator(MappedGrid(curved, 16), method="flat")
    with pytest.raises(ValueError):
        solve_helmholtz_dirichlet(EllipticOperator(g), np.zeros(g.shape))


@pytest.mark.parametrize("method", ["flat", "direct", "gmres"])
def test_zero_data_gives_zero(flat, method):
    g = MappedGrid(flat, 16)
    phi = solve_dirichlet(EllipticOperator(g, method=method), np.zeros(g.shape))
    assert np.max(np.abs(phi)) < 1e-14


@pytest.mark.parametrize("method", ["direct", "gmres"])
def test_manufactured_curved(curved, method):
    errs = []
    for n2 in (16, 32, 64):
        g = MappedGrid(curved, n2)
        x1, x2 = g.Y1, g.X2
        exact = np.sin(np.pi * x1) * np.cos(1.3 * x2) + x2**3
        lap = -(np.pi**2 + 1.69) * np.sin(np.pi * x1) * np.cos(1.3 * x2) + 6 * x2
        phi = solve_dirichlet(EllipticOperator(g, method=method), lap, exact[:, 0], exact[:, -1])
        errs.append(np.max(np.abs(phi - exact)))
    assert np.all(order(errs) >= 1.9)


def test_streamfunction_uniform_flow(flat):
    g = MappedGrid(flat, 16)
    phi = solve_streamfunction(EllipticOperator(g), np.zeros(g.shape), mean_flux=1.0)
    assert np.max(np.abs(phi + g.Y2)) < 1e-13
    u = g.perp_gradient(phi)
    assert np.max(np.abs(u[0] - 1.0)) < 1e-12 and np.max(np.abs(u[1])) < 1e-12


def test_helmholtz_constant(flat):
    g = MappedGrid(flat, 16)
    sigma = 7.0
    phi = solve_helmholtz_dirichlet(EllipticOperator(g, sigma=sigma), np.full(g.shape, sigma), 1.0, 1.0)
    assert np.max(np.abs(phi - 1.0)) < 1e-12


def test_helmholtz_residual_and_gmres(curved, rng):
    g = MappedGrid(curved, 32)
    op = EllipticOperator(g, sigma=4.0, method="gmres")
    f = g.dealias(rng.standard_normal(g.shape))
    phi = op.solve(f, 0.1, -0.1)
    assert op.residual(phi, f, 0.1, -0.1) < 1e-9
    assert op.last_iterations < 60
    ref = EllipticOperator(g, sigma=4.0, method="direct").solve(f, 0.1, -0.1)
    assert np.max(np.abs(phi - ref)) < 1e-8 * np.max(np.abs(ref))


def test_gmres_failure_raises(curved, rng):
    g = MappedGrid(curved, 32)
    op = EllipticOperator(g, method="gmres", tol=1e-30, maxiter=1)
    with pytest.raises(SolverError):
        op.solve(rng.standard_normal(g.shape))


def test_hydrostatic_pressure(flat):
    g = MappedGrid(flat, 32)
    op = EllipticOperator(g, bc="neumann")
    u = np.zeros((2,) + g.shape)
    theta = 1.0 - g.Y2
    p, defect = solve_pressure_neumann(op, u, theta, 1.0, 1.0, SlipSpec.constant(1.0))
    exact = g.Y2 - 0.5 * g.Y2**2
    exact -= g.mean(exact)
    assert defect < 1e-10
    assert np.max(np.abs(p - exact)) < 1e-10


def test_hminus1_zero_and_example(flat):
    g = MappedGrid(flat, 64)
    op = EllipticOperator(g)
    assert hminus1_proxy(op, np.zeros(g.shape)) == 0.0
    # -w'' = 1, w(0)=w(1)=0: w = y(1-y)/2, |grad w|^2 integrates to period/12
    val = hminus1_proxy(op, np.ones(g.shape), subtract_mean=False)
    assert val == pytest.approx(np.sqrt(2.0 / 12.0), rel=1e-3)
    assert hminus1_proxy(op, np.ones(g.shape)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_hminus1_homogeneous(a, b, seed):
    g = MappedGrid(flat_geometry(2.0, 16), 16)
    op = EllipticOperator(g)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    assert hminus1_proxy(op, a * f) == pytest.approx(abs(a) * hminus1_proxy(op, f), rel=1e-9, abs=1e-12)
    f2 = np.random.default_rng(seed + 1).standard_normal(g.shape)
    assert hminus1_proxy(op, f + b * f2) <= hminus1_proxy(op, f) + abs(b) * hminus1_proxy(op, f2) + 1e-10


def test_streamfunction_vorticity_roundtrip(curved):
    errs = []
    for n2 in (32, 64, 128):
        g = MappedGrid(curved, n2)
        omega = np.sin(np.pi * g.Y1) * np.cos(2.0 * g.X2) + g.X2**2
        phi = solve_streamfunction(EllipticOperator(g, method="direct"), omega, 0.3)
        errs.append(g.lp_norm(g.vorticity(g.perp_gradient(phi)) - omega))
        assert abs(g.integrate_area(g.perp_gradient(phi)[0]) / g.period - 0.3) < 1e-8
    assert np.all(order(errs) >= 1.8)
