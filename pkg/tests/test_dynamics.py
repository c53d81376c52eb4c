import numpy as np
import pytest

from navslip.dynamics import (CFLError, SimParams, Stepper, advective_limit, initial_state, run,
                              smooth_random, with_params)
from navslip.fields import MappedGrid
from navslip.geometry import build_geometry, flat_geometry

from conftest import CURVED


def stepper(geom, n2=16, **kw):
    return Stepper(MappedGrid(geom, n2), SimParams(**kw))


def test_params_validation():
    for bad in ({"Ra": 0.5}, {"Pr": 0}, {"mode": "x"}, {"mode": "non_diffusive", "Ra": 10},
                {"dt": -1}, {"cfl": 0}, {"T": -1}, {"coupling": "x"}, {"K": 0}, {"nu_h": -1}):
        with pytest.raises(ValueError):
            SimParams(**bad)


def test_conduction_is_steady(flat, curved):
    for geom in (flat, curved):
        s = stepper(geom, Ra=1e3, dt=1e-2, cfl=100.0, T=0.2)
        st = initial_state(s, amplitude=0.0)
        end = run(s, st)
        if geom is flat:
            assert np.max(np.abs(end.theta - (1 - s.grid.Y2))) < 1e-12
            assert np.max(np.abs(end.omega)) < 1e-10
        assert np.all(np.isfinite(end.theta))


def test_nd_stratification_is_steady(flat):
    s = stepper(flat, mode="non_diffusive", Ra=1.0, Pr=1.0, dt=1e-2, T=0.5)
    st = initial_state(s, kind="hydrostatic")
    end = run(s, st)
    assert np.max(np.abs(end.theta - st.theta)) < 1e-12
    assert np.max(np.abs(end.u)) < 1e-10


def test_influence_coupling_enforces_wall_condition(curved):
    s = stepper(curved, Ra=2e3, dt=5e-3, T=0.1)
    end = run(s, initial_state(s, amplitude=0.1, seed=3))
    assert end.coupling_mismatch < 1e-8
    assert end.step == 20


def test_sweep_coupling_agrees_with_influence(flat):
    s = stepper(flat, Ra=2e3, dt=2e-3, T=0.02)
    s2 = with_params(s, coupling="sweep", coupling_tol=1e-12, coupling_max_sweeps=200)
    st = initial_state(s, amplitude=0.1, seed=1)
    a, b = run(s, st), run(s2, st)
    assert np.max(np.abs(a.omega - b.omega)) < 1e-6 * max(np.max(np.abs(a.omega)), 1e-300)


def test_step_halving_local_error():
    geom = build_geometry(2.0, *CURVED, 32)
    s = Stepper(MappedGrid(geom, 16), SimParams(Ra=3e3, dt=1e-3, cfl=10.0))
    st = run(s, initial_state(s, amplitude=0.2, seed=2), T=0.02)
    diffs = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        a = s.step(st, dt)
        b = s.step(s.step(st, dt / 2), dt / 2)
        diffs.append(max(np.max(np.abs(a.theta - b.theta)),
                         np.max(np.abs(a.omega - b.omega)) / np.max(np.abs(a.omega))))
    assert np.all(np.log2(np.array(diffs[:-1]) / diffs[1:]) >= 1.75)
    assert np.log2(diffs[-2] / diffs[-1]) >= 1.8


def test_determinism(curved):
    s = stepper(curved, Ra=5e3, T=0.05, dt_max=5e-3)
    st = initial_state(s, amplitude=0.1, seed=7)
    a, b = run(s, st), run(s, st)
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.omega, b.omega)
    c = initial_state(s, amplitude=0.1, seed=8)
    assert not np.array_equal(st.theta, c.theta)


def test_cfl_guard(flat):
    s = stepper(flat, Ra=1e3, dt=1.0, cfl=0.5, T=1.0)
    st = s.make_state(0.0, 0, np.zeros(s.grid.shape), 1 - s.grid.Y2,
                      phi=-s.grid.Y2 * 10.0)
    with pytest.raises(CFLError):
        s.step(st)


def test_adaptive_dt_is_power_of_two_fraction(flat):
    s = stepper(flat, Ra=1e3, dt_max=1e-2, cfl=0.5)
    phi = -3.0 * s.grid.Y2
    st = s.make_state(0.0, 0, np.zeros(s.grid.shape), 1 - s.grid.Y2, phi=phi)
    dt = s.choose_dt(st)
    limit = 0.5 * advective_limit(s.grid, st.u)
    k = np.log2(1e-2 / dt)
    assert dt <= limit and abs(k - round(k)) < 1e-12 and 2 * dt > limit


def test_zero_horizon_and_sinks(flat):
    s = stepper(flat, T=0.0)
    st = initial_state(s)
    seen = []
    assert run(s, st, sinks=[lambda a, b, c: seen.append(b.t)]) is st
    assert seen == []
    s = with_params(s, T=0.05, dt=1e-2)
    run(s, st, cadence=2, sinks=[lambda a, b, c: seen.append(b.step)])
    assert seen == [0, 2, 4]


def test_initial_states(flat):
    s = stepper(flat)
    st = initial_state(s, amplitude=0.3, seed=1)
    assert np.all(st.theta >= 0) and np.all(st.theta <= 1)
    assert np.all(st.theta[:, 0] == 1) and np.all(st.theta[:, -1] == 0)
    r = smooth_random(s.grid, np.random.default_rng(0))
    assert np.max(np.abs(r)) == pytest.approx(1.0)
    assert np.max(np.abs(r[:, [0, -1]])) < 1e-12
    with pytest.raises(ValueError):
        initial_state(s, kind="nope")
    with pytest.raises(ValueError):
        initial_state(s, kind="custom", snapshot={"theta": np.zeros((4, 4))})
    custom = initial_state(s, kind="custom", snapshot={"theta": st.theta})
    assert np.array_equal(custom.theta, st.theta)
    nd = Stepper(s.grid, SimParams(mode="non_diffusive", Ra=1.0))
    blob = initial_state(nd, kind="stratified_blob")
    assert blob.theta.max() > 4.0


def test_nd_transport_conserves_norms():
    geom = flat_geometry(2.0, 64)
    s = Stepper(MappedGrid(geom, 64), SimParams(mode="non_diffusive", Ra=1.0, dt=5e-3, T=0.5))
    st = initial_state(s, kind="stratified_blob")
    end = run(s, st)
    g = s.grid
    assert g.lp_norm(end.theta) == pytest.approx(g.lp_norm(st.theta), rel=1e-3)


def test_non_finite_state_raises_step_error(flat):
    from navslip.dynamics import NaNError, StepError
    s = stepper(flat, Ra=1e3, dt=1e-2, cfl=100.0)
    theta = 1 - s.grid.Y2
    theta[3, 4] = np.nan
    st = s.make_state(0.0, 0, np.zeros(s.grid.shape), theta, phi=np.zeros(s.grid.shape))
    with pytest.raises(NaNError) as info:
        s.step(st)
    assert isinstance(info.value, StepError) and info.value.step == 1
