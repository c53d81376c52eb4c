import numpy as np
import pytest

from navslip.diagnostics import (BackgroundProfile, RandomStreamfunction, background_nusselt_inst,
                                 coercivity_ratio, column_weights, decay_detector, energy_balance_residual,
                                 grad_identity_residuals, nusselt_convective, nusselt_flux, nusselt_strip,
                                 summarize_rows, time_average, window_mask, DiagnosticsRecorder, read_csv,
                                 write_csv)
from navslip.dynamics import SimParams, Stepper, initial_state, run
from navslip.fields import MappedGrid
from navslip.geometry import SlipSpec


def test_conduction_nusselt_is_one(flat):
    g = MappedGrid(flat, 32)
    theta = 1 - g.Y2
    u = np.zeros((2,) + g.shape)
    assert nusselt_flux(g, theta) == pytest.approx(1.0, abs=1e-12)
    assert nusselt_convective(g, theta, u) == pytest.approx(1.0, abs=1e-12)
    for d in (0.05, 0.1, 0.37):
        assert nusselt_strip(g, theta, u, d) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        nusselt_strip(g, theta, u, 2.0)


def test_conduction_nusselt_curved(curved):
    # theta = 1 - y2 is harmonic only for flat walls, so use a solved conduction state
    s = Stepper(MappedGrid(curved, 32), SimParams(Ra=1.0, dt=0.5, dt_max=0.5, T=40.0))
    end = run(s, initial_state(s, amplitude=0.0), T=40.0)
    g = s.grid
    nf = nusselt_flux(g, end.theta)
    assert nf > 1.0
    assert nusselt_strip(g, end.theta, end.u, 0.1) == pytest.approx(nf, rel=2e-2)


def test_background_profile(flat, curved):
    g = MappedGrid(flat, 32)
    u = np.zeros((2,) + g.shape)
    prof = BackgroundProfile(g, 0.5)
    assert background_nusselt_inst(prof, 1 - g.Y2, u) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        BackgroundProfile(g, 0.7)
    t = BackgroundProfile(g, 0.1).terms(1 - g.Y2, u)
    assert t["grad_eta"] == pytest.approx(1 / (2 * 0.1), rel=1e-12)


def test_column_weights_integrate_linear(flat):
    g = MappedGrid(flat, 16)
    w = column_weights(g, np.full(g.n1, 0.03), np.full(g.n1, 0.41))
    assert np.sum(w[0] * g.Y2[0]) == pytest.approx(0.5 * (0.41**2 - 0.03**2), rel=1e-12)


def test_decay_detector_examples():
    t = np.linspace(0, 10, 10001)
    v = decay_detector(t, np.exp(-t), C=1.0, eps=0.1)
    assert v.found and v.T == pytest.approx(np.log(10), abs=2e-3)
    v = decay_detector(t, np.ones_like(t), C=1.0, eps=0.1)
    assert not v.found and "L1" in v.reason
    assert not decay_detector(t, -np.ones_like(t), C=1.0, eps=0.1).found
    assert "derivative" in decay_detector(t, t, C=0.5, eps=0.1).reason
    with pytest.raises(ValueError):
        decay_detector(t[:2], t[:2], 1.0, 0.1)


def test_decay_time_monotone_in_eps():
    t = np.linspace(0, 20, 4001)
    f = np.exp(-0.5 * t) * (1 + 0.3 * np.sin(3 * t) ** 2)
    Ts = [decay_detector(t, f, C=2.0, eps=e).T for e in (0.3, 0.1, 0.03, 0.01)]
    assert all(a <= b for a, b in zip(Ts, Ts[1:]))


def test_window_and_average():
    t = np.linspace(0, 10, 11)
    m = window_mask(t, 0.6)
    assert t[m][0] == 4.0
    assert time_average(t[m], 2 * t[m]) == pytest.approx(14.0)
    with pytest.raises(ValueError):
        time_average(np.array([]), np.array([]))


def test_grad_identities_and_coercivity(curved):
    g = MappedGrid(curved, 64)
    u = RandomStreamfunction.draw(np.random.default_rng(3), 2.0).velocity(g)
    assert max(grad_identity_residuals(g, u)) < 1e-4
    assert coercivity_ratio(g, u, SlipSpec.constant(1.0)) > 0


def test_energy_residual_small_and_scale_free(flat):
    s = Stepper(MappedGrid(flat, 32), SimParams(Ra=3e3, dt=5e-4, T=0.2))
    st = run(s, initial_state(s, amplitude=0.5, seed=4), T=0.2)
    nxt = s.step(st)
    r = energy_balance_residual(s.grid, st, nxt, 3e3, 1.0, s.params.slip)
    assert r < 0.05
    assert energy_balance_residual(s.grid, st, st, 3e3, 1.0, s.params.slip) == 0.0


def test_recorder_csv_roundtrip(tmp_path, flat):
    s = Stepper(MappedGrid(flat, 16), SimParams(Ra=1e3, dt=1e-2, T=0.1))
    rec = DiagnosticsRecorder(s.grid, s.params)
    run(s, initial_state(s, amplitude=0.0), cadence=2, sinks=[rec])
    rec.write_csv(tmp_path / "r.csv")
    cols, rows = read_csv(tmp_path / "r.csv")
    assert cols == rec.columns and len(rows) == len(rec.rows) == 6
    summ = summarize_rows(rows, cols)
    assert summ["nusselt"]["nu_flux"] == pytest.approx(1.0, abs=1e-10)
    write_csv(tmp_path / "e.csv", cols, [])
    assert read_csv(tmp_path / "e.csv") == (cols, [])
