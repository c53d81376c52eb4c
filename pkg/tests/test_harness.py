import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from navslip.config import resolve_config
from navslip.harness import (FORM_LARGE, FORM_LS_LARGE_PR, FORM_SMALL, BoundCoefficients, SweepSpec,
                             analyze_sweep, bound_check, fit_exponent, gap_ratio_for_exponent,
                             nd_config, read_rows_file, regime_classify, rescale_physical, restore_state,
                             run_config, sweep_jobs, write_run_outputs, write_sweep_outputs)
from navslip.dynamics import Stepper
from navslip.geometry import SlipSpec, flat_geometry


def rows(ra, nu):
    return [{"Ra": a, "Nu": b} for a, b in zip(ra, nu)]


def test_fit_exact_power():
    f = fit_exponent(rows([1, 10, 100], [1, 10, 100]))
    assert f.beta == pytest.approx(1.0, abs=1e-12) and f.n == 3 and f.stderr < 1e-12


def test_fit_noisy_synthetic():
    rng = np.random.default_rng(0)
    ra = np.geomspace(1e3, 1e6, 8)
    nu = 2 * ra**0.3 * (1 + 0.01 * rng.standard_normal(ra.size))
    assert fit_exponent(rows(ra, nu)).beta == pytest.approx(0.30, abs=0.02)


def test_fit_constant_and_errors():
    assert fit_exponent(rows([1e3, 1e4, 1e5], [3, 3, 3])).beta == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_exponent(rows([1, 10], [1, 2]))
    r = rows([1, 10, 100, 1000], [1, 10, 100, 5])
    assert fit_exponent(r, (1, 100)).beta == pytest.approx(1.0)
    r[3]["status"] = "failed"
    assert fit_exponent(r).n == 3


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.6), st.floats(0.1, 10.0))
def test_fit_recovers_power_law(beta, c):
    ra = np.geomspace(1e2, 1e5, 5)
    assert fit_exponent(rows(ra, c * ra**beta)).beta == pytest.approx(beta, abs=1e-9)


def test_regime_examples():
    v = regime_classify(4.0, 100.0, 1e4)
    assert v.forms == (FORM_LARGE,) and not v.ambiguous
    v = regime_classify(1e-3, 1e11, 1e7)
    assert v.forms == (FORM_SMALL,)
    v = regime_classify(4.0, 50.0, 1e4)  # Pr on L_s^{-1/2} Ra^{1/2}
    assert set(v.forms) == {FORM_LARGE, FORM_LS_LARGE_PR} and v.ambiguous
    with pytest.raises(ValueError):
        regime_classify(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        regime_classify(1.0, 1.0, 1.0, table="other")


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 1e3), st.floats(1e-3, 1e8), st.floats(1.0, 1e9))
def test_regime_always_classifies(Ls, Pr, Ra):
    for table in ("slip_length", "prandtl"):
        v = regime_classify(Ls, Pr, Ra, table)
        assert len(v.forms) >= 1
        assert v.ambiguous == (len(v.forms) > 1)


def test_bound_check_examples():
    c = BoundCoefficients(1.0, 2.0, 1.0)
    b = bound_check(rows([1e3], [5.0]), c)
    assert b["margins"] == [pytest.approx(1.0)] and b["ok"]
    b = bound_check(rows([1e3, 1e4, 1e5], [1.0, 1.0, 1.0]), c)
    assert all(x > y for x, y in zip(b["margins"], b["margins"][1:]))
    b = bound_check(rows([1e3, 4e3], [1.0, 2.2]), c)
    assert b["margins"][1] == pytest.approx(1.1) and not b["ok"]
    with pytest.raises(ValueError):
        bound_check([], c)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 100.0))
def test_bound_check_scale_invariant(s):
    r = rows([1e3, 3e3, 1e4], [1.2, 2.0, 3.1])
    c = BoundCoefficients(1.0, 3.0, 1.0)
    a = bound_check(r, c)["margins"]
    b = bound_check([{"Ra": x["Ra"], "Nu": s * x["Nu"]} for x in r], c)["margins"]
    assert np.allclose(a, b, rtol=1e-12)


def test_coefficients_flat():
    c = BoundCoefficients.from_geometry(flat_geometry(2.0, 32), SlipSpec.constant(1.0))
    assert c.C2 == pytest.approx(2.0) and c.C3 == pytest.approx(1.0)
    # 1 + |alpha|_W1inf + |kappa|_W1inf + |alpha|^3 + |kappa|^3 with alpha = 1, kappa = 0
    assert c.C1 == pytest.approx(3.0)


def test_rescale():
    r = rescale_physical(1.0, 5.0)
    assert r.Ra_ratio == 5.0 and r.kappa_scale == 1.0
    r = rescale_physical(2.0, 1.0)
    assert r.Ra_ratio == 8.0 and r.kappa_scale == 2.0 and r.kappa_w1inf_scale == 6.0
    assert gap_ratio_for_exponent(0.0, 10.0) == 1.0
    with pytest.raises(ValueError):
        rescale_physical(0.0, 1.0)


def test_sweep_spec():
    with pytest.raises(ValueError):
        SweepSpec.from_config({**resolve_config({"params": {"Ra": 1}, "sweep": {"Ra": [1e3]}})["sweep"],
                               "Ra": [1e4, 1e3]})
    spec = SweepSpec.from_config(resolve_config({"params": {"Ra": 1},
                                                 "sweep": {"Ra": [1e3, 1e5], "horizon": [3, 4]}})["sweep"])
    assert spec.grid_for(1e3) == (48, 48)
    assert spec.grid_for(1e5)[1] % 8 == 0 and spec.grid_for(1e5)[1] >= 8 * 1e5**0.25
    assert spec.horizon_for(1) == 4


def test_analyze_and_outputs(tmp_path):
    r = [{"Ra": a, "Nu": b, "Pr": 1.0, "L_s": 1.0, "status": "ok"} for a, b in
         ((1e3, 1.2), (1e4, 2.5), (1e5, 5.0))]
    c = BoundCoefficients(1.0, 2.0, 1.0)
    out = analyze_sweep(r, [c] * 3)
    assert out["nu_strictly_increasing"] and 0 < out["fit"]["beta"] <= 0.5
    assert out["regimes"][0]["slip_length"]["forms"]
    write_sweep_outputs(r, out, tmp_path)
    assert json.loads((tmp_path / "sweep.json").read_text())["fit"]["n"] == 3
    back = read_rows_file(tmp_path / "sweep.csv")
    assert [x["Nu"] for x in back] == [1.2, 2.5, 5.0]
    single = analyze_sweep(r[:1], [c])
    assert single["fit"] is None and "fit_skipped" in single


def test_sweep_jobs_and_single_run(tmp_path):
    cfg = resolve_config({"params": {"Ra": 1e2, "T": 0.2, "dt": 0.05},
                          "grid": {"n1": 16, "n2": 8}, "sweep": {"Ra": [1e2, 2e2], "horizon": 0.2}})
    jobs = sweep_jobs(SweepSpec.from_config(cfg["sweep"]), cfg)
    assert [j[0]["params"]["Ra"] for j in jobs] == [1e2, 2e2]
    res = run_config(jobs[0][0])
    summ = write_run_outputs(res, tmp_path)
    assert (tmp_path / "records.csv").exists() and summ["nusselt"]["nu_flux"] == pytest.approx(1.0, abs=5e-2)
    state = restore_state(Stepper(res.grid, res.stepper.params), tmp_path / "checkpoint")
    assert np.array_equal(state.theta, res.final.theta) and state.step == res.final.step


def test_nd_config_defaults():
    cfg = nd_config({"params": {"nu_h": 0.0}})
    assert cfg["params"]["mode"] == "non_diffusive" and cfg["initial"]["kind"] == "stratified_blob"
    assert cfg["nd"]["ratio"] == 0.2
