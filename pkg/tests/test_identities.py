import pytest

from navslip.config import IDENTITY_DEFAULTS
from navslip.identities import observed_orders, refinement_verdict, run_identity_suite, format_table


def test_observed_orders():
    assert observed_orders([1.0, 0.25, 0.0625]) == [pytest.approx(2.0), pytest.approx(2.0)]


def test_refinement_verdict():
    assert refinement_verdict([1.0, 0.25, 0.0625], 1.8, 1e-11)[1]
    assert not refinement_verdict([1.0, 0.5, 0.25], 1.8, 1e-11)[1]
    orders, ok, detail = refinement_verdict([1e-13, 2e-13], 1.8, 1e-11)
    assert ok and detail == "at round-off floor"


def test_small_suite_passes():
    ident = {**IDENTITY_DEFAULTS, "resolutions": [32, 64], "manufactured_resolutions": [32, 64],
             "fields": 3, "ensemble": 5, "alphas": [1.0], "coercivity_resolutions": [32, 64]}
    checks = run_identity_suite(ident)
    assert all(c.passed for c in checks), format_table(checks)
    assert {c.geometry for c in checks} == {"flat", "curved"}
