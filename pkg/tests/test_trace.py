import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oefnewton.trace import SolverTrace, fitted_order


def test_counters_must_not_decrease():
    tr = SolverTrace("x")
    tr.add(n_grad=1)
    with pytest.raises(AssertionError):
        tr.add(n_grad=0)


def test_first_failure_and_counts():
    tr = SolverTrace("x")
    tr.add(cert_a=True, cert_b=None)
    tr.add(cert_a=False, cert_b=True)
    assert tr.first_failure() == (1, "cert_a")
    assert tr.certificate_counts() == {"cert_a": {"checked": 2, "passed": 1}, "cert_b": {"checked": 1, "passed": 1}}


def test_csv_format():
    tr = SolverTrace("x")
    tr.add(v=0.1, ok=True)
    tr.add(v=None, ok=False, extra=3)
    assert tr.to_csv() == "k,v,ok,extra\n0,0.1,1,\n1,,0,3\n"


@given(st.floats(0.1, 0.9), st.floats(1.0, 2.5))
def test_fitted_order_recovers_power_law(c, q):
    e = [0.5]
    while e[-1] > 1e-12 and len(e) < 40:
        e.append(c * e[-1] ** q)
    order = fitted_order(e)
    if order is not None:
        assert order == pytest.approx(q, rel=1e-6)


def test_fitted_order_needs_three_pairs():
    assert fitted_order([1e-1, 1e-2, 1e-4]) is None
    assert fitted_order([1e-8, 1e-16, 1e-32, 0.0]) is None
    assert fitted_order([1e-1, 1e-2, 1e-4, 1e-8]) == pytest.approx(2.0)
