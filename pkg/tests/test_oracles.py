import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oefnewton import InexactnessPolicy, Oracle, builtin_problem, kkt_residual
from oefnewton.oracles import (
    GRAD,
    adversarial_gradient,
    adversarial_hessian,
    gradient_sample_size,
    hessian_sample_size,
    sosp_sample_sizes,
    stream,
    symmetric_noise,
)
from oefnewton.problems import CompositeProblem, Quadratic

E18 = math.exp(-1 / 8)


# --- frozen sample sizes


def test_gradient_sample_size_value():
    assert gradient_sample_size(0.5, 0.1, 1.0, E18) == 1600


def test_hessian_sample_size_value():
    assert hessian_sample_size(1.0, 1, 1.0, 2 / math.e) == 16


def test_sosp_sample_size_values():
    assert sosp_sample_sizes(1.0, 1.0, 1, 1.0, 1.0, E18)[0] == 36
    assert sosp_sample_sizes(1.0, 1.0, 1, 1.0, 1.0, 2 / math.e)[1] == 5184


def test_sample_size_caps():
    assert gradient_sample_size(1e-3, 1e-3, 1.0, 0.05, m=500) == 500
    assert hessian_sample_size(1e-9, 10, 1.0, 0.05, m=77) == 77


def _raw_g(dg, eps=0.1, U=1.3, conf=0.05):
    return U**2 * (1 + math.sqrt(8 * math.log(1 / conf))) ** 2 / (dg**2 * eps**2)


@given(st.floats(0.01, 0.49), st.floats(1e-3, 1.0))
def test_gradient_size_scaling(dg, eps):
    assert _raw_g(dg / 2, eps) == pytest.approx(4 * _raw_g(dg, eps), rel=1e-12)
    assert gradient_sample_size(dg / 2, eps, 1.3, 0.05) >= gradient_sample_size(dg, eps, 1.3, 0.05)


@given(st.floats(0.01, 5), st.integers(1, 100))
def test_hessian_size_log_dependence(dh, n):
    raw = lambda n_: 16 * 2.0**2 * math.log(2 * n_ / 0.05) / dh**2  # noqa: E731
    assert raw(10 * n) - raw(n) == pytest.approx(16 * 4.0 / dh**2 * math.log(10), rel=1e-9)
    assert hessian_sample_size(dh, 10 * n, 2.0, 0.05) >= hessian_sample_size(dh, n, 2.0, 0.05)


@given(st.floats(1e-3, 1.0))
def test_sosp_gradient_size_quadruples(eps_g):
    a = sosp_sample_sizes(eps_g, 0.5, 3, 1.0, 1.0, 0.05)[0]
    b = sosp_sample_sizes(eps_g / 2, 0.5, 3, 1.0, 1.0, 0.05)[0]
    assert abs(b - 4 * a) <= 4


def test_sample_size_validation():
    with pytest.raises(ValueError):
        gradient_sample_size(0.5, 0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        hessian_sample_size(0.0, 3, 1.0, 0.05)


# --- adversarial oracles


def scalar_problem(grad_value):
    # f(x) = grad_value * x + 0.5 x^2 at x = 0 has gradient grad_value
    return CompositeProblem(Quadratic(np.eye(1), -np.array([grad_value])))


def test_adversarial_gradient_example():
    P = builtin_problem("quadratic", A=np.eye(3), b=np.array([1.0, 0.0, 0.0]))
    x = np.zeros(3)  # grad = -b, norm 1
    for k in range(1000):
        g, en, halv, fb = adversarial_gradient(x, 0.25, P, stream(0, k, GRAD))
        assert en == pytest.approx(0.2, rel=1e-12) and halv == 0 and not fb
        assert np.linalg.norm(g) >= 0.8 - 1e-12
        assert en <= 0.25 * np.linalg.norm(g)


def test_adversarial_gradient_zero_at_stationary_point():
    P = builtin_problem("quadratic", A=np.eye(2), b=np.zeros(2))
    g, en, _, _ = adversarial_gradient(np.zeros(2), 0.4, P, stream(0, 0, GRAD))
    assert not np.any(g) and en == 0.0


def test_adversarial_gradient_zero_delta_exact():
    P = builtin_problem("ridge-logistic", m=30, n=3)
    x = np.array([0.3, -0.1, 2.0])
    g, en, _, _ = adversarial_gradient(x, 0.0, P, stream(0, 0, GRAD))
    assert np.array_equal(g, P.smooth.gradient(x)) and en == 0.0


@pytest.mark.parametrize("kind", ["unconstrained", "composite"])
def test_adversarial_gradient_certificates_1000_seeds(kind):
    P = builtin_problem("l1-student-t", m=40, n=6, seed=1, lam=0.3)
    fails = 0
    for k in range(1000):
        x = np.random.default_rng([k, 5]).standard_normal(6)
        g, en, _, _ = adversarial_gradient(x, 0.3, P, stream(k, k, GRAD), kind=kind)
        ref = np.linalg.norm(kkt_residual(x, g, P)) if kind == "composite" else np.linalg.norm(g)
        fails += not (en <= 0.3 * ref * (1 + 1e-12) and np.linalg.norm(g - P.smooth.gradient(x)) == pytest.approx(en))
    assert fails == 0


def test_adversarial_hessian_certificates_1000_seeds():
    P = builtin_problem("ridge-logistic", m=30, n=4)
    for k in range(1000):
        x = np.random.default_rng([k, 6]).standard_normal(4)
        Q, E = adversarial_hessian(x, 0.7, P, stream(k, k, 1))
        assert np.allclose(Q, Q.T)
        assert np.linalg.norm(Q - P.smooth.hessian(x), 2) <= 0.7
        assert np.linalg.norm(E, 2) == pytest.approx(0.7, rel=1e-10)


def test_symmetric_noise_norm_exact():
    rng = np.random.default_rng(20)
    E = symmetric_noise(20, 0.37, rng)
    assert abs(np.linalg.norm(E, 2) - 0.37) <= 1e-10 * 0.37
    assert np.array_equal(E, E.T)


def test_scalar_hessian_noise_range():
    P = CompositeProblem(Quadratic(np.array([[2.0]]), np.zeros(1)))
    for k in range(50):
        Q, _ = adversarial_hessian(np.zeros(1), 0.5, P, stream(0, k, 1))
        assert 1.5 - 1e-12 <= Q[0, 0] <= 2.5 + 1e-12


@given(st.floats(1e-8, 1e-3))
def test_hessian_noise_continuity(dh):
    P = builtin_problem("quadratic", n=5)
    Q, _ = adversarial_hessian(np.zeros(5), dh, P, stream(0, 0, 1))
    assert np.linalg.norm(Q - P.smooth.hessian(np.zeros(5)), 2) <= dh


# --- policies and the Oracle front end


def test_policy_validation():
    with pytest.raises(ValueError):
        InexactnessPolicy(mode="noisy")
    with pytest.raises(ValueError):
        InexactnessPolicy(delta_g=0.5)
    with pytest.raises(ValueError):
        InexactnessPolicy(confidence=0.0)


def test_policy_schedules():
    pol = InexactnessPolicy(mode="adversarial", delta_g=0.4, delta_h=1.0, schedule="geometric", decay=0.5)
    assert pol.levels(2) == (0.1, 0.25)
    ad = InexactnessPolicy(mode="adversarial", delta_g=0.4, delta_h=1.0, schedule="adaptive", theta=1.0)
    assert ad.levels(0, 0.2) == pytest.approx((0.1, 0.1))


def test_subsampling_rejected_where_unsupported():
    P = builtin_problem("l1-student-t", m=30, n=3)
    pol = InexactnessPolicy(mode="subsampled", delta_g=0.1, delta_h=0.1)
    with pytest.raises(ValueError):
        Oracle(P, pol, kind="composite")
    with pytest.raises(ValueError):
        Oracle(builtin_problem("quadratic", n=3), pol, kind="unconstrained", eps=1e-3)


def test_full_batch_when_cap_triggers():
    P = builtin_problem("ridge-logistic", m=50, n=3)
    pol = InexactnessPolicy(mode="subsampled", delta_g=0.01, delta_h=0.01, seed=3)
    est = Oracle(P, pol, kind="unconstrained", eps=1e-3).estimate(np.ones(3), 0)
    assert est.full_batch_g and est.full_batch_h and est.sample_g == 50
    assert np.allclose(est.g, P.smooth.gradient(np.ones(3)))


def test_sampling_is_deterministic_and_unbiased():
    P = builtin_problem("ridge-logistic", m=2000, n=4, seed=0, ridge=0.01, scale=0.3)
    pol = InexactnessPolicy(mode="subsampled", delta_g=0.45, delta_h=0.45, seed=11)
    o1 = Oracle(P, pol, kind="unconstrained", eps=1.0)
    o2 = Oracle(P, pol, kind="unconstrained", eps=1.0)
    x = np.array([0.5, -1.0, 0.2, 0.0])
    a, b = o1.estimate(x, 3), o2.estimate(x, 3)
    assert not a.full_batch_g
    assert np.array_equal(a.g, b.g) and np.array_equal(a.Q.dense(), b.Q.dense())
    mean = np.mean([o1.estimate(x, k).g for k in range(400)], axis=0)
    grad = P.smooth.gradient(x)
    # 400 independent draws: mean error shrinks like 1/20 of a single draw's bound
    assert np.linalg.norm(mean - grad) <= 0.45 / 20 * 3


def test_sosp_adversarial_levels():
    P = builtin_problem("l1-student-t", m=30, n=4, lam=0.0)
    o = Oracle(P, InexactnessPolicy(mode="adversarial", seed=2), kind="sosp", eps_g=0.03, eps_h=0.09)
    for k in range(200):
        x = np.random.default_rng(k).standard_normal(4)
        est = o.estimate(x, k)
        assert np.linalg.norm(est.g - P.smooth.gradient(x)) <= 0.01 * (1 + 1e-12)
        assert np.linalg.norm(est.Q.dense() - P.smooth.hessian(x), 2) <= 0.005 * (1 + 1e-12)
