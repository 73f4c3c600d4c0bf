import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubic_momentum.estimators import (
    CapabilityError,
    GradEstimatorState,
    HessEstimatorState,
    ScheduleError,
    hb_grad_update,
    hb_hess_update,
    it_update,
    make_schedule,
    momentum_condition,
    mvr_update,
    som_update,
)
from cubic_momentum.problems import ProblemConstants, QuadraticSumProblem


class FieldSample:
    """One draw of a gradient field; records every evaluation point."""

    replayable = True

    def __init__(self, grad, hess=None):
        self.grad = grad
        self.hess = hess
        self.points = []

    def gradient(self, x):
        self.points.append(np.array(x, dtype=float))
        return self.grad(np.asarray(x, dtype=float))

    def hessian(self, x):
        return self.hess(np.asarray(x, dtype=float))


class Indexed:
    replayable = True

    def __init__(self, p, i):
        self.p, self.idx = p, np.array([i])

    def gradient(self, x):
        return self.p.gradient(x, self.idx)

    def hessian(self, x):
        return self.p.hessian(x, self.idx)


def constants(L=1.0, sg=1.0, sh=1.0):
    return ProblemConstants(L=L, L_g=L, sigma_g=sg, sigma_h=sh, delta_h=sh, sigma_g0=sg, sigma_h0=sh)


def test_first_update_is_plain_sample():
    for variant in ("IT", "HB", "MVR", "SOM"):
        st_ = GradEstimatorState(variant=variant, alpha=0.3)
        g = st_.update(np.ones(2), FieldSample(lambda x: 3 * x), np.eye(2))
        np.testing.assert_array_equal(g, [3.0, 3.0])
        assert st_.t == 1


def test_alpha_range():
    with pytest.raises(ValueError):
        GradEstimatorState(alpha=0.0)
    with pytest.raises(ValueError):
        GradEstimatorState(alpha=1.5)
    with pytest.raises(ValueError):
        GradEstimatorState(variant="Adam")
    with pytest.raises(ValueError):
        HessEstimatorState(beta=0.0)


def test_it_transport_point():
    st_ = GradEstimatorState("IT", alpha=0.5)
    it_update(st_, np.zeros(2), FieldSample(lambda x: x))
    sample = FieldSample(lambda x: x)
    g = it_update(st_, np.array([1.0, 0.0]), sample)
    np.testing.assert_array_equal(sample.points[0], [2.0, 0.0])
    # affine field: the transported estimate is the exact gradient
    np.testing.assert_array_equal(g, [1.0, 0.0])


def test_it_alpha_one_is_plain():
    st_ = GradEstimatorState("IT", alpha=1.0)
    it_update(st_, np.zeros(1), FieldSample(lambda x: x + 5))
    sample = FieldSample(lambda x: 2 * x)
    assert it_update(st_, np.array([3.0]), sample)[0] == 6.0
    np.testing.assert_array_equal(sample.points[0], [3.0])


def test_hb_convex_combination():
    st_ = GradEstimatorState("HB", alpha=0.25)
    hb_grad_update(st_, np.zeros(1), FieldSample(lambda x: np.array([2.0])))
    assert hb_grad_update(st_, np.zeros(1), FieldSample(lambda x: np.array([0.0])))[0] == 1.5


def test_hb_constant_field_fixed_point():
    st_ = GradEstimatorState("HB", alpha=0.2)
    c = np.array([1.0, -2.0])
    rng = np.random.default_rng(0)
    for _ in range(20):
        np.testing.assert_array_equal(hb_grad_update(st_, rng.standard_normal(2), FieldSample(lambda x: c)), c)


def test_mvr_same_point_matches_hb():
    rng = np.random.default_rng(1)
    mvr = GradEstimatorState("MVR", alpha=0.3)
    hb = GradEstimatorState("HB", alpha=0.3)
    x = rng.standard_normal(3)
    for _ in range(10):
        c = rng.standard_normal(3)
        draw = FieldSample(lambda z, c=c: np.sin(z) + c)
        np.testing.assert_allclose(mvr_update(mvr, x, draw), hb_grad_update(hb, x, draw), atol=1e-15)


def test_som_same_point_matches_hb():
    rng = np.random.default_rng(2)
    som = GradEstimatorState("SOM", alpha=0.4)
    hb = GradEstimatorState("HB", alpha=0.4)
    x = rng.standard_normal(3)
    for _ in range(10):
        c = rng.standard_normal(3)
        draw = FieldSample(lambda z, c=c: z**3 + c)
        np.testing.assert_allclose(som_update(som, x, np.eye(3), draw), hb_grad_update(hb, x, draw), atol=1e-15)


def test_som_needs_hessian():
    st_ = GradEstimatorState("SOM", alpha=0.5)
    som_update(st_, np.zeros(1), None, FieldSample(lambda x: x))
    with pytest.raises(ValueError):
        som_update(st_, np.ones(1), None, FieldSample(lambda x: x))


def test_mvr_capability_error():
    st_ = GradEstimatorState("MVR", alpha=0.5)
    mvr_update(st_, np.zeros(1), FieldSample(lambda x: x))
    once = FieldSample(lambda x: x)
    once.replayable = False
    with pytest.raises(CapabilityError):
        mvr_update(st_, np.ones(1), once)


@pytest.mark.parametrize("variant, per_step", [("IT", 1), ("HB", 1), ("SOM", 1), ("MVR", 2)])
def test_oracle_evaluation_counts(variant, per_step):
    st_ = GradEstimatorState(variant, alpha=0.5)
    draws = []
    for k in range(6):
        draw = FieldSample(lambda x: x)
        draws.append(draw)
        st_.update(np.full(2, float(k)), draw, np.eye(2))
    assert [len(d.points) for d in draws] == [1] + [per_step] * 5
    assert st_.evaluations == 1 + per_step * 5


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9, 1.0])
def test_affine_equivalence(alpha):
    rng = np.random.default_rng(int(alpha * 100))
    d = 4
    B = rng.standard_normal((d, d))
    A = 0.5 * (B + B.T)
    p = QuadraticSumProblem.shared(A, rng.standard_normal((10, d)))
    states = [GradEstimatorState(v, alpha=alpha) for v in ("IT", "MVR", "SOM")]
    x = rng.standard_normal(d)
    for _ in range(50):
        draw = Indexed(p, int(rng.integers(10)))
        g_it, g_mvr, g_som = (s.update(x, draw, A) for s in states)
        assert np.linalg.norm(g_it - g_mvr) <= 1e-12 * (1 + np.linalg.norm(g_it))
        assert np.linalg.norm(g_it - g_som) <= 1e-12 * (1 + np.linalg.norm(g_it))
        x = x + rng.standard_normal(d)


def test_harmonic_rates_average_exactly():
    # alpha_t = 1/(t+1) turns HB into the running mean of the samples
    st_ = GradEstimatorState("HB", alpha=1.0, harmonic=True)
    vals = np.random.default_rng(3).standard_normal(30)
    for k, v in enumerate(vals):
        g = hb_grad_update(st_, np.zeros(1), FieldSample(lambda x, v=v: np.array([v])))
        assert g[0] == pytest.approx(vals[: k + 1].mean(), abs=1e-12)


def test_it_unbiased_on_deterministic_quadratic():
    rng = np.random.default_rng(4)
    B = rng.standard_normal((3, 3))
    A = B @ B.T
    b = rng.standard_normal(3)
    st_ = GradEstimatorState("IT", alpha=0.2)
    x = rng.standard_normal(3)
    for _ in range(30):
        g = it_update(st_, x, FieldSample(lambda z: A @ z + b))
        np.testing.assert_allclose(g, A @ x + b, atol=1e-9)
        x = x + rng.standard_normal(3)


def test_hessian_examples():
    st_ = HessEstimatorState(beta=0.5)
    hb_hess_update(st_, np.zeros(2), FieldSample(None, lambda x: np.eye(2)))
    np.testing.assert_allclose(hb_hess_update(st_, np.zeros(2), FieldSample(None, lambda x: 3 * np.eye(2))), 2 * np.eye(2))
    one = HessEstimatorState(beta=1.0)
    hb_hess_update(one, np.zeros(1), FieldSample(None, lambda x: np.eye(1)))
    np.testing.assert_array_equal(hb_hess_update(one, np.zeros(1), FieldSample(None, lambda x: np.array([[7.0]]))), [[7.0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
def test_hessian_spectrum_stays_in_range(seed, beta):
    rng = np.random.default_rng(seed)
    a, b = -1.0, 2.0
    st_ = HessEstimatorState(beta=beta)
    for _ in range(20):
        D = np.diag(rng.uniform(a, b, 3))
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        H = hb_hess_update(st_, np.zeros(3), FieldSample(None, lambda x, M=Q @ D @ Q.T: M))
        np.testing.assert_array_equal(H, H.T)
        lam = np.linalg.eigvalsh(H)
        assert a - 1e-12 <= lam[0] and lam[-1] <= b + 1e-12


def test_frozen_iterate_variance_short():
    rng = np.random.default_rng(5)
    alpha, n = 0.2, 40000
    noise = rng.standard_normal(n)
    st_ = GradEstimatorState("HB", alpha=alpha)
    out = np.empty(n)
    for k in range(n):
        out[k] = hb_grad_update(st_, np.zeros(1), FieldSample(lambda x, e=noise[k]: np.array([e])))[0]
    assert np.var(out[1000:]) == pytest.approx(alpha / (2 - alpha), rel=0.1)


# ---------------------------------------------------------------- schedules


def test_main_schedule_example():
    s = make_schedule(constants(), 10**4, 1e4, "main_IT", a_g=1, a_h=1)
    assert s.alpha == pytest.approx(0.1, abs=1e-6)
    assert s.beta == pytest.approx(10 ** (-8 / 5), abs=1e-6)
    assert s.beta == pytest.approx(0.025119, abs=1e-6)


def test_main_schedule_saturates_at_boundary():
    s = make_schedule(constants(L=2.0), 1000, 200.0, "main_IT")
    assert s.alpha == 1.0
    assert s.beta == pytest.approx(0.46)


def test_main_schedule_floor_only():
    s = make_schedule(constants(), 10**6, 1e6, "main_IT", a_g=0.0, a_h=0.0)
    assert s.alpha == pytest.approx(10 * math.sqrt(1e-6))
    assert s.beta == pytest.approx(46e-6, rel=1e-12)


def test_main_schedule_requires_large_M():
    with pytest.raises(ScheduleError, match="M >= 100 L"):
        make_schedule(constants(), 100, 50.0, "main_IT")


@settings(max_examples=100, deadline=None)
@given(
    st.floats(1e-3, 1e3),
    st.floats(0.0, 8.0),
    st.integers(1, 10**7),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
)
def test_main_schedule_condition_holds(L, log_ratio, T, a_g, a_h):
    M = 100.0 * L * math.exp(log_ratio)
    s = make_schedule(constants(L=L), T, M, "main_IT", a_g=a_g, a_h=a_h)
    assert 0 < s.alpha <= 1 and 0 < s.beta <= 1
    assert s.condition_value(L) <= 0
    assert momentum_condition(L, M, s.alpha, s.beta) == s.condition_value(L)


def test_appendix_sources():
    c = constants(L=0.5, sg=2.0, sh=3.0)
    M, T = 1e6, 10**6
    hb = make_schedule(c, T, M, "appendix_HB")
    assert hb.alpha == pytest.approx(18 * 0.5**0.8 / (M**0.4 * 2.0**0.4))
    assert hb.beta == 1.0
    mvr = make_schedule(c, T, M, "appendix_MVR")
    assert mvr.alpha == pytest.approx(min(1.0, 2304 * (0.25 / (M * 2.0)) ** (6 / 11)))
    alt = make_schedule(c, T, M, "appendix_MVR_alt")
    assert alt.alpha == pytest.approx(hb.alpha)
    som = make_schedule(c, T, M, "appendix_SOM")
    gamma = min(M / 3175, M**0.6 * 3.0**0.8 / 2.0**0.4)
    assert som.alpha == pytest.approx(min(1.0, 3175 * max(0.5, gamma) / M))
    assert som.beta == 1.0


def test_appendix_zero_noise_is_finite():
    c = ProblemConstants(L=1, L_g=1, sigma_g=0, sigma_h=0, delta_h=0, sigma_g0=0, sigma_h0=0)
    for src in ("appendix_HB", "appendix_MVR", "appendix_SOM", "appendix_MVR_alt"):
        s = make_schedule(c, 100, 1e4, src)
        assert 0 < s.alpha <= 1 and s.beta == 1.0


def test_manual_schedule():
    s = make_schedule(constants(), 10, 1.0, "manual", alpha=0.1, beta=0.01)
    assert (s.alpha, s.beta) == (0.1, 0.01)
    with pytest.raises(ScheduleError):
        make_schedule(constants(), 10, 1.0, "manual")
    with pytest.raises(ScheduleError):
        make_schedule(constants(), 10, 1.0, "bogus")
