import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normforge import engine
from normforge.engine import OptState, csd_step, momentum_update, model_estimate_update, rsd_step
from normforge.errors import DimensionError
from normforge.norms import Euclid, L2Agg, MaxAbs, MaxAgg, NormSpec, Spectral, product_dual, product_norm
from normforge.tree import ParamTree


def vec(*xs):
    return ParamTree([], np.array(xs, dtype=float))


def state_with(m, F=math.nan):
    return OptState(momentum=m, second_moment=np.zeros(m.base.size), model_estimate=F)


EUCLID = NormSpec([Euclid()], MaxAgg())


# --- tree


def test_tree_arithmetic_and_flatten():
    A = ParamTree([np.ones((2, 3))], np.arange(2.0))
    B = A * 2.0 - A
    assert B.inner(A) == pytest.approx(A.inner(A))
    assert A.inner(A) == pytest.approx(6 + 1)
    assert np.array_equal(A.unflatten(A.flat()).base, A.base)
    assert A.size == 8 and A.n_slots == 2
    with pytest.raises(DimensionError):
        A + ParamTree([np.ones((3, 2))], np.arange(2.0))
    with pytest.raises(DimensionError):
        ParamTree([np.ones(3)], np.zeros(1))


def test_tree_empty_base():
    T = ParamTree([np.eye(2)])
    assert T.base.shape == (0,)
    assert T.any_nonzero() and T.is_finite()


# --- momentum


def test_beta_zero_is_current_gradient():
    st_ = OptState()
    for g in (vec(1.0, 2.0), vec(-3.0, 0.5)):
        momentum_update(st_, g, 0.0, 0.0)
        assert np.array_equal(st_.momentum.base, g.base)
        assert np.array_equal(st_.second_moment, g.base**2)


def test_hand_ema():
    st_ = OptState()
    momentum_update(st_, vec(2.0), 0.5, 0.5)
    momentum_update(st_, vec(4.0), 0.5, 0.5)
    assert st_.momentum.base[0] == 3.0
    assert st_.second_moment[0] == 10.0


def test_constant_gradient_is_fixed_point():
    st_ = OptState()
    g = vec(0.25, -0.5, 4.0)
    for _ in range(30):
        momentum_update(st_, g, 0.9, 0.99)
    assert np.allclose(st_.momentum.base, g.base, rtol=1e-14)


def test_ema_matches_weighted_sum():
    rng = np.random.default_rng(0)
    gs = rng.standard_normal(20)
    beta = 0.8
    st_ = OptState()
    for g in gs:
        momentum_update(st_, vec(g), beta, 0.0)
    t = len(gs) - 1
    # m_t = beta^t g_0 + sum_{i>=1} (1 - beta) beta^(t-i) g_i
    w = np.array([(1 - beta) * beta ** (t - i) for i in range(t + 1)])
    w[0] = beta**t
    assert st_.momentum.base[0] == pytest.approx(w @ gs, abs=1e-10)


def test_momentum_shape_mismatch():
    st_ = OptState()
    momentum_update(st_, vec(1.0), 0.9, 0.9)
    with pytest.raises(DimensionError):
        momentum_update(st_, vec(1.0, 2.0), 0.9, 0.9)
    with pytest.raises(ValueError):
        momentum_update(st_, vec(1.0), 1.0, 0.9)


# --- model estimate


def test_model_estimate_two_steps_by_hand():
    st_ = OptState()
    w0, w1 = vec(0.0), vec(-1.0)
    momentum_update(st_, vec(2.0), 0.5, 0.5)
    assert model_estimate_update(st_, 1.0, vec(2.0), w0, 0.5) == pytest.approx(1.0)
    st_.step = 1
    momentum_update(st_, vec(1.0), 0.5, 0.5)
    F = model_estimate_update(st_, 0.5, vec(1.0), w1, 0.5)
    assert st_.f_tilde == pytest.approx(1.25)
    assert st_.momentum.base[0] == pytest.approx(1.5)
    assert F == pytest.approx(-0.25)


def test_model_estimate_beta_zero_is_loss():
    st_ = OptState()
    rng = np.random.default_rng(1)
    for t in range(5):
        g, w = vec(*rng.standard_normal(3)), vec(*rng.standard_normal(3))
        momentum_update(st_, g, 0.0, 0.0)
        loss = float(rng.uniform(0, 2))
        assert model_estimate_update(st_, loss, g, w, 0.0) == pytest.approx(loss)
        st_.step += 1


def test_model_estimate_constant_loss_zero_grad():
    st_ = OptState()
    for t in range(4):
        g = vec(0.0, 0.0)
        momentum_update(st_, g, 0.9, 0.9)
        assert model_estimate_update(st_, 2.5, g, vec(t, -t), 0.9) == pytest.approx(2.5)
        st_.step += 1


# --- CSD / RSD


def test_csd_single_euclid_is_normalized_step():
    W = vec(1.0, 1.0)
    rep = csd_step(W, state_with(vec(3.0, 4.0)), EUCLID, 0.5)
    assert np.allclose(W.base, [1 - 0.3, 1 - 0.4])
    assert rep.effective_step_matrix == 0.5 and not rep.clamp_active


def test_csd_sign_descent_moves_every_coordinate_by_eta():
    m = ParamTree([np.array([[1.0, -2.0]])], np.array([0.3, -0.1]))
    W = m.zeros_like()
    csd_step(W, state_with(m), NormSpec([MaxAbs(), MaxAbs()], MaxAgg()), 0.1)
    assert np.allclose(np.abs(W.flat()), 0.1)
    assert np.allclose(np.sign(W.flat()), -np.sign(m.flat()))


def test_csd_l2_over_spectral_slots():
    m = ParamTree([np.diag([1.0, 2.0]), np.diag([4.0, 0.0])], np.zeros(0))
    W = m.zeros_like()
    spec = NormSpec([Spectral(), Spectral(), Euclid()], L2Agg())
    csd_step(W, state_with(m), spec, 0.1)
    assert np.allclose(W.matrices[0], -0.06 * np.eye(2), atol=1e-9)
    assert np.allclose(W.matrices[1], -0.08 * np.diag([1.0, 0.0]), atol=1e-9)


def test_rsd_single_euclid_is_momentum_sgd():
    W = vec(1.0, 1.0)
    rsd_step(W, state_with(vec(3.0, 4.0)), EUCLID, 0.1)
    assert np.allclose(W.base, [0.7, 0.6])


def test_rsd_max_over_spectral_slots_scales_by_dual_sum():
    m = ParamTree([np.diag([3.0, 4.0]), np.diag([1.0, 2.0])], np.zeros(0))
    W = m.zeros_like()
    spec = NormSpec([Spectral(), Spectral(), Euclid()], MaxAgg())
    rep = rsd_step(W, state_with(m), spec, 0.01)
    assert rep.dual_total == pytest.approx(10.0)
    assert np.allclose(W.matrices[0], -0.1 * np.eye(2), atol=1e-9)
    assert np.allclose(W.matrices[1], -0.1 * np.eye(2), atol=1e-9)


def test_rsd_l2_over_spectral_slots_scales_by_own_nuclear():
    m = ParamTree([np.diag([3.0, 4.0]), np.diag([1.0, 2.0])], np.zeros(0))
    W = m.zeros_like()
    rsd_step(W, state_with(m), NormSpec([Spectral(), Spectral(), Euclid()], L2Agg()), 0.01)
    assert np.allclose(W.matrices[0], -0.07 * np.eye(2), atol=1e-9)
    assert np.allclose(W.matrices[1], -0.03 * np.eye(2), atol=1e-9)


def test_zero_momentum_skips():
    W = vec(1.0)
    for fn in (csd_step, rsd_step):
        rep = fn(W, state_with(vec(0.0)), EUCLID, 0.1)
        assert rep.effective_step_matrix == 0.0 and W.base[0] == 1.0
    rep = engine.momo_csd_step(W, state_with(vec(0.0), 1.0), EUCLID, 0.1, 0.0)
    assert rep.effective_step_matrix == 0.0


# --- Momo


def momo_coef(fn, eta, gap, dual):
    m = vec(dual)
    W = vec(0.0)
    rep = fn(W, state_with(m, F=gap), EUCLID, eta, 0.0)
    return rep, -W.base[0]


def test_momo_csd_formula():
    rep, moved = momo_coef(engine.momo_csd_step, 10.0, 1.0, 2.0)
    assert rep.effective_step_matrix == pytest.approx(0.5) and rep.clamp_active
    rep, moved = momo_coef(engine.momo_csd_step, 0.1, 1.0, 2.0)
    assert rep.effective_step_matrix == pytest.approx(0.1) and not rep.clamp_active
    assert moved == pytest.approx(0.1)


def test_momo_rsd_formula():
    rep, moved = momo_coef(engine.momo_rsd_step, 0.1, 1.0, 2.0)
    assert moved == pytest.approx(0.2)
    rep, moved = momo_coef(engine.momo_rsd_step, 0.1, 0.0, 2.0)
    assert moved == 0.0 and rep.clamp_active


def test_momo_below_floor_is_zero_step():
    for fn in (engine.momo_csd_step, engine.momo_rsd_step):
        _, moved = momo_coef(fn, 1.0, -0.5, 2.0)
        assert moved == 0.0


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(1e-3, 10.0), gap=st.floats(-1.0, 5.0))
def test_momo_coefficient_never_exceeds_eta(seed, eta, gap):
    m = ParamTree([np.random.default_rng(seed).standard_normal((3, 2))], np.ones(2))
    spec = NormSpec([Spectral(), Euclid()], L2Agg())
    for fn in (engine.momo_csd_step, engine.momo_rsd_step):
        rep = fn(m.zeros_like(), state_with(m, F=gap), spec, eta, 0.0)
        assert 0.0 <= rep.effective_step_matrix <= eta


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(1e-3, 1.0))
def test_momo_far_floor_equals_plain_steps(seed, eta):
    rng = np.random.default_rng(seed)
    m = ParamTree([rng.standard_normal((2, 3))], rng.standard_normal(3))
    spec = NormSpec([Spectral(), MaxAbs()], MaxAgg([1.0, 2.0]))
    for plain, momo in ((csd_step, engine.momo_csd_step), (rsd_step, engine.momo_rsd_step)):
        A, B = m.zeros_like(), m.zeros_like()
        plain(A, state_with(m), spec, eta)
        momo(B, state_with(m, F=1e9), spec, eta, -1e9)
        assert np.max(np.abs(A.flat() - B.flat())) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(1e-3, 1.0))
def test_update_norms(seed, eta):
    rng = np.random.default_rng(seed)
    m = ParamTree([rng.standard_normal((3, 3)), rng.standard_normal((2, 3))], rng.standard_normal(4))
    spec = NormSpec([Spectral(), Spectral(), MaxAbs()], MaxAgg([1.0, 1.0, 0.5]))
    W = m.zeros_like()
    csd_step(W, state_with(m), spec, eta)
    assert product_norm(spec, W) == pytest.approx(eta, rel=1e-5)
    W = m.zeros_like()
    rsd_step(W, state_with(m), spec, eta)
    assert product_norm(spec, W) == pytest.approx(eta * product_dual(spec, m), rel=1e-5)


# --- stale cache


def spectral_spec():
    return NormSpec([Spectral(), Spectral(), Euclid()], L2Agg())


def test_stale_first_step_uses_fresh_duals():
    rng = np.random.default_rng(2)
    m = ParamTree([rng.standard_normal((3, 3)), rng.standard_normal((2, 3))], rng.standard_normal(2))
    A, B = m.zeros_like(), m.zeros_like()
    rsd_step(A, state_with(m), spectral_spec(), 0.1)
    st_ = state_with(m)
    rsd_step(B, st_, spectral_spec(), 0.1, stale=True)
    assert np.array_equal(A.flat(), B.flat())
    assert len(st_.stale_duals) == 2
    assert st_.stale_total == pytest.approx(sum(st_.stale_duals))


def test_stale_uses_previous_duals():
    rng = np.random.default_rng(3)
    m1 = ParamTree([rng.standard_normal((2, 2)), rng.standard_normal((2, 2))], np.ones(1))
    m2 = m1 * 3.0
    st_ = state_with(m1)
    rsd_step(m1.zeros_like(), st_, spectral_spec(), 0.1, stale=True)
    old = list(st_.stale_duals)
    st_.momentum = m2
    rep = rsd_step(m2.zeros_like(), st_, spectral_spec(), 0.1, stale=True)
    # theta (dual 3) is always fresh; the matrices contribute last step's duals
    assert rep.dual_total == pytest.approx(np.sqrt(sum(d * d for d in old) + 9.0))
    assert st_.stale_duals == pytest.approx([3 * d for d in old])
