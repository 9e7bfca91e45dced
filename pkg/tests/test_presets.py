import numpy as np
import pytest

from normforge.errors import ConfigError
from normforge.linalg import polar
from normforge.presets import (
    AdamState, DirectState, PRESETS, ScheduleConfig, SteepestDescent, VariantConfig, adam_step,
    build_variant, lr_multiplier, lr_schedule, muonadam_step, muonmax_momo_step, preset,
    variant_grid,
)
from normforge.tree import ParamTree


def test_grid_has_36_distinct_variants():
    grid = list(variant_grid())
    assert len(grid) == 36
    assert len({(v.triple, v.truncation) for v in grid}) == 36
    for v in grid:
        build_variant(v)


def test_named_presets():
    assert preset("muon_adam").triple == ("constrained", "inf", "ada_inf")
    assert preset("scion").triple == ("constrained", "inf", "inf")
    assert preset("polargrad").triple == ("regularized", "l2", "ada_2")
    assert preset("muonmax_momo").truncation
    assert preset("muonmax_momo").name == "muonmax_momo"
    assert VariantConfig(sd_type="regularized").name == "regularized-inf-ada_inf"
    with pytest.raises(ConfigError):
        preset("adamw")


def test_defaults():
    v = VariantConfig()
    assert (v.beta, v.beta2, v.epsilon, v.f_star, v.eta_m, v.eta_b) == (0.95, 0.95, 1e-8, 0.0, 0.01, 0.01)


@pytest.mark.parametrize("kw", [
    {"backup_norm": "ada_3"}, {"sd_type": "proximal"}, {"product_norm": "l1"},
    {"eta_m": 0.0}, {"eta_b": -1.0}, {"beta": 1.0}, {"beta2": -0.1}, {"epsilon": 0.0},
    {"f_star": float("nan")},
])
def test_invalid_variant(kw):
    with pytest.raises(ConfigError):
        VariantConfig(**kw)


def test_build_variant_rejects_other_objects():
    with pytest.raises(ConfigError):
        build_variant({"sd_type": "constrained"})


def test_muonadam_direct_single_matrix():
    W = ParamTree([np.eye(2)], np.zeros(0))
    G = ParamTree([np.diag([2.0, 1.0])], np.zeros(0))
    muonadam_step(W, G, DirectState(), 0.1, 0.1, 0.0, 0.0, 0.0, 1e-8)
    assert np.allclose(W.matrices[0], 0.9 * np.eye(2), atol=1e-10)


def test_adam_matched_moments():
    theta = np.array([1.0])
    adam_step(theta, np.array([2.0]), AdamState(), 0.1, 0.0, 0.0, 0.0)
    assert theta[0] == pytest.approx(0.9)


def test_muonmax_momo_single_slot_by_hand():
    G = np.array([[2.0, 1.0], [0.0, 1.0]])
    nuc = np.linalg.svd(G, compute_uv=False).sum()
    for eta, F in ((0.01, 1.0), (10.0, 1.0)):
        cfg = preset("muonmax_momo", eta_m=eta, eta_b=eta, beta=0.0, beta2=0.0)
        W = ParamTree([np.zeros((2, 2))], np.zeros(0))
        rep = muonmax_momo_step(W, F, ParamTree([G], np.zeros(0)), DirectState(), cfg)
        coef = min(eta, F / nuc**2)
        assert rep.dual_total == pytest.approx(nuc)
        assert np.allclose(W.matrices[0], -coef * nuc * polar(G), atol=1e-10)
        # the generic path agrees
        W2 = ParamTree([np.zeros((2, 2))], np.zeros(0))
        SteepestDescent(cfg).step(W2, F, ParamTree([G], np.zeros(0)))
        assert np.allclose(W.matrices[0], W2.matrices[0], atol=1e-12)


def test_csd_homogeneous_in_learning_rates():
    rng = np.random.default_rng(0)
    G = ParamTree([rng.standard_normal((3, 2))], rng.standard_normal(3))
    for name in ("muon_adam", "scion"):
        base = preset(name, eta_m=0.02, eta_b=0.005)
        deltas = []
        for c in (1.0, 3.0):
            W = G.zeros_like()
            rep = SteepestDescent(base.scaled(c)).step(W, 0.0, G)
            deltas.append((W.flat(), rep.effective_step_matrix, rep.effective_step_base))
        assert np.allclose(deltas[1][0], 3.0 * deltas[0][0], rtol=1e-12)
        assert deltas[1][1] == pytest.approx(3 * deltas[0][1])
        assert deltas[0][2] == pytest.approx(0.005)


def test_truncated_variants_share_one_beta():
    rng = np.random.default_rng(1)
    cfg = preset("muon_adam_momo", beta=0.5, beta1=0.9)
    opt = SteepestDescent(cfg)
    W = ParamTree([rng.standard_normal((2, 2))], np.zeros(2))
    g1 = ParamTree([np.ones((2, 2))], np.array([1.0, 1.0]))
    g2 = ParamTree([np.ones((2, 2))], np.array([3.0, 3.0]))
    opt.step(W, 1.0, g1)
    opt.step(W, 1.0, g2)
    assert np.allclose(opt.state.momentum.base, 2.0)


def test_schedule_points():
    s = ScheduleConfig(1000)
    assert lr_schedule(500, s, 0.2) == pytest.approx(0.2)
    assert lr_schedule(1000, s, 0.2) == pytest.approx(0.02)
    assert lr_schedule(750, s, 0.2) == pytest.approx(0.11)
    assert lr_multiplier(1, s) == pytest.approx(1 / 50)
    assert lr_multiplier(50, s) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        lr_multiplier(1001, s)
    with pytest.raises(ConfigError):
        lr_multiplier(-1, s)


def test_schedule_is_monotone_pieces():
    s = ScheduleConfig(200)
    vals = [lr_multiplier(t, s) for t in range(201)]
    assert max(vals) == 1.0 and min(vals[1:]) > 0
    assert all(a <= b for a, b in zip(vals[:10], vals[1:11]))
    assert all(a >= b for a, b in zip(vals[100:-1], vals[101:]))


def test_schedule_validation():
    for kw in ({"warmup_frac": 0.6}, {"final_frac_of_peak": 0.0}, {"stable_frac": 1.5}):
        with pytest.raises(ConfigError):
            ScheduleConfig(100, **kw)
    assert lr_multiplier(3, ScheduleConfig(3, warmup_frac=0, stable_frac=1)) == 1.0


def test_presets_cover_four_named_methods():
    assert set(PRESETS) == {"muon_adam", "scion", "polargrad", "muonmax"}
