"""Generic steepest-descent update engine.

Every step moves the parameters along the product-norm LMO of the momentum.
What differs between methods is the scalar in front of it:

    constrained     eta
    regularized     eta * d
    constrained     min(eta, gap / d)             (truncated model)
    regularized     min(eta, gap / d**2) * d      (truncated model)

with ``d`` the product dual norm of the momentum and ``gap = F~ - F*``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import DimensionError
from .norms import Spectral, product_lmo_dual
from .tree import ParamTree

DIV_FLOOR = 1e-12


@dataclass
class OptState:
    momentum: ParamTree = None
    second_moment: np.ndarray = None
    f_tilde: float = 0.0
    model_estimate: float = math.nan
    stale_duals: list = None
    stale_total: float = 0.0
    step: int = 0


@dataclass
class StepReport:
    effective_step_matrix: float
    effective_step_base: float
    model_estimate: float
    dual_total: float
    clamp_active: bool


def momentum_update(state, grads, beta, beta2, beta_base=None):
    """EMA of gradients (and of squared theta-gradients), in place.

    Buffers start at the first observation (m_0 = g_0, v_0 = g_0^2), which
    removes the need for bias correction.
    """
    if not (0.0 <= beta < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("beta and beta2 must lie in [0, 1)")
    beta_base = beta if beta_base is None else beta_base
    if state.momentum is None:
        state.momentum = grads.copy()
        state.second_moment = grads.base**2
        return
    if state.momentum.shapes != grads.shapes:
        raise DimensionError(f"gradient shapes {grads.shapes} do not match state {state.momentum.shapes}")
    for M, G in zip(state.momentum.matrices, grads.matrices):
        M *= beta
        M += (1.0 - beta) * G
    state.momentum.base *= beta_base
    state.momentum.base += (1.0 - beta_base) * grads.base
    state.second_moment *= beta2
    state.second_moment += (1.0 - beta2) * grads.base**2


def model_estimate_update(state, loss, grads, W, beta):
    """Update the running offset f~ and return the model value F~_t at W.

    Call after :func:`momentum_update` for the same step.
    F~_t = f~_t + <m_t, w_t> with f~_t = EMA of (F_i(w_i) - <g_i, w_i>).
    """
    fresh = float(loss) - grads.inner(W)
    if state.step == 0:
        state.f_tilde = fresh
    else:
        state.f_tilde = beta * state.f_tilde + (1.0 - beta) * fresh
    state.model_estimate = state.f_tilde + state.momentum.inner(W)
    return state.model_estimate


def stale_cache_update(state, fresh_duals):
    state.stale_duals = [float(d) for d in fresh_duals]
    state.stale_total = float(sum(state.stale_duals))


def _stale_slots(spec):
    return [i for i, n in enumerate(spec.slot_norms) if isinstance(n, Spectral)]


def _direction(state, spec, stale):
    """Product LMO and dual of the momentum, optionally with cached slot duals.

    With ``stale`` the spectral slots contribute last step's nuclear norms to
    the aggregation; the first step has no cache and uses fresh values.
    """
    override = None
    idx = _stale_slots(spec) if stale else []
    if stale and state.stale_duals is not None:
        override = [None] * len(spec.slot_norms)
        for i, d in zip(idx, state.stale_duals):
            override[i] = d
    lmo, dual, fresh = product_lmo_dual(spec, state.momentum, override)
    if stale:
        stale_cache_update(state, [fresh[i] for i in idx])
    return lmo, dual


def _report(spec, n_slots, coef, F, dual, clamp):
    ratio = spec.aggregator.base_lr_ratio(n_slots)
    return StepReport(coef, coef * ratio, F, dual, clamp)


def _zero_report(state, dual=0.0):
    return StepReport(0.0, 0.0, state.model_estimate, dual, False)


def csd_step(W, state, spec, eta, stale=False):
    """W <- W + eta * LMO(m)."""
    if not state.momentum.any_nonzero():
        return _zero_report(state)
    lmo, dual = _direction(state, spec, stale)
    W.add_(lmo, eta)
    return _report(spec, W.n_slots, eta, state.model_estimate, dual, False)


def rsd_step(W, state, spec, eta, stale=False):
    """W <- W + eta * ||m||_* * LMO(m)."""
    if not state.momentum.any_nonzero():
        return _zero_report(state)
    lmo, dual = _direction(state, spec, stale)
    W.add_(lmo, eta * dual)
    return _report(spec, W.n_slots, eta, state.model_estimate, dual, False)


def momo_csd_step(W, state, spec, eta, f_star, stale=False):
    """Minimize max(F~ + <m, w - w_t>, F*) over the eta-ball around w_t.

    Among minimizers the closest to w_t is taken. A model already at or below
    F* gives a zero step.
    """
    if not state.momentum.any_nonzero():
        return _zero_report(state)
    lmo, dual = _direction(state, spec, stale)
    gap = max(state.model_estimate - f_star, 0.0)
    trunc = gap / max(dual, DIV_FLOOR)
    coef = min(eta, trunc)
    W.add_(lmo, coef)
    return _report(spec, W.n_slots, coef, state.model_estimate, dual, trunc < eta)


def momo_rsd_step(W, state, spec, eta, f_star, stale=False):
    """Minimize max(F~ + <m, w - w_t>, F*) + ||w - w_t||^2 / (2 eta)."""
    if not state.momentum.any_nonzero():
        return _zero_report(state)
    lmo, dual = _direction(state, spec, stale)
    gap = max(state.model_estimate - f_star, 0.0)
    trunc = gap / max(dual * dual, DIV_FLOOR)
    coef = min(eta, trunc)
    W.add_(lmo, coef * dual)
    return _report(spec, W.n_slots, coef, state.model_estimate, dual, trunc < eta)
