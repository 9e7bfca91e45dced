"""Named optimizers as points of the (SD type, product norm, backup norm,
truncation) grid, plus direct closed-form implementations of the well-known
ones that serve as independent references for the generic engine.
"""

from dataclasses import dataclass, field, replace
import itertools
import math

import numpy as np

from . import engine, linalg
from .engine import OptState, StepReport
from .errors import ConfigError
from .norms import HybridAgg, L2Agg, MaxAbs, MaxAgg, NormSpec, Spectral, ada2_norm, ada_inf_norm

SD_TYPES = ("constrained", "regularized")
PRODUCT_NORMS = ("inf", "l2", "hybrid")
BACKUP_NORMS = ("inf", "ada_inf", "ada_2")

PRESETS = {
    "muon_adam": ("constrained", "inf", "ada_inf"),
    "scion": ("constrained", "inf", "inf"),
    "polargrad": ("regularized", "l2", "ada_2"),
    "muonmax": ("regularized", "hybrid", "ada_2"),
}


@dataclass(frozen=True)
class VariantConfig:
    sd_type: str = "constrained"
    product_norm: str = "inf"
    backup_norm: str = "ada_inf"
    truncation: bool = False
    stale: bool = False
    eta_m: float = 0.01
    eta_b: float = 0.01
    beta: float = 0.95
    beta2: float = 0.95
    epsilon: float = 1e-8
    f_star: float = 0.0
    # separate theta momentum for the untruncated methods; None means beta
    beta1: float = None

    def __post_init__(self):
        for key, allowed in (
            ("sd_type", SD_TYPES),
            ("product_norm", PRODUCT_NORMS),
            ("backup_norm", BACKUP_NORMS),
        ):
            if getattr(self, key) not in allowed:
                raise ConfigError(
                    f"{key} must be one of {allowed}, got {getattr(self, key)!r}", key=key
                )
        for key in ("eta_m", "eta_b", "epsilon"):
            val = getattr(self, key)
            if not (math.isfinite(val) and val > 0):
                raise ConfigError(f"{key} must be positive and finite, got {val}", key=key)
        for key in ("beta", "beta2", "beta1"):
            val = getattr(self, key)
            if val is not None and not 0.0 <= val < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1), got {val}", key=key)
        if math.isnan(self.f_star):
            raise ConfigError("f_star is NaN", key="f_star")

    @property
    def triple(self):
        return (self.sd_type, self.product_norm, self.backup_norm)

    @property
    def name(self):
        for name, triple in PRESETS.items():
            if triple == self.triple:
                return name + ("_momo" if self.truncation else "")
        base = "-".join(self.triple)
        return base + ("-momo" if self.truncation else "")

    def scaled(self, rho):
        """Same variant with both learning rates multiplied by ``rho``."""
        return replace(self, eta_m=self.eta_m * rho, eta_b=self.eta_b * rho)


def preset(name, **overrides):
    """``preset("muonmax_momo", eta_m=0.1)`` and the like."""
    truncation = name.endswith("_momo")
    key = name[: -len("_momo")] if truncation else name
    if key not in PRESETS:
        known = sorted(PRESETS) + sorted(k + "_momo" for k in PRESETS)
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(known)}", key="preset")
    sd, prod, backup = PRESETS[key]
    kw = dict(sd_type=sd, product_norm=prod, backup_norm=backup, truncation=truncation)
    kw.update(overrides)
    return VariantConfig(**kw)


def variant_grid(**common):
    """All 36 (SD type, product norm, backup norm, truncation) combinations."""
    for sd, prod, backup, trunc in itertools.product(SD_TYPES, PRODUCT_NORMS, BACKUP_NORMS, (False, True)):
        yield VariantConfig(sd_type=sd, product_norm=prod, backup_norm=backup, truncation=trunc, **common)


class SteepestDescent:
    """A variant of the grid bound to its own optimizer state.

    ``step`` consumes the loss and gradient at the current parameters and
    updates ``W`` in place.
    """

    def __init__(self, cfg, polar_cfg=linalg.DEFAULT_POLAR):
        self.cfg = cfg
        self.polar_cfg = polar_cfg
        self.state = OptState()

    def __repr__(self):
        return f"SteepestDescent({self.cfg.name})"

    def aggregator(self, n_matrices):
        ratio = self.cfg.eta_m / self.cfg.eta_b
        if self.cfg.product_norm == "inf":
            return MaxAgg([1.0] * n_matrices + [ratio])
        if self.cfg.product_norm == "l2":
            return L2Agg([1.0] * n_matrices + [math.sqrt(ratio)])
        return HybridAgg(ratio)

    def backup_norm(self):
        st, eps = self.state, self.cfg.epsilon
        if self.cfg.backup_norm == "inf":
            return MaxAbs()
        if self.cfg.backup_norm == "ada_inf":
            return ada_inf_norm(st.momentum.base, st.second_moment, eps)
        return ada2_norm(st.second_moment, eps)

    def norm_spec(self, n_matrices):
        slots = [Spectral(self.polar_cfg)] * n_matrices + [self.backup_norm()]
        return NormSpec(slots, self.aggregator(n_matrices))

    def step(self, W, loss, grads, lr_mult=1.0):
        cfg, st = self.cfg, self.state
        beta_base = cfg.beta if cfg.truncation or cfg.beta1 is None else cfg.beta1
        engine.momentum_update(st, grads, cfg.beta, cfg.beta2, beta_base)
        if cfg.truncation:
            engine.model_estimate_update(st, loss, grads, W, cfg.beta)
        spec = self.norm_spec(len(W.matrices))
        eta = cfg.eta_m * lr_mult
        if cfg.truncation:
            fn = engine.momo_csd_step if cfg.sd_type == "constrained" else engine.momo_rsd_step
            report = fn(W, st, spec, eta, cfg.f_star, stale=cfg.stale)
        else:
            fn = engine.csd_step if cfg.sd_type == "constrained" else engine.rsd_step
            report = fn(W, st, spec, eta, stale=cfg.stale)
        st.step += 1
        return report


def build_variant(cfg, polar_cfg=linalg.DEFAULT_POLAR):
    if not isinstance(cfg, VariantConfig):
        raise ConfigError(f"expected a VariantConfig, got {type(cfg).__name__}")
    return SteepestDescent(cfg, polar_cfg)


# --------------------------------------------------------------------------
# Direct implementations. These deliberately avoid the norm machinery so the
# equivalence tests compare two independent code paths.


@dataclass
class AdamState:
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0


def adam_step(theta, grad, state, eta, beta1, beta2, epsilon):
    """theta <- theta - eta * m / (sqrt(v) + eps), no bias correction, in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if state.m is None:
        state.m = grad.copy()
        state.v = grad * grad
    else:
        state.m = beta1 * state.m + (1.0 - beta1) * grad
        state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    theta -= eta * state.m / (np.sqrt(state.v) + epsilon)
    state.step += 1
    return theta


@dataclass
class DirectState:
    M: list = None
    m: np.ndarray = None
    v: np.ndarray = None
    f_tilde: float = 0.0
    stale: list = None
    step: int = 0


def _ema(state, grads, beta, beta1, beta2):
    if state.M is None:
        state.M = [G.copy() for G in grads.matrices]
        state.m = grads.base.copy()
        state.v = grads.base * grads.base
        return
    state.M = [beta * M + (1.0 - beta) * G for M, G in zip(state.M, grads.matrices)]
    state.m = beta1 * state.m + (1.0 - beta1) * grads.base
    state.v = beta2 * state.v + (1.0 - beta2) * grads.base * grads.base


def _polar_or_zero(M, polar_cfg):
    return linalg.polar(M, polar_cfg) if np.any(M) else np.zeros_like(M)


def muonadam_step(W, grads, state, eta_m, eta_b, beta, beta1, beta2, epsilon,
                  polar_cfg=linalg.DEFAULT_POLAR):
    """Muon on the matrices, Adam on theta, side by side."""
    _ema(state, grads, beta, beta1, beta2)
    for W_l, M in zip(W.matrices, state.M):
        W_l -= eta_m * _polar_or_zero(M, polar_cfg)
    W.base -= eta_b * state.m / (np.sqrt(state.v) + epsilon)
    state.step += 1
    return StepReport(eta_m, eta_b, math.nan, math.nan, False)


def scion_step(W, grads, state, eta_m, eta_b, beta, polar_cfg=linalg.DEFAULT_POLAR):
    """Muon on the matrices, sign descent with momentum on theta."""
    _ema(state, grads, beta, beta, 0.0)
    for W_l, M in zip(W.matrices, state.M):
        W_l -= eta_m * _polar_or_zero(M, polar_cfg)
    W.base -= eta_b * np.sign(state.m)
    state.step += 1
    return StepReport(eta_m, eta_b, math.nan, math.nan, False)


def polargrad_step(W, grads, state, eta_m, eta_b, beta, beta2, epsilon,
                   polar_cfg=linalg.DEFAULT_POLAR):
    """Nuclear-norm-scaled polar steps on the matrices, Adam on theta."""
    _ema(state, grads, beta, beta, beta2)
    for W_l, M in zip(W.matrices, state.M):
        P = _polar_or_zero(M, polar_cfg)
        W_l -= eta_m * np.sum(P * M) * P
    W.base -= eta_b * state.m / (np.sqrt(state.v) + epsilon)
    state.step += 1
    return StepReport(eta_m, eta_b, math.nan, math.nan, False)


def muonmax_momo_step(W, loss, grads, state, cfg, polar_cfg=linalg.DEFAULT_POLAR):
    """One MuonMax-Momo step written out in closed form.

    ``cfg`` is a :class:`VariantConfig`; ``cfg.stale`` switches the nuclear-norm
    sum to last step's values (fresh on the first step).
    """
    first = state.M is None
    _ema(state, grads, cfg.beta, cfg.beta, cfg.beta2)
    lin = sum(np.sum(G * W_l) for G, W_l in zip(grads.matrices, W.matrices)) + grads.base @ W.base
    fresh = loss - lin
    state.f_tilde = fresh if first else cfg.beta * state.f_tilde + (1.0 - cfg.beta) * fresh
    F = (state.f_tilde
         + sum(np.sum(M * W_l) for M, W_l in zip(state.M, W.matrices))
         + state.m @ W.base)

    polars = [_polar_or_zero(M, polar_cfg) for M in state.M]
    nucs = [float(np.sum(P * M)) for P, M in zip(polars, state.M)]
    nuc_sum = sum(state.stale) if (cfg.stale and state.stale is not None) else sum(nucs)
    state.stale = nucs

    ratio = cfg.eta_b / cfg.eta_m
    precond = np.sqrt(state.v) + cfg.epsilon
    theta_term = float(np.sum(state.m**2 / precond))
    d = math.sqrt(nuc_sum**2 + ratio * theta_term)
    state.step += 1
    if d == 0.0:
        return StepReport(0.0, 0.0, F, 0.0, False)

    trunc = max(F - cfg.f_star, 0.0) / max(d * d, engine.DIV_FLOOR)
    coef = min(cfg.eta_m, trunc)
    for W_l, P in zip(W.matrices, polars):
        W_l -= coef * nuc_sum * P
    W.base -= min(cfg.eta_b, ratio * trunc) * state.m / precond
    return StepReport(coef, coef * ratio, F, d, trunc < cfg.eta_m)


# --------------------------------------------------------------------------
# learning-rate schedule


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup, flat plateau, linear decay to a fraction of the peak."""

    total_steps: int
    warmup_frac: float = 0.05
    stable_frac: float = 0.50
    final_frac_of_peak: float = 0.10

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0", key="total_steps")
        if not 0.0 <= self.warmup_frac <= self.stable_frac <= 1.0:
            raise ConfigError("need 0 <= warmup_frac <= stable_frac <= 1", key="warmup_frac")
        if not 0.0 < self.final_frac_of_peak <= 1.0:
            raise ConfigError("final_frac_of_peak must lie in (0, 1]", key="final_frac_of_peak")


def lr_multiplier(t, sched):
    T = sched.total_steps
    if not 0 <= t <= T:
        raise ConfigError(f"step {t} outside [0, {T}]", key="t")
    warm = sched.warmup_frac * T
    stable_end = sched.stable_frac * T
    if warm > 0 and t < warm:
        return t / warm
    if t <= stable_end or T == stable_end:
        return 1.0
    frac = (t - stable_end) / (T - stable_end)
    return 1.0 - (1.0 - sched.final_frac_of_peak) * frac


def lr_schedule(t, sched, eta_peak):
    return eta_peak * lr_multiplier(t, sched)
