"""Norms on parameter slots, their LMOs and duals, and product-norm composition.

``lmo(v)`` is the argmin of <u, v> over the unit sphere of the norm and
``dual(v)`` is max <u, v> over the same sphere, so ``dual(v) == -<lmo(v), v>``.
A product norm applies an outer norm ``f`` to the vector of per-slot norms;
its LMO rescales each slot's LMO by ``phi = -LMO_f(slot duals)`` and its dual
is ``f_*`` of the slot duals.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegenerateInputError, DimensionError, NumericInstabilityError
from .tree import ParamTree

ADA_FLOOR = 1e-12


class AtomicNorm:
    def norm(self, v):
        raise NotImplementedError

    def lmo_dual(self, v):
        """LMO and dual norm together; the zero input maps to (0, 0.0)."""
        raise NotImplementedError

    def lmo(self, v):
        v = np.asarray(v, dtype=np.float64)
        if not np.any(v):
            raise DegenerateInputError(f"LMO of {self!r} is undefined at zero")
        return self.lmo_dual(v)[0]

    def dual(self, v):
        return self.lmo_dual(np.asarray(v, dtype=np.float64))[1]


class Euclid(AtomicNorm):
    def __repr__(self):
        return "Euclid()"

    def norm(self, v):
        return float(np.linalg.norm(np.ravel(v)))

    def lmo_dual(self, v):
        d = float(np.linalg.norm(np.ravel(v)))
        if d == 0.0:
            return np.zeros_like(v), 0.0
        return -v / d, d


class MaxAbs(AtomicNorm):
    def __repr__(self):
        return "MaxAbs()"

    def norm(self, v):
        v = np.ravel(v)
        return float(np.max(np.abs(v))) if v.size else 0.0

    def lmo_dual(self, v):
        # sign(0) = 0: ties are not broken, the result still has unit max-norm
        return -np.sign(v), float(np.sum(np.abs(v)))


class Spectral(AtomicNorm):
    """Largest singular value. Its dual is the nuclear norm, its LMO is -polar."""

    def __init__(self, cfg=linalg.DEFAULT_POLAR):
        self.cfg = cfg

    def __repr__(self):
        return "Spectral()"

    def norm(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError("spectral norm needs a matrix")
        return float(np.linalg.norm(v, 2))

    def lmo_dual(self, v):
        if v.ndim != 2:
            raise DimensionError("spectral norm needs a matrix")
        if not np.any(v):
            return np.zeros_like(v), 0.0
        P = linalg.polar(v, self.cfg)
        return -P, max(linalg.frob_inner(P, v), 0.0)


class Scaled(AtomicNorm):
    """``||v||_D = ||D v||`` for a positive diagonal ``D`` given as a vector.

    LMO is ``D^-1 LMO(D^-1 v)`` and the dual is ``||D^-1 v||_*``.
    """

    def __init__(self, diag, base):
        diag = np.asarray(diag, dtype=np.float64)
        if not (np.all(np.isfinite(diag)) and np.all(diag > 0)):
            raise ValueError("Scaled norm needs a strictly positive, finite diagonal")
        self.diag = diag
        self.base = base

    def __repr__(self):
        return f"Scaled({self.base!r}, dim={self.diag.size})"

    def _d(self, v):
        if self.diag.size != np.size(v):
            raise DimensionError(f"diag has {self.diag.size} entries, input has {np.size(v)}")
        return self.diag.reshape(np.shape(v))

    def norm(self, v):
        return self.base.norm(self._d(v) * v)

    def lmo_dual(self, v):
        d = self._d(v)
        u, dual = self.base.lmo_dual(v / d)
        return u / d, dual


def _checked_diag(diag):
    # overflowing moment buffers mean the run has diverged, not that the caller erred
    if not np.all(np.isfinite(diag)):
        raise NumericInstabilityError("adaptive norm diagonal is not finite (moment overflow)")
    return diag


def ada_inf_norm(m, v, eps, floor=ADA_FLOOR):
    """The step-dependent norm under which Adam is constrained steepest descent.

    ``diag = (sqrt(v) + eps) / |m|``; coordinates with ``m == 0`` get the
    finite stand-in ``max(eps, floor) / floor`` so the diagonal stays full rank.
    Their LMO entry is zero either way.
    """
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    absm = np.abs(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = np.where(absm > 0, (np.sqrt(v) + eps) / absm, max(eps, floor) / floor)
    return Scaled(_checked_diag(diag), MaxAbs())


def ada2_norm(v, eps):
    """The step-dependent norm under which Adam is regularized steepest descent."""
    with np.errstate(invalid="ignore"):
        diag = np.sqrt(np.sqrt(np.asarray(v, dtype=np.float64)) + eps)
    return Scaled(_checked_diag(diag), Euclid())


def atomic_lmo(norm, v):
    return norm.lmo(v)


def atomic_dual(norm, v):
    return norm.dual(v)


# ---------------------------------------------------------------- aggregators


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise DimensionError(f"aggregator has {w.size} weights for {n} slots")
    return w


class MaxAgg:
    """``f(r) = max_i w_i |r_i|``."""

    def __init__(self, weights=None):
        if weights is not None and not np.all(np.asarray(weights) > 0):
            raise ValueError("aggregator weights must be positive")
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)

    def __repr__(self):
        return f"MaxAgg(weights={None if self.weights is None else self.weights.tolist()})"

    def norm(self, r):
        r = np.asarray(r, dtype=np.float64)
        return float(np.max(np.abs(r * _weights(self.weights, r.size))))

    def dual(self, s):
        s = np.asarray(s, dtype=np.float64)
        return float(np.sum(np.abs(s) / _weights(self.weights, s.size)))

    def coefficients(self, s):
        s = np.asarray(s, dtype=np.float64)
        w = _weights(self.weights, s.size)
        return np.sign(s) / w

    def base_lr_ratio(self, n):
        return 1.0 / _weights(self.weights, n)[-1]


class L2Agg:
    """``f(r) = sqrt(sum_i (w_i r_i)^2)``."""

    def __init__(self, weights=None):
        if weights is not None and not np.all(np.asarray(weights) > 0):
            raise ValueError("aggregator weights must be positive")
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)

    def __repr__(self):
        return f"L2Agg(weights={None if self.weights is None else self.weights.tolist()})"

    def norm(self, r):
        r = np.asarray(r, dtype=np.float64)
        return float(np.linalg.norm(r * _weights(self.weights, r.size)))

    def dual(self, s):
        s = np.asarray(s, dtype=np.float64)
        return float(np.linalg.norm(s / _weights(self.weights, s.size)))

    def coefficients(self, s):
        s = np.asarray(s, dtype=np.float64)
        w = _weights(self.weights, s.size)
        return s / (w * w * self.dual(s))

    def base_lr_ratio(self, n):
        return 1.0 / _weights(self.weights, n)[-1] ** 2


class HybridAgg:
    """``f(r) = sqrt(max(|r_1|..|r_L|)^2 + lam * r_{L+1}^2)``; the last slot is theta."""

    def __init__(self, lam):
        lam = float(lam)
        if not (np.isfinite(lam) and lam > 0):
            raise ValueError("HybridAgg lambda must be finite and positive")
        self.lam = lam

    def __repr__(self):
        return f"HybridAgg(lam={self.lam})"

    def norm(self, r):
        r = np.abs(np.asarray(r, dtype=np.float64))
        top = float(np.max(r[:-1])) if r.size > 1 else 0.0
        return float(np.sqrt(top**2 + self.lam * r[-1] ** 2))

    def dual(self, s):
        s = np.abs(np.asarray(s, dtype=np.float64))
        return float(np.sqrt(np.sum(s[:-1]) ** 2 + s[-1] ** 2 / self.lam))

    def coefficients(self, s):
        s = np.asarray(s, dtype=np.float64)
        d = self.dual(s)
        phi = np.empty_like(s)
        phi[:-1] = np.sign(s[:-1]) * np.sum(np.abs(s[:-1])) / d
        phi[-1] = s[-1] / (self.lam * d)
        return phi

    def base_lr_ratio(self, n):
        return 1.0 / self.lam


@dataclass(frozen=True)
class NormSpec:
    slot_norms: tuple
    aggregator: object

    def __post_init__(self):
        object.__setattr__(self, "slot_norms", tuple(self.slot_norms))

    def check(self, V):
        if len(self.slot_norms) != V.n_slots:
            raise DimensionError(
                f"NormSpec has {len(self.slot_norms)} slot norms, tree has {V.n_slots} slots"
            )


def _slot_lmo_duals(spec, V):
    spec.check(V)
    lmos, duals = [], np.zeros(V.n_slots)
    for i, (n, v) in enumerate(zip(spec.slot_norms, V.slots())):
        if v.size == 0:
            lmos.append(np.zeros_like(v))
            continue
        u, d = n.lmo_dual(v)
        lmos.append(u)
        duals[i] = d
    return lmos, duals


def product_lmo_dual(spec, V, dual_override=None):
    """LMO and dual of the product norm in one pass over the slots.

    ``dual_override`` optionally replaces per-slot duals in the aggregation
    (entries that are ``None`` keep the fresh value); the directions always come
    from the fresh slot LMOs. Returns ``(lmo_tree, dual, fresh_slot_duals)``.
    """
    lmos, fresh = _slot_lmo_duals(spec, V)
    s = fresh.copy()
    if dual_override is not None:
        for i, d in enumerate(dual_override):
            if d is not None:
                s[i] = d
    if not np.any(s):
        raise DegenerateInputError("LMO of an all-zero parameter tree is undefined")
    phi = spec.aggregator.coefficients(s)
    lmo = ParamTree.from_slots([p * u for p, u in zip(phi, lmos)])
    return lmo, spec.aggregator.dual(s), fresh


def product_lmo(spec, V):
    return product_lmo_dual(spec, V)[0]


def product_dual(spec, V):
    spec.check(V)
    duals = np.array([n.dual(v) if v.size else 0.0 for n, v in zip(spec.slot_norms, V.slots())])
    return spec.aggregator.dual(duals)


def product_norm(spec, V):
    spec.check(V)
    r = np.array([n.norm(v) if v.size else 0.0 for n, v in zip(spec.slot_norms, V.slots())])
    return spec.aggregator.norm(r)
