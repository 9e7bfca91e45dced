"""Acceptance checks: every closed form against an independent reference.

Each check returns a list of parts ``(what, measured, tolerance, kind)`` where
``kind`` is ``"le"`` (measured must not exceed the tolerance), ``"ge"`` (must
reach it), ``"time"`` (a runtime limit in seconds, never scaled) or ``"info"``
(reported, never judged).
:func:`run_verify` turns them into one flat record per criterion.
"""

from dataclasses import replace
import math
import time

import numpy as np

from . import engine, linalg
from .engine import OptState
from .experiment import RunConfig, SweepConfig, robustness, run_sweep, train
from .models import MLP, DatasetSpec, ModelSpec, finite_diff_check, make_dataset
from .norms import (
    Euclid, HybridAgg, L2Agg, MaxAbs, MaxAgg, NormSpec, Scaled, Spectral,
    product_dual, product_lmo,
)
from .presets import (
    AdamState, DirectState, SteepestDescent, VariantConfig, adam_step, muonadam_step,
    muonmax_momo_step, polargrad_step, preset, scion_step,
)
from .tree import ParamTree

# Joint learning rates (eta_m = eta_b) picked as the best final loss over
# {1e-3, 2e-3, 5e-3, ..., 0.5} on the default teacher task, 2000 steps, seed 100
# (outside the sweep seeds). demos/03_learning_rate_robustness.py reruns it.
TUNED_LR = {
    "muon_adam": 0.01,
    "scion": 0.01,
    "muon_adam_momo": 0.01,
    "muonmax_momo": 0.1,
    "muonmax": 0.02,
}
ROBUSTNESS_METHODS = ("muon_adam", "scion", "muon_adam_momo", "muonmax_momo")
RHO_GRID = (0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _task(seed, dims=(6, 8, 8, 3), size=64):
    model = MLP(ModelSpec(dims, seed=seed))
    data = make_dataset(DatasetSpec(size=size, noise=0.1, seed=seed,
                                    n_features=dims[0], n_outputs=dims[-1]), batch_size=16)
    return model, data


# ------------------------------------------------------------ 1. Adam


def check_adam(polar_cfg=linalg.DEFAULT_POLAR):
    t0 = time.perf_counter()
    worst = {"constrained": 0.0, "regularized": 0.0}
    for seed in range(5):
        for dim in (1, 7):
            rng = np.random.default_rng([seed, dim])
            A = rng.standard_normal((dim, dim))
            H = A @ A.T / dim + 0.1 * np.eye(dim)
            b = rng.standard_normal(dim)
            noise = 0.3 * rng.standard_normal((100, dim))
            theta0 = rng.standard_normal(dim)
            for sd, backup in (("constrained", "ada_inf"), ("regularized", "ada_2")):
                cfg = VariantConfig(sd_type=sd, product_norm="inf", backup_norm=backup,
                                    eta_m=0.01, eta_b=0.01, beta=0.9, beta2=0.99, epsilon=1e-8)
                opt = SteepestDescent(cfg, polar_cfg)
                W = ParamTree([], theta0)
                ref, st = theta0.copy(), AdamState()
                for t in range(100):
                    opt.step(W, 0.0, ParamTree([], H @ W.base - b + noise[t]))
                    adam_step(ref, H @ ref - b + noise[t], st, 0.01, 0.9, 0.99, 1e-8)
                    worst[sd] = max(worst[sd], _rel(W.base, ref))
    return [
        ("CSD with ada-inf norm vs Adam, max relative iterate gap", worst["constrained"], 1e-10, "le"),
        ("RSD with ada-2 norm vs Adam, max relative iterate gap", worst["regularized"], 1e-10, "le"),
        ("runtime", time.perf_counter() - t0, 1.0, "time"),
    ]


# ------------------------------------------------------- 2. MuonAdam


def check_muonadam(polar_cfg=linalg.DEFAULT_POLAR):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        model, batches = _task(seed)
        cfg = preset("muon_adam", eta_m=0.02, eta_b=0.005, beta=0.95, beta1=0.9, beta2=0.99)
        opt = SteepestDescent(cfg, polar_cfg)
        W = model.init_params()
        D, st = W.copy(), DirectState()
        for t in range(100):
            batch = batches[t % len(batches)]
            loss, g = model.loss_and_grad(W, batch)
            opt.step(W, loss, g)
            _, gd = model.loss_and_grad(D, batch)
            muonadam_step(D, gd, st, 0.02, 0.005, 0.95, 0.9, 0.99, 1e-8, polar_cfg)
            worst = max(worst, _rel(W.flat(), D.flat()))
    return [
        ("generic vs direct MuonAdam, max relative iterate gap", worst, 1e-8, "le"),
        ("runtime", time.perf_counter() - t0, 5.0, "time"),
    ]


# ------------------------------------------------ 3. Scion, PolarGrad


def _per_step_gap(name, direct, polar_cfg, steps=30):
    worst = 0.0
    for seed in range(3):
        model, batches = _task(seed)
        opt = SteepestDescent(preset(name, eta_m=0.02, eta_b=0.005), polar_cfg)
        W = model.init_params()
        st = DirectState()
        for t in range(steps):
            loss, g = model.loss_and_grad(W, batches[t % len(batches)])
            before = W.copy()
            D = W.copy()
            opt.step(W, loss, g)
            direct(D, g, st)
            worst = max(worst, _rel((W - before).flat(), (D - before).flat()))
    return worst


def check_scion_polargrad(polar_cfg=linalg.DEFAULT_POLAR):
    scion = _per_step_gap(
        "scion", lambda D, g, st: scion_step(D, g, st, 0.02, 0.005, 0.95, polar_cfg), polar_cfg)
    pg = _per_step_gap(
        "polargrad",
        lambda D, g, st: polargrad_step(D, g, st, 0.02, 0.005, 0.95, 0.95, 1e-8, polar_cfg),
        polar_cfg)
    return [
        ("Scion: generic vs sign/polar closed form, max relative update gap", scion, 1e-10, "le"),
        ("PolarGrad: generic vs nuclear-scaled polar closed form, max relative update gap", pg, 1e-10, "le"),
    ]


# -------------------------------------------------- 4. MuonMax-Momo


def _muonmax_gap(generic_cfg, direct_cfg, polar_cfg, steps=50):
    worst, clamps = 0.0, 0
    for seed in range(3):
        model, batches = _task(seed)
        opt = SteepestDescent(generic_cfg, polar_cfg)
        W = model.init_params()
        D, st = W.copy(), DirectState()
        for t in range(steps):
            batch = batches[t % len(batches)]
            loss, g = model.loss_and_grad(W, batch)
            clamps += opt.step(W, loss, g).clamp_active
            loss_d, gd = model.loss_and_grad(D, batch)
            muonmax_momo_step(D, loss_d, gd, st, direct_cfg, polar_cfg)
            worst = max(worst, _rel(W.flat(), D.flat()))
    return worst, clamps


def check_muonmax_momo(polar_cfg=linalg.DEFAULT_POLAR):
    # large enough learning rates that the truncation engages on some steps
    cfg = preset("muonmax_momo", eta_m=0.5, eta_b=0.2, f_star=0.0)
    gap, clamps = _muonmax_gap(cfg, cfg, polar_cfg)
    stale_cfg = replace(cfg, stale=True)
    gap_stale, _ = _muonmax_gap(stale_cfg, stale_cfg, polar_cfg)
    plain = preset("muonmax", eta_m=0.05, eta_b=0.02)
    far = preset("muonmax_momo", eta_m=0.05, eta_b=0.02, f_star=-1e9)
    gap_plain, _ = _muonmax_gap(plain, far, polar_cfg)
    return [
        ("generic regularized Momo (MuonMax norm) vs closed form, max relative gap", gap, 1e-8, "le"),
        ("same with stale nuclear norms", gap_stale, 1e-8, "le"),
        ("steps where the truncation was active (exercised)", clamps, 1, "ge"),
        ("closed form with F* = -1e9 vs plain MuonMax, max relative gap", gap_plain, 1e-10, "le"),
    ]


# ------------------------------------------ 5. product-norm brute force

_N_SAMPLES = 10**6
_MAT_SHAPES = ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1), (2, 3), (3, 2))


def _random_tree(rng, max_dim=6):
    budget = max_dim - 1  # keep at least one theta entry
    shapes = []
    for _ in range(rng.integers(0, 3)):
        fits = [s for s in _MAT_SHAPES if s[0] * s[1] <= budget]
        if not fits:
            break
        s = fits[rng.integers(len(fits))]
        shapes.append(s)
        budget -= s[0] * s[1]
    n_theta = int(rng.integers(1, budget + 2))
    V = ParamTree([rng.standard_normal(s) for s in shapes], rng.standard_normal(n_theta))
    kind = rng.integers(4)
    diag = rng.uniform(0.3, 3.0, n_theta)
    theta_norm = [MaxAbs(), Euclid(), Scaled(diag, Euclid()), Scaled(diag, MaxAbs())][kind]
    return V, theta_norm


def _batched_spectral(Z, shape):
    """Largest singular value of each row of Z read as a k x l matrix (min(k, l) <= 2)."""
    k, l = shape
    if min(k, l) == 1:
        return np.sqrt(np.einsum("ij,ij->i", Z, Z))
    A = Z.reshape(-1, k, l)
    a, b = (A[:, 0, :], A[:, 1, :]) if k == 2 else (A[:, :, 0], A[:, :, 1])
    g00 = np.einsum("ij,ij->i", a, a)
    g11 = np.einsum("ij,ij->i", b, b)
    g01 = np.einsum("ij,ij->i", a, b)
    half_tr = 0.5 * (g00 + g11)
    disc = np.sqrt(np.maximum(0.25 * (g00 - g11) ** 2 + g01 * g01, 0.0))
    return np.sqrt(half_tr + disc)


def _batched_atomic(Z, norm):
    if isinstance(norm, MaxAbs):
        return np.max(np.abs(Z), axis=1)
    if isinstance(norm, Euclid):
        return np.sqrt(np.einsum("ij,ij->i", Z, Z))
    return _batched_atomic(Z * norm.diag, norm.base)


def _slot_norms(Z, V, theta_norm):
    """Primal slot norms of every sample row, computed from the definitions."""
    cols, k = [], 0
    for M in V.matrices:
        cols.append(_batched_spectral(Z[:, k:k + M.size], M.shape))
        k += M.size
    cols.append(_batched_atomic(Z[:, k:k + V.base.size], theta_norm))
    return np.stack(cols, axis=1)


def _agg_norm(R, agg):
    if isinstance(agg, MaxAgg):
        return np.max(R * agg.weights, axis=1)
    if isinstance(agg, L2Agg):
        return np.sqrt(np.sum((R * agg.weights) ** 2, axis=1))
    top = np.max(R[:, :-1], axis=1) if R.shape[1] > 1 else 0.0
    return np.sqrt(top**2 + agg.lam * R[:, -1] ** 2)


def check_product_lmo(polar_cfg=linalg.DEFAULT_POLAR, n_trees=200, n_samples=_N_SAMPLES):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bank = np.random.default_rng(7).standard_normal((n_samples, 6))
    dual_gap = norm_gap = beaten_by = 0.0
    for _ in range(n_trees):
        V, theta_norm = _random_tree(rng)
        n = V.n_slots
        aggs = (MaxAgg(rng.uniform(0.5, 2.0, n)), L2Agg(rng.uniform(0.5, 2.0, n)),
                HybridAgg(rng.uniform(0.3, 3.0)))
        Z = bank[:, :V.size]
        R = _slot_norms(Z, V, theta_norm)
        lin = Z @ V.flat()
        for agg in aggs:
            spec = NormSpec([Spectral(polar_cfg)] * len(V.matrices) + [theta_norm], agg)
            U = product_lmo(spec, V)
            dual = product_dual(spec, V)
            val = U.inner(V)
            dual_gap = max(dual_gap, abs(-val - dual) / max(1.0, dual))
            u_norm = _agg_norm(_slot_norms(U.flat()[None, :], V, theta_norm), agg)[0]
            norm_gap = max(norm_gap, abs(u_norm - 1.0))
            # every sample scaled onto the unit sphere of the product norm
            best = np.min(lin / _agg_norm(R, agg))
            beaten_by = max(beaten_by, val - best)
    return [
        ("|<-lmo, V> - dual|, relative", dual_gap, 1e-6, "le"),
        ("| ||lmo|| - 1 |", norm_gap, 1e-6, "le"),
        ("largest margin by which a sampled unit direction beats the LMO", beaten_by, 1e-3, "le"),
        ("runtime", time.perf_counter() - t0, 60.0, "time"),
    ]


# ----------------------------------------------------- 6. Momo optimality

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def golden_min(f, a, b, iters=90):
    """Minimize a unimodal scalar function on [a, b]; returns (x, f(x))."""
    c, d = b - _GOLD * (b - a), a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _angle_min(m, r, n_grid=720):
    """min over the circle of radius r of <m, u>, by grid plus golden refinement."""
    if r == 0.0:
        return 0.0, 0.0
    phi = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
    vals = r * (m[0] * np.cos(phi) + m[1] * np.sin(phi))
    i = int(np.argmin(vals))
    step = 2 * np.pi / n_grid
    return golden_min(lambda p: r * (m[0] * math.cos(p) + m[1] * math.sin(p)),
                      phi[i] - step, phi[i] + step, iters=60)


def _momo_instance(rng):
    m = rng.standard_normal(2) * 10 ** rng.uniform(-1, 1)
    F = rng.uniform(0.0, 3.0)
    f_star = F - rng.uniform(-0.5, 2.0)
    eta = 10 ** rng.uniform(-2, 0.5)
    return m, F, f_star, eta


def _closed_step(m, F, f_star, eta, regularized):
    st = OptState(momentum=ParamTree([], m), model_estimate=F)
    W = ParamTree([], np.zeros(2))
    spec = NormSpec([Euclid()], MaxAgg())
    fn = engine.momo_rsd_step if regularized else engine.momo_csd_step
    fn(W, st, spec, eta, f_star)
    return W.base


def _csd_oracle(m, F, f_star, eta, n_grid=1000):
    """Grid over the eta-ball (n_grid^2 points) refined by golden sections."""
    r = np.linspace(0.0, eta, n_grid)
    phi = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
    lin = np.outer(r, m[0] * np.cos(phi) + m[1] * np.sin(phi))
    obj = np.maximum(F + lin, f_star)
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    best = float(obj[i, j])
    rb = r[i]
    p_best, _ = _angle_min(m, max(rb, eta * 1e-3))
    u = np.array([math.cos(p_best), math.sin(p_best)])
    _, val = golden_min(lambda s: max(F + s * (m @ u), f_star), 0.0, eta)
    val = min(val, best, max(F + eta * (m @ u), f_star))

    def at_radius(s):
        return max(F + _angle_min(m, s)[1], f_star)

    # smallest radius that already attains the minimum
    if at_radius(0.0) <= val + 1e-12:
        return val, 0.0
    lo, hi = 0.0, eta
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if at_radius(mid) <= val + 1e-12:
            hi = mid
        else:
            lo = mid
    return val, hi


def _rsd_oracle(m, F, f_star, eta):
    def at_radius(s):
        return max(F + _angle_min(m, s)[1], f_star) + s * s / (2 * eta)

    hi = 2 * eta * float(np.linalg.norm(m)) + math.sqrt(2 * eta * max(F - f_star, 0.0)) + 1.0
    _, val = golden_min(at_radius, 0.0, hi, iters=120)
    return min(val, at_radius(0.0))


def check_momo(polar_cfg=None, n_instances=100):
    rng = np.random.default_rng(41)
    csd_gap = rsd_gap = dist_excess = 0.0
    for _ in range(n_instances):
        m, F, f_star, eta = _momo_instance(rng)
        d = _closed_step(m, F, f_star, eta, regularized=False)
        val, r_min = _csd_oracle(m, F, f_star, eta)
        closed = max(F + m @ d, f_star)
        csd_gap = max(csd_gap, abs(closed - val))
        dist_excess = max(dist_excess, float(np.linalg.norm(d)) - r_min)

        d = _closed_step(m, F, f_star, eta, regularized=True)
        closed = max(F + m @ d, f_star) + d @ d / (2 * eta)
        rsd_gap = max(rsd_gap, abs(closed - _rsd_oracle(m, F, f_star, eta)))
    return [
        ("constrained Momo: |objective(closed) - oracle min|", csd_gap, 1e-6, "le"),
        ("constrained Momo: distance beyond the nearest minimizer", dist_excess, 1e-6, "le"),
        ("regularized Momo: |objective(closed) - oracle min|", rsd_gap, 1e-6, "le"),
    ]


# -------------------------------------------------------- 7. polar quality


def random_matrix(rng, max_dim=16, max_cond=100.0):
    """Matrix with known singular values; condition number at most ``max_cond``."""
    m, n = rng.integers(1, max_dim + 1, size=2)
    k = min(m, n)
    U, _ = np.linalg.qr(rng.standard_normal((m, k)))
    V, _ = np.linalg.qr(rng.standard_normal((n, k)))
    cond = 10 ** rng.uniform(0, math.log10(max_cond))
    s = np.exp(rng.uniform(0, math.log(cond), k))
    s[0], s[-1] = 1.0, cond
    return 10 ** rng.uniform(-3, 3) * (U * s) @ V.T


def check_polar(polar_cfg=linalg.DEFAULT_POLAR, n_mats=500):
    rng = np.random.default_rng(77)
    ortho = align = nuc = 0.0
    for _ in range(n_mats):
        M = random_matrix(rng)
        U, S, V = linalg.svd_oracle(M)
        try:
            P = linalg.polar(M, polar_cfg)
            nn = linalg.nuclear_norm(M, polar_cfg)
        except ArithmeticError:
            return [("polar iteration finished with finite values", 0, 1, "ge")]
        # the smaller Gram is the identity; the larger one is only a projection
        G = P.T @ P if P.shape[0] >= P.shape[1] else P @ P.T
        ortho = max(ortho, float(np.linalg.norm(G - np.eye(G.shape[0]))))
        align = max(align, float(np.linalg.norm(P - U @ V.T)))
        nuc = max(nuc, abs(nn - S.sum()) / S.sum())
    return [
        ("||P^T P - I||_F (orthogonality)", ortho, 1e-3, "le"),
        ("||P - U V^T||_F against the Jacobi SVD", align, 1e-3, "le"),
        ("nuclear norm relative error", nuc, 1e-5, "le"),
    ]


# -------------------------------------------------- 8. stale dual norms


def _final_loss(cfg):
    res = train(cfg)
    return res.summary["final_train_loss"], res


def check_stale(polar_cfg=linalg.DEFAULT_POLAR, steps=500):
    parts, runs = [], []
    for name in ("muonmax", "muonmax_momo"):
        lr = TUNED_LR[name]
        base = RunConfig(steps=steps, polar_iterations=polar_cfg.iterations,
                         variant=preset(name, eta_m=lr, eta_b=lr, beta=0.95))
        exact, r1 = _final_loss(base)
        stale, r2 = _final_loss(replace(base, variant=replace(base.variant, stale=True)))
        runs += [r1, r2]
        diff = abs(stale - exact) if exact is not None and stale is not None else math.inf
        parts.append((f"{name}: |final loss stale - exact| (exact {exact:.5g})"
                      if exact is not None else f"{name}: |final loss stale - exact|", diff, 0.01, "le"))

    # constant gradients: cached norms equal fresh ones from the second step on
    rng = np.random.default_rng(5)
    G = ParamTree([rng.standard_normal((5, 4)), rng.standard_normal((3, 5))], rng.standard_normal(6))
    W0 = ParamTree([rng.standard_normal((5, 4)), rng.standard_normal((3, 5))], rng.standard_normal(6))
    worst = 0.0
    for name in ("muonmax", "muonmax_momo"):
        cfg = preset(name, eta_m=0.01, eta_b=0.01, f_star=-10.0)
        A, B = SteepestDescent(cfg, polar_cfg), SteepestDescent(replace(cfg, stale=True), polar_cfg)
        Wa, Wb = W0.copy(), W0.copy()
        for _ in range(50):
            A.step(Wa, 1.0, G)
            B.step(Wb, 1.0, G)
            worst = max(worst, float(np.max(np.abs(Wa.flat() - Wb.flat()))))
    parts.append(("constant gradients: max |W_stale - W_exact|", worst, 1e-12, "le"))
    return parts, runs


# --------------------------------------------------- 9. gradient checks


def check_gradients(polar_cfg=None):
    worst, n = 0.0, 0
    for act in ("tanh", "relu"):
        for loss in ("mse", "softmax_xent"):
            for gain in (False, True):
                dims = (5, 7, 6, 3)
                model = MLP(ModelSpec(dims, activation=act, loss=loss, seed=n, input_gain=gain))
                kind = "teacher_net" if loss == "mse" else "gaussian_blobs"
                batch = make_dataset(DatasetSpec(kind=kind, size=12, noise=0.1, seed=n,
                                                 n_features=5, n_outputs=3))[0]
                params = model.init_params()
                params.base += 0.1 * np.random.default_rng(n).standard_normal(params.base.size)
                worst = max(worst, finite_diff_check(model, params, batch, n_coords=200))
                n += 1
    return [(f"max relative finite-difference error over {n} models", worst, 1e-4, "le")]


# ------------------------------------------------------- 10. robustness


def robustness_sweeps(steps=2000, seeds=(0, 1, 2), rho_grid=RHO_GRID, polar_cfg=linalg.DEFAULT_POLAR):
    sweeps = []
    for name in ROBUSTNESS_METHODS:
        lr = TUNED_LR[name]
        base = RunConfig(steps=steps, polar_iterations=polar_cfg.iterations,
                         variant=preset(name, eta_m=lr, eta_b=lr))
        sweeps.append(SweepConfig(base, tuple(rho_grid), tuple(seeds)))
    return sweeps


def check_robustness(polar_cfg=linalg.DEFAULT_POLAR, steps=2000, seeds=(0, 1, 2), workers=1):
    t0 = time.perf_counter()
    res = run_sweep(robustness_sweeps(steps, seeds, polar_cfg=polar_cfg), workers=workers)
    by_seed = res.robustness_by_seed
    parts = []
    for momo in ("muonmax_momo", "muon_adam_momo"):
        for other in ("muon_adam", "scion"):
            wins = sum(by_seed[momo][s] >= by_seed[other][s] for s in seeds)
            parts.append((
                f"seeds where {momo} ({res.robustness[momo]:.3f}) is at least as robust as "
                f"{other} ({res.robustness[other]:.3f})",
                wins, len(seeds) // 2 + 1, "ge"))
    # context only: the same statistic at a looser threshold
    _, loose = robustness(res.records, tau=1.0)
    for v in ROBUSTNESS_METHODS:
        parts.append((f"{v}: share of rho within 100% of its best (not judged)",
                      float(np.mean(list(loose[v].values()))), 1.0, "info"))
    parts.append(("runtime", time.perf_counter() - t0, 600.0, "time"))
    return parts, res


# ---------------------------------------------------- 11. Momo safeguard


def step_bound_violation(rows, variant):
    """Largest excess of a logged step coefficient over its scheduled learning rate."""
    worst = 0.0
    for r in rows:
        worst = max(worst,
                    r["eff_step_matrix"] - variant.eta_m * r["lr_mult"] * (1 + 1e-12),
                    r["eff_step_base"] - variant.eta_b * r["lr_mult"] * (1 + 1e-12))
    return worst


def check_safeguard(polar_cfg=linalg.DEFAULT_POLAR, steps=300, extra_runs=(), extra_records=()):
    worst, clamped_hot = 0.0, []
    for name in ("muon_adam_momo", "muonmax_momo"):
        lr = TUNED_LR[name]
        for scale in (1.0, 100.0):
            cfg = RunConfig(steps=steps, polar_iterations=polar_cfg.iterations,
                            variant=preset(name, eta_m=lr * scale, eta_b=lr * scale))
            res = train(cfg)
            worst = max(worst, step_bound_violation(res.rows, cfg.variant))
            if scale == 100.0:
                clamped_hot.append(sum(r["clamp_active"] for r in res.rows))
    for res in extra_runs:
        worst = max(worst, step_bound_violation(res.rows, res.config.variant))
    for rec in extra_records:
        worst = max(worst, rec.get("max_step_ratio", 0.0) - (1 + 1e-12))
    return [
        ("max (effective step - scheduled eta) over all logged steps", max(worst, 0.0), 0.0, "le"),
        ("fewest clamped steps among runs started at 100x the tuned eta", min(clamped_hot), 1, "ge"),
    ]


# ------------------------------------------------------------ driver

CRITERIA = (
    ("adam_equivalence", "fast"),
    ("muonadam_equivalence", "fast"),
    ("scion_polargrad_recovery", "fast"),
    ("muonmax_momo_closed_form", "fast"),
    ("product_lmo_brute_force", "fast"),
    ("momo_optimality", "fast"),
    ("polar_quality", "fast"),
    ("stale_approximation", "slow"),
    ("gradient_checks", "fast"),
    ("robustness_sweep", "slow"),
    ("momo_safeguard", "fast"),
)


def evaluate(parts, tol_scale=1.0):
    """Judge ``parts``; returns (passed, list of part dicts)."""
    out = []
    for what, measured, tol, kind in parts:
        if kind == "info":
            ok = True
        elif kind == "time":
            ok = measured <= tol
        elif kind == "ge":
            ok = measured >= tol
        else:
            tol = tol * tol_scale
            ok = bool(np.isfinite(measured)) and measured <= tol
        out.append({"what": what, "measured": float(measured), "tolerance": float(tol),
                    "kind": kind, "passed": bool(ok)})
    return all(p["passed"] for p in out), out


def _record(name, parts, tol_scale, seconds, error=None):
    if error is not None:
        return {"name": name, "tolerance": None, "measured": None, "passed": False,
                "seconds": seconds, "error": error, "parts": []}
    passed, detail = evaluate(parts, tol_scale)
    # headline: the first failing part, else the first part
    head = next((p for p in detail if not p["passed"]), detail[0])
    return {"name": name, "tolerance": head["tolerance"], "measured": head["measured"],
            "passed": passed, "seconds": seconds, "error": None, "parts": detail}


def run_verify(tol_scale=1.0, polar_cfg=None, quick=False, only=None, workers=1):
    """Run every criterion and return one record per criterion.

    ``polar_cfg`` swaps the polar iteration everywhere (fault injection).
    ``quick`` skips the training-heavy checks. Exceptions become failed records.
    """
    polar_cfg = polar_cfg or linalg.DEFAULT_POLAR
    names = [n for n, speed in CRITERIA if not (quick and speed == "slow")]
    if only:
        unknown = set(only) - {n for n, _ in CRITERIA}
        if unknown:
            raise ValueError(f"unknown criteria: {sorted(unknown)}")
        names = [n for n in names if n in only]
    simple = {
        "adam_equivalence": check_adam,
        "muonadam_equivalence": check_muonadam,
        "scion_polargrad_recovery": check_scion_polargrad,
        "muonmax_momo_closed_form": check_muonmax_momo,
        "product_lmo_brute_force": check_product_lmo,
        "momo_optimality": check_momo,
        "polar_quality": check_polar,
        "gradient_checks": check_gradients,
    }
    records, stale_runs, sweep_records = [], [], []
    for name in names:
        t0 = time.perf_counter()
        try:
            if name in simple:
                parts = simple[name](polar_cfg)
            elif name == "stale_approximation":
                parts, stale_runs = check_stale(polar_cfg)
            elif name == "robustness_sweep":
                parts, res = check_robustness(polar_cfg, workers=workers)
                sweep_records = res.records
            else:
                parts = check_safeguard(polar_cfg, extra_runs=stale_runs, extra_records=sweep_records)
            records.append(_record(name, parts, tol_scale, time.perf_counter() - t0))
        except Exception as e:  # a crashing check is a failing check
            records.append(_record(name, None, tol_scale, time.perf_counter() - t0,
                                   error=f"{type(e).__name__}: {e}"))
    return records


def format_records(records):
    lines = []
    for r in records:
        flag = "PASS" if r["passed"] else "FAIL"
        if r["error"]:
            lines.append(f"{flag}  {r['name']:<28} error: {r['error']}")
            continue
        lines.append(f"{flag}  {r['name']:<28} measured {r['measured']:.3g} "
                     f"(tol {r['tolerance']:.3g}, {r['seconds']:.1f}s)")
        for p in r["parts"]:
            mark = "ok " if p["passed"] else "BAD"
            op = {"ge": ">=", "info": "| ref"}.get(p["kind"], "<=")
            lines.append(f"        {mark} {p['what']}: {p['measured']:.3g} {op} {p['tolerance']:.3g}")
    n_fail = sum(not r["passed"] for r in records)
    lines.append(f"{len(records) - n_fail}/{len(records)} criteria passed")
    return "\n".join(lines)
