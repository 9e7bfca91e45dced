"""Config-driven training runs and learning-rate sweeps.

Config files are flat ``key = value`` lines. Keys are dotted
(``variant.eta_m = 0.02``) or grouped under a ``[section]`` header::

    [variant]
    preset = muonmax_momo
    eta_m = 0.003

    [run]
    steps = 500

``#`` starts a comment. Every key is optional; see ``KEYS`` for the table.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field, replace
import hashlib
import json
import math
import os
from pathlib import Path
import time

import numpy as np

from . import linalg
from .errors import ConfigError, DegenerateInputError, NumericInstabilityError
from .models import MLP, DatasetSpec, ModelSpec, make_dataset
from .presets import ScheduleConfig, VariantConfig, build_variant, lr_multiplier, preset
from .tree import ParamTree

__version__ = "0.1.0"

LOG_COLUMNS = (
    "step", "train_loss", "lr_mult", "eff_step_matrix", "eff_step_base",
    "dual_total", "model_estimate", "clamp_active",
)
SWEEP_COLUMNS = ("variant", "rho", "seed", "final_loss", "status")
AGG_COLUMNS = ("variant", "rho", "mean_loss", "std_loss", "n_ok", "n_runs")
TAU_ROB = 0.10
SEED_ENV = "NORMFORGE_SEED"


def version_hash(version=__version__):
    """Git blob id of the version string."""
    data = version.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class RunConfig:
    variant: VariantConfig = field(default_factory=lambda: preset("muon_adam"))
    model: ModelSpec = field(default_factory=lambda: ModelSpec((8, 32, 32, 4)))
    data: DatasetSpec = field(default_factory=lambda: DatasetSpec(size=512, noise=0.05))
    steps: int = 200
    batch_size: int = 32
    log_every: int = 1
    out_dir: str = None
    seed: int = 0
    warmup_frac: float = 0.05
    stable_frac: float = 0.50
    final_frac_of_peak: float = 0.10
    polar_iterations: int = linalg.DEFAULT_POLAR.iterations

    def __post_init__(self):
        for key in ("steps", "batch_size", "log_every", "polar_iterations"):
            low = 0 if key == "steps" else 1
            if getattr(self, key) < low:
                raise ConfigError(f"{key} must be >= {low}", key=key)
        if (self.model.layer_dims[0], self.model.layer_dims[-1]) != (self.data.n_features, self.data.n_outputs):
            raise ConfigError("model input/output sizes do not match the data", key="model.layer_dims")
        self.schedule  # validates the schedule fractions

    @property
    def schedule(self):
        return ScheduleConfig(self.steps, self.warmup_frac, self.stable_frac, self.final_frac_of_peak)

    @property
    def polar_cfg(self):
        return replace(linalg.DEFAULT_POLAR, iterations=self.polar_iterations)


@dataclass(frozen=True)
class SweepConfig:
    base: RunConfig
    rho_grid: tuple = (0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)
    seeds: tuple = (0,)
    tau_rob: float = TAU_ROB

    def __post_init__(self):
        if len(self.rho_grid) == 0:
            raise ConfigError("rho_grid is empty", key="rho")
        if any(not (r > 0 and math.isfinite(r)) for r in self.rho_grid):
            raise ConfigError("rho values must be positive", key="rho")
        if len(self.seeds) == 0:
            raise ConfigError("seeds is empty", key="seeds")
        if self.tau_rob < 0:
            raise ConfigError("tau_rob must be >= 0", key="tau_rob")


def _bool(s):
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    s = s.strip("[]() ")
    return tuple(int(p) for p in s.split(",") if p.strip())


def _opt_float(s):
    return None if s.lower() in ("none", "null") else float(s)


def _opt_str(s):
    return None if s.lower() in ("none", "null") else s


# key -> (parser, group, field name)
KEYS = {
    "variant.preset": (str, "preset", None),
    "variant.sd_type": (str, "variant", "sd_type"),
    "variant.product_norm": (str, "variant", "product_norm"),
    "variant.backup_norm": (str, "variant", "backup_norm"),
    "variant.truncation": (_bool, "variant", "truncation"),
    "variant.stale": (_bool, "variant", "stale"),
    "variant.eta_m": (float, "variant", "eta_m"),
    "variant.eta_b": (float, "variant", "eta_b"),
    "variant.beta": (float, "variant", "beta"),
    "variant.beta1": (_opt_float, "variant", "beta1"),
    "variant.beta2": (float, "variant", "beta2"),
    "variant.epsilon": (float, "variant", "epsilon"),
    "variant.f_star": (float, "variant", "f_star"),
    "schedule.warmup_frac": (float, "run", "warmup_frac"),
    "schedule.stable_frac": (float, "run", "stable_frac"),
    "schedule.final_frac_of_peak": (float, "run", "final_frac_of_peak"),
    "model.layer_dims": (_ints, "model", "layer_dims"),
    "model.activation": (str, "model", "activation"),
    "model.loss": (str, "model", "loss"),
    "model.seed": (int, "model", "seed"),
    "model.input_gain": (_bool, "model", "input_gain"),
    "data.kind": (str, "data", "kind"),
    "data.size": (int, "data", "size"),
    "data.noise": (float, "data", "noise"),
    "data.seed": (int, "data", "seed"),
    "data.separation": (float, "data", "separation"),
    "data.teacher_hidden": (int, "data", "teacher_hidden"),
    "run.steps": (int, "run", "steps"),
    "run.batch_size": (int, "run", "batch_size"),
    "run.log_every": (int, "run", "log_every"),
    "run.out_dir": (_opt_str, "run", "out_dir"),
    "run.seed": (int, "run", "seed"),
    "polar.iterations": (int, "run", "polar_iterations"),
}


def _unquote(s):
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def _strip_comment(line):
    out, quote = [], None
    for ch in line:
        if quote:
            quote = None if ch == quote else quote
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out).strip()


def parse_assignments(text):
    """``{dotted_key: (raw_value, line_no)}``; syntax, unknown and duplicate keys raise."""
    seen = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"malformed section header {line!r}", line=no)
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=no)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=no)
        full = f"{section}.{key}" if section else key
        if full not in KEYS:
            raise ConfigError(f"unknown key {full!r}", key=full, line=no)
        if full in seen:
            raise ConfigError(
                f"duplicate key {full!r} on lines {seen[full][1]} and {no}", key=full, line=no
            )
        if not value:
            raise ConfigError(f"missing value for key {full!r}", key=full, line=no)
        seen[full] = (_unquote(value), no)
    return seen


def _build(groups, where):
    """Assemble the dataclasses; ``where`` maps group field -> (key, line) for errors."""

    def attempt(group, fn):
        try:
            return fn()
        except ConfigError as e:
            key = f"{group}.{e.key}" if e.key and "." not in e.key else (e.key or group)
            k, line = where.get(key, (key, None))
            raise ConfigError(e.message, key=k, line=line) from None

    v = groups["variant"]
    if "preset" in groups:
        variant = attempt("variant", lambda: preset(groups["preset"], **v))
    else:
        variant = attempt("variant", lambda: VariantConfig(**v))
    model = attempt("model", lambda: ModelSpec(**{"layer_dims": (8, 32, 32, 4), **groups["model"]}))
    data_kw = {"size": 512, "noise": 0.05, **groups["data"]}
    data_kw["n_features"] = model.layer_dims[0]
    data_kw["n_outputs"] = model.layer_dims[-1]
    data = attempt("data", lambda: DatasetSpec(**data_kw))
    return attempt("run", lambda: RunConfig(variant=variant, model=model, data=data, **groups["run"]))


def parse_config(text):
    """Parse config text into a validated :class:`RunConfig`."""
    assigned = parse_assignments(text)
    groups = {"variant": {}, "model": {}, "data": {}, "run": {}}
    where = {}
    for key, (raw, no) in assigned.items():
        parser, group, name = KEYS[key]
        try:
            value = parser(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}", key=key, line=no) from None
        if group == "preset":
            groups["preset"] = value
            where["variant.preset"] = (key, no)
            continue
        groups[group][name] = value
        where[f"{group}.{name}"] = (key, no)
    return _build(groups, where)


def load_config(path):
    return parse_config(Path(path).read_text())


def config_items(cfg):
    """Flat ``{dotted_key: value}`` echo of a RunConfig, in ``KEYS`` order."""
    out = {}
    for key, (_, group, name) in KEYS.items():
        if group == "preset":
            continue
        src = {"variant": cfg.variant, "model": cfg.model, "data": cfg.data, "run": cfg}[group]
        val = getattr(src, name)
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


def resolve_seed(config_seed, flag=None, env=None):
    """Seed precedence: command-line flag, then $NORMFORGE_SEED, then the config."""
    if flag is not None:
        return int(flag)
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV, "").strip()
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer", key=SEED_ENV) from None
    return int(config_seed)


# ---------------------------------------------------------------- training


class AdamOnly:
    """Plain Adam on every parameter; a baseline outside the steepest-descent grid.

    Matrices use ``eta_m`` and the base vector ``eta_b``.
    """

    name = "adam"

    def __init__(self, cfg):
        self.cfg = cfg
        self.m = self.v = None

    def step(self, W, loss, grads, lr_mult=1.0):
        from .engine import StepReport

        c = self.cfg
        g = grads.flat()
        if self.m is None:
            self.m, self.v = g.copy(), g * g
        else:
            self.m = c.beta * self.m + (1 - c.beta) * g
            self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        n_mat = sum(M.size for M in W.matrices)
        lr = np.full(g.size, c.eta_b * lr_mult)
        lr[:n_mat] = c.eta_m * lr_mult
        W.add_(W.unflatten(-lr * self.m / (np.sqrt(self.v) + c.epsilon)), 1.0)
        return StepReport(c.eta_m * lr_mult, c.eta_b * lr_mult, math.nan, math.nan, False)


def make_optimizer(cfg):
    if cfg.variant is None:
        raise ConfigError("no variant configured", key="variant")
    return build_variant(cfg.variant, cfg.polar_cfg)


@dataclass
class TrainResult:
    summary: dict
    rows: list
    params: ParamTree
    config: RunConfig


def _init_seed(model_seed, run_seed):
    return int(np.random.SeedSequence([model_seed, run_seed]).generate_state(1)[0])


def _fmt(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    return v


def train(cfg, out_dir=None, optimizer=None):
    """Run ``cfg`` and return summary, logged rows and final parameters.

    With ``out_dir`` the rows stream to ``log.csv`` as they are produced and
    ``summary.json`` is written at the end, also when the run diverges.
    """
    t0 = time.perf_counter()
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    model = MLP(cfg.model)
    data = make_dataset(cfg.data)[0]
    W = model.init_params(_init_seed(cfg.model.seed, cfg.seed))
    opt = optimizer if optimizer is not None else make_optimizer(cfg)
    sched = cfg.schedule
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(data)
    bs = min(cfg.batch_size, n)

    log_file = writer = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_file = open(Path(out_dir) / "log.csv", "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)

    rows, losses = [], []
    status, error = "ok", None
    clamp_steps = 0
    ratio_m = ratio_b = 0.0
    order, pos = rng.permutation(n), 0
    with np.errstate(all="ignore"):
        initial = float(model.loss(W, data))
        try:
            for t in range(cfg.steps):
                if pos + bs > n:
                    order, pos = rng.permutation(n), 0
                batch = data.subset(order[pos:pos + bs])
                pos += bs
                loss, grads = model.loss_and_grad(W, batch)
                if not (math.isfinite(loss) and grads.is_finite()):
                    status, error = "diverged", f"non-finite loss at step {t}"
                    break
                mult = lr_multiplier(t + 1, sched)
                rep = opt.step(W, loss, grads, mult)
                losses.append(float(loss))
                clamp_steps += bool(rep.clamp_active)
                ratio_m = max(ratio_m, rep.effective_step_matrix / (cfg.variant.eta_m * mult))
                ratio_b = max(ratio_b, rep.effective_step_base / (cfg.variant.eta_b * mult))
                if t % cfg.log_every == 0 or t == cfg.steps - 1:
                    row = dict(zip(LOG_COLUMNS, (
                        t, float(loss), mult, float(rep.effective_step_matrix),
                        float(rep.effective_step_base), float(rep.dual_total),
                        float(rep.model_estimate), bool(rep.clamp_active),
                    )))
                    rows.append(row)
                    if writer:
                        writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
                if not W.is_finite():
                    status, error = "diverged", f"non-finite parameters after step {t}"
                    break
        except (NumericInstabilityError, DegenerateInputError, FloatingPointError, OverflowError) as e:
            status, error = "diverged", f"{type(e).__name__}: {e}"
        finally:
            if log_file:
                log_file.close()

        done = len(losses)
        final = float(model.loss(W, data)) if status == "ok" else math.nan
        if status == "ok" and not math.isfinite(final):
            status, error = "diverged", "non-finite final loss"
    tail = losses[-max(1, done // 10):] if done else []

    summary = {
        "status": status,
        "error": error,
        "variant": getattr(opt, "name", cfg.variant.name),
        "steps": cfg.steps,
        "steps_completed": done,
        "seed": cfg.seed,
        "initial_loss": initial,
        "final_train_loss": final,
        "mean_last_10pct_loss": float(np.mean(tail)) if tail else math.nan,
        "wall_time_s": time.perf_counter() - t0,
        "clamp_rate": clamp_steps / done if done else 0.0,
        "max_step_ratio_matrix": ratio_m,
        "max_step_ratio_base": ratio_b,
        "version": __version__,
        "version_hash": version_hash(),
    }
    summary.update({f"config.{k}": v for k, v in config_items(cfg).items()})
    summary = {k: _jsonable(v) for k, v in summary.items()}
    if out_dir is not None:
        with open(Path(out_dir) / "summary.json", "w") as f:
            json.dump(summary, f, indent=1)
    return TrainResult(summary, rows, W, cfg)


def run_training(cfg, out_dir=None):
    """Run one config; returns the flat summary record."""
    return train(cfg, out_dir).summary


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepResult:
    records: list
    aggregate: list
    robustness: dict
    robustness_by_seed: dict


def _one(args):
    cfg, rho, seed, out_dir = args
    run = replace(cfg, variant=cfg.variant.scaled(rho), seed=seed)
    s = run_training(run, out_dir)
    loss = s["final_train_loss"]
    return {
        "variant": cfg.variant.name,
        "rho": rho,
        "seed": seed,
        "final_loss": loss if loss is not None else math.nan,
        "status": s["status"],
        "clamp_rate": s["clamp_rate"],
        "max_step_ratio": max(s["max_step_ratio_matrix"], s["max_step_ratio_base"]),
    }


def _loss_value(rec):
    return rec["final_loss"] if rec["status"] == "ok" and math.isfinite(rec["final_loss"]) else math.inf


def aggregate_records(records):
    """Per (variant, rho): mean/std of final loss. Any diverged seed makes the mean inf."""
    groups = {}
    for r in records:
        groups.setdefault((r["variant"], float(r["rho"])), []).append(r)
    out = []
    for (variant, rho), recs in groups.items():
        vals = [_loss_value(r) for r in recs]
        ok = [v for v in vals if math.isfinite(v)]
        mean = float(np.mean(vals)) if len(ok) == len(vals) else math.inf
        std = float(np.std(ok)) if ok else math.nan
        out.append({"variant": variant, "rho": rho, "mean_loss": mean, "std_loss": std,
                    "n_ok": len(ok), "n_runs": len(vals)})
    return out


def robustness_fraction(losses, tau=TAU_ROB):
    """Share of entries within ``tau`` (relative) of the smallest finite one."""
    losses = np.asarray(losses, dtype=np.float64)
    finite = losses[np.isfinite(losses)]
    if finite.size == 0:
        return 0.0
    best = finite.min()
    return float(np.mean(losses <= best + tau * abs(best)))


def robustness(records, tau=TAU_ROB):
    """Robustness fraction per variant (on seed means) and per (variant, seed)."""
    agg = aggregate_records(records)
    by_variant = {}
    for a in agg:
        by_variant.setdefault(a["variant"], []).append(a["mean_loss"])
    overall = {v: robustness_fraction(ls, tau) for v, ls in by_variant.items()}
    per_seed = {}
    for r in records:
        per_seed.setdefault(r["variant"], {}).setdefault(r["seed"], []).append(_loss_value(r))
    seeds = {v: {s: robustness_fraction(ls, tau) for s, ls in d.items()} for v, d in per_seed.items()}
    return overall, seeds


def _write_csv(path, columns, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for r in records:
            w.writerow([_fmt(r[c]) for c in columns])


def run_sweep(sweeps, out_dir=None, workers=1):
    """Run every (variant, rho, seed) combination; diverged runs are recorded, not fatal.

    ``sweeps`` is a :class:`SweepConfig` or a list of them sharing an output
    directory. Results do not depend on ``workers``.
    """
    if isinstance(sweeps, SweepConfig):
        sweeps = [sweeps]
    if not sweeps:
        raise ConfigError("nothing to sweep")
    jobs = []
    for sw in sweeps:
        for rho in sw.rho_grid:
            for seed in sw.seeds:
                run_dir = None
                if out_dir is not None:
                    run_dir = str(Path(out_dir) / "runs" / f"{sw.base.variant.name}_rho{rho:g}_seed{seed}")
                jobs.append((sw.base, float(rho), int(seed), run_dir))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_one, jobs))
    else:
        records = [_one(j) for j in jobs]

    tau = sweeps[0].tau_rob
    agg = aggregate_records(records)
    overall, seeds = robustness(records, tau)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_csv(Path(out_dir) / "sweep.csv", SWEEP_COLUMNS, records)
        _write_csv(Path(out_dir) / "sweep_agg.csv", AGG_COLUMNS, agg)
        with open(Path(out_dir) / "sweep_summary.json", "w") as f:
            json.dump({"tau_rob": tau, "robustness": overall,
                       "robustness_by_seed": {v: {str(s): x for s, x in d.items()} for v, d in seeds.items()},
                       "version_hash": version_hash()}, f, indent=1, sort_keys=True)
    return SweepResult(records, agg, overall, seeds)


def read_sweep_csv(path):
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        if tuple(rd.fieldnames or ()) != SWEEP_COLUMNS:
            raise ValueError(f"{path}: not a sweep CSV (columns {rd.fieldnames})")
        return [{"variant": r["variant"], "rho": float(r["rho"]), "seed": int(r["seed"]),
                 "final_loss": float(r["final_loss"]), "status": r["status"]} for r in rd]


def report(in_dir, tau=TAU_ROB):
    """Re-aggregate every ``sweep.csv`` below ``in_dir`` without re-running anything."""
    paths = sorted(Path(in_dir).rglob("sweep.csv"))
    if not paths:
        raise FileNotFoundError(f"no sweep.csv under {in_dir}")
    records = [r for p in paths for r in read_sweep_csv(p)]
    overall, seeds = robustness(records, tau)
    return SweepResult(records, aggregate_records(records), overall, seeds)


def format_report(res):
    lines = [f"{'variant':<28} {'rho':>8} {'mean_loss':>12} {'std':>10} {'ok':>5}"]
    for a in sorted(res.aggregate, key=lambda a: (a["variant"], a["rho"])):
        lines.append(f"{a['variant']:<28} {a['rho']:>8g} {a['mean_loss']:>12.5g} "
                     f"{a['std_loss']:>10.3g} {a['n_ok']:>2}/{a['n_runs']}")
    lines.append("")
    lines.append("robustness (share of rho within tau of the best):")
    for v, frac in sorted(res.robustness.items()):
        per = ", ".join(f"s{s}={x:.2f}" for s, x in sorted(res.robustness_by_seed[v].items()))
        lines.append(f"  {v:<26} {frac:.3f}   [{per}]")
    return "\n".join(lines)
