# %% [markdown]
# # Truncating the model: when a too-large learning rate stops mattering
#
# A steepest-descent step trusts the linear model of the loss. If we know a
# lower bound F* on the loss, we can clip that model at F*; the resulting step
# is min(eta, gap / dual) in constrained form and min(eta, gap / dual^2) in
# regularized form. Below, plain MuonMax and its truncated version are run at
# learning rates that grow by a factor of 10.

# %%
import numpy as np

from normforge import RunConfig, preset, train

rows = []
for eta in (0.01, 0.1, 1.0, 10.0):
    for name in ("muonmax", "muonmax_momo"):
        cfg = RunConfig(steps=300, variant=preset(name, eta_m=eta, eta_b=eta))
        res = train(cfg)
        s = res.summary
        rows.append((name, eta, s["status"], s["final_train_loss"], s["clamp_rate"]))

print(f"{'variant':<14} {'eta':>6} {'status':>9} {'final loss':>11} {'clamped':>8}")
for name, eta, status, loss, clamp in rows:
    loss = f"{loss:.4f}" if loss is not None else "-"
    print(f"{name:<14} {eta:>6g} {status:>9} {loss:>11} {clamp:>8.2f}")

# %% [markdown]
# The truncated variant clamps more often as eta grows, and its effective
# step never exceeds the scheduled one. Let's look at one run step by step.

# %%
cfg = RunConfig(steps=300, variant=preset("muonmax_momo", eta_m=10.0, eta_b=10.0))
res = train(cfg)
eff = np.array([r["eff_step_matrix"] for r in res.rows])
sched = np.array([r["lr_mult"] for r in res.rows]) * cfg.variant.eta_m
print("max effective / scheduled:", float(np.max(eff / sched)))
print("first 10 effective steps:", np.round(eff[:10], 4))
print("model estimate at the end:", res.rows[-1]["model_estimate"])
