# %% [markdown]
# # One step, many norms
#
# Every optimizer here is "move against the gradient, as far as a unit ball
# allows". What changes is the ball. This walk-through computes the update
# direction (the LMO) for a few norms on one small parameter tree and checks
# the pairing <-LMO(v), v> = ||v||_* each time.

# %%
import numpy as np

from normforge import (
    Euclid, HybridAgg, L2Agg, MaxAbs, MaxAgg, NormSpec, ParamTree, Spectral,
    atomic_dual, atomic_lmo, polar, product_dual, product_lmo,
)

rng = np.random.default_rng(0)
G = rng.standard_normal((4, 3))

# %% [markdown]
# Sign descent, normalized gradient descent and Muon's orthogonalized step are
# the LMOs of the max-abs, Euclidean and spectral norms.

# %%
for norm in (MaxAbs(), Euclid(), Spectral()):
    u = atomic_lmo(norm, G)
    print(f"{type(norm).__name__:>8}: dual {atomic_dual(norm, G):8.4f}   <-u, g> {-np.sum(u * G):8.4f}")

print("spectral LMO is -polar(G):", np.allclose(atomic_lmo(Spectral(), G), -polar(G), atol=1e-8))

# %% [markdown]
# ## Product norms
#
# A network is a tuple of slots: weight matrices plus a flat vector for
# biases and gains. Aggregating per-slot norms with an outer max or l2 (or the
# hybrid of both) gives a norm on the whole tuple. The LMO of the product
# scales each slot's own LMO by a weight set by the slot duals.

# %%
V = ParamTree([G, rng.standard_normal((2, 4))], rng.standard_normal(5))
slots = [Spectral(), Spectral(), Euclid()]
for agg in (MaxAgg(), L2Agg(), HybridAgg(1.0)):
    spec = NormSpec(slots, agg)
    U = product_lmo(spec, V)
    scales = [np.linalg.norm(m) for m in U.matrices] + [np.linalg.norm(U.base)]
    print(f"{type(agg).__name__:>9}: dual {product_dual(spec, V):7.4f}  "
          f"pairing {-U.inner(V):7.4f}  slot sizes {np.round(scales, 3)}")

# %% [markdown]
# With a max aggregator every matrix slot gets a full orthogonal step, which
# is Muon's behaviour; the l2 aggregator spends the step budget in proportion
# to each slot's dual, which is what a regularized (PolarGrad/MuonMax-style)
# step does.
