"""Steepest descent under product norms: Muon-style optimizers as points of one
design grid, with the linear algebra, toy models and checks to go with them."""

from .errors import (
    ConfigError, DegenerateInputError, DimensionError, NormforgeError,
    NumericInstabilityError, OracleScopeError,
)
from .linalg import DEFAULT_POLAR, PolarConfig, frob_inner, nuclear_norm, polar, spectral_norm, svd_oracle
from .tree import ParamTree
from .norms import (
    Euclid, HybridAgg, L2Agg, MaxAbs, MaxAgg, NormSpec, Scaled, Spectral,
    ada2_norm, ada_inf_norm, atomic_dual, atomic_lmo, product_dual, product_lmo,
    product_lmo_dual, product_norm,
)
from .engine import OptState, StepReport, csd_step, momo_csd_step, momo_rsd_step, rsd_step
from .presets import (
    PRESETS, ScheduleConfig, SteepestDescent, VariantConfig, build_variant, lr_multiplier,
    lr_schedule, preset, variant_grid,
)
from .models import MLP, Batch, DatasetSpec, ModelSpec, finite_diff_check, make_dataset
from .experiment import (
    RunConfig, SweepConfig, __version__, parse_config, run_sweep, run_training, train,
)
