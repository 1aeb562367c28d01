"""Target-PCA: factor estimation and imputation for a partially observed
target panel, borrowing strength from a weighted auxiliary panel."""

__version__ = "0.1.0"

from .benchmarks import BenchmarkId, se_pca, xp_y, xp_z1
from .errors import (IdentificationError, InfeasibleError, NumericalError, SingularGramError,
                     TpcaError)
from .estimator import FactorFit, align_rotation, fit, impute
from .moments import ModelMoments, ObsStats, obs_stats, pairwise_second_moment, plugin_moments
from .panel import (Panel, WeightedConcat, anchor_forward_fill, concat_weighted, delta_rate,
                    stack_auxiliary, standardize, unstandardize)
from .patterns import MaskSpec, apply_mask, generate_mask
from .simlab import DgpSpec, generate, relative_mse, run_table
from .variance import (GammaSelection, VarianceReport, confidence_intervals, corollary_variances,
                       select_gamma, weak_factor_obs_variance)

__all__ = [
    "BenchmarkId", "DgpSpec", "FactorFit", "GammaSelection", "IdentificationError",
    "InfeasibleError", "MaskSpec", "ModelMoments", "NumericalError", "ObsStats", "Panel",
    "SingularGramError", "TpcaError", "VarianceReport", "WeightedConcat", "align_rotation",
    "anchor_forward_fill", "apply_mask", "concat_weighted", "confidence_intervals",
    "corollary_variances", "delta_rate", "fit", "generate", "generate_mask", "impute",
    "obs_stats", "pairwise_second_moment", "plugin_moments", "relative_mse", "run_table",
    "se_pca", "select_gamma", "stack_auxiliary", "standardize", "unstandardize",
    "weak_factor_obs_variance", "xp_y", "xp_z1",
]
