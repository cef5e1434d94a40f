"""Score-based estimation and selection for models known up to a normalizing constant.

The generalized Hyvarinen criterion (GIC) is the sample mean of
W = -||grad log p||^2 - 2 lap log p, which never touches the normalizing
constant.  Parameters are estimated by maximizing GIC and nested candidates
are compared with the multiplicative criteria MIC1 and MIC2.
"""
from .core import (Dataset, EvaluationError, GicValue, ModelError, ScoreModel, WindowError, cgic,
                   criterion_value, fd_score_check, gic, mc_fisher_divergence, w_objective)
from .estimation import (AdamConfig, BfgsConfig, FitConfig, FitResult, default_init, fit, mgice_adam,
                         mgice_bfgs)
from .models import (FAMILIES, ArBakerModel, ArBakerParams, BakerModel, BakerParams, GaussianLocationModel,
                     PolyBakerModel, PolyBakerParams, VonMisesModel, VonMisesParams, build_family)
from .selection import (SelectionScan, aic_bic_gaussian, apply_criterion, bias_estimate, fit_candidates, gicc,
                        mic, scan_nested)
from .simulation import (RngStream, sample_baker, sample_vonmises2, simulate_ar_baker, simulate_poly_baker,
                         write_csv)

__version__ = "0.1.0"

__all__ = [
    "AdamConfig", "ArBakerModel", "ArBakerParams", "BakerModel", "BakerParams", "BfgsConfig", "Dataset",
    "EvaluationError", "FAMILIES", "FitConfig", "FitResult", "GaussianLocationModel", "GicValue", "ModelError",
    "PolyBakerModel", "PolyBakerParams", "RngStream", "ScoreModel", "SelectionScan", "VonMisesModel",
    "VonMisesParams", "WindowError", "aic_bic_gaussian", "apply_criterion", "bias_estimate", "build_family",
    "cgic", "criterion_value", "default_init", "fd_score_check", "fit", "fit_candidates", "gic", "gicc",
    "mc_fisher_divergence", "mgice_adam", "mgice_bfgs", "mic", "sample_baker", "sample_vonmises2",
    "scan_nested", "simulate_ar_baker", "simulate_poly_baker", "w_objective", "write_csv",
]
