"""Effect of treatment on the treated with a binary instrument under unmeasured confounding."""
from .core import ModelSpec, ObservedDataset, Term, build_design, validate
from .estimators import (EstimationResult, MomentFunctionChoice, estimate_dr,
                         estimate_efficient, estimate_ipw, estimate_or)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "EstimationResult", "ModelSpec", "MomentFunctionChoice",
           "ObservedDataset", "Term", "build_design", "estimate_dr", "estimate_efficient",
           "estimate_ipw", "estimate_or", "validate", "__version__"]
