"""Estimators of psi = E(Y0 | A=1) and the treatment effect on the treated."""
from ._base import (EstimationResult, MomentFunctionChoice, dr_q, ett, extended_propensity,
                    moment_ratio_binary)
from .dr import estimate_dr, fit_dr
from .efficient import estimate_efficient, one_step_update
from .ipw import estimate_ipw, ipw_system
from .outcome import estimate_or
from .sandwich import sandwich

ESTIMATORS = {"ipw": estimate_ipw, "or": estimate_or, "dr": estimate_dr,
              "eff": estimate_efficient}

__all__ = ["EstimationResult", "MomentFunctionChoice", "dr_q", "ett", "extended_propensity",
           "moment_ratio_binary", "estimate_dr", "fit_dr", "estimate_efficient",
           "one_step_update", "estimate_ipw", "ipw_system", "estimate_or", "sandwich",
           "ESTIMATORS"]
