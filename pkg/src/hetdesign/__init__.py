"""Optimal approximate designs for treatment comparisons under covariates with
treatment-dependent error variances, plus sparsification and rounding."""
from .criteria import (CriterionSpec, criterion_value, efficiency, info_matrix_full, parse_criterion,
                       phi_p)
from .errors import DesignError
from .io import load_config, read_design, write_design
from .marginal_opt import optimal_product, optimize_covariate, optimize_treatment
from .model import ExactDesign, InterestSpec, ModelSpec, assemble_A
from .rounding import efficient_round, stratum_argmax_round
from .sparsify import sparsify, verify_transfer

__all__ = [
    "CriterionSpec", "DesignError", "ExactDesign", "InterestSpec", "ModelSpec", "assemble_A",
    "criterion_value", "efficiency", "efficient_round", "info_matrix_full", "load_config", "optimal_product",
    "optimize_covariate", "optimize_treatment", "parse_criterion", "phi_p", "read_design",
    "sparsify", "stratum_argmax_round", "verify_transfer", "write_design",
]
