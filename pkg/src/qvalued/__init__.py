"""Computational analysis of multiple-valued functions between metric spaces.

The package models a metric measure space as a finite weighted point cloud,
represents values of Q-valued functions as canonical unordered tuples with an
assignment-based matching metric, fits affine differential germs in charts,
and classifies sampled functions into locally Lipschitz strata with measured
certificates.  See the README for the CLI and the acceptance suite.
"""

from .config import ExperimentConfig
from .diff import (DecisionRule, DiffVerdict, QuotientCurve, SampledQFunction,
                   abgr, abgr_approx, differentiability_report, fit_differential,
                   is_differentiable, residual, split_function)
from .errors import (DegenerateFitError, DimensionMismatch, FormatError,
                     PreconditionError, QValuedError, ResolutionError)
from .germs import (AffineGerm, AffineQGerm, Chart, enforce_eqty, eval_germ,
                    germ_distance, germ_norm)
from .qpoint import (QPoint, Splitting, in_neighborhood, is_diagonal,
                     optimal_matching, project_split, qdist, qdist_bruteforce,
                     separation_split)
from .space import (PointCloudSpace, RadiiSchedule, ball, ball_comparison_bound,
                    classify_mu_interior, density_ratio, doubling_constant,
                    full_delta, is_full, is_isolated, measure, retraction)
from .stepanov import (StratificationReport, Stratum, diagonal_set, extend,
                       extension_bound_check, lipschitz_certificate,
                       stepanov_cover, stratify)
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "DecisionRule", "DiffVerdict", "QuotientCurve", "SampledQFunction",
    "abgr", "abgr_approx", "differentiability_report", "fit_differential",
    "is_differentiable", "residual", "split_function",
    "QValuedError", "FormatError", "DimensionMismatch", "PreconditionError",
    "ResolutionError", "DegenerateFitError",
    "AffineGerm", "AffineQGerm", "Chart", "enforce_eqty", "eval_germ",
    "germ_distance", "germ_norm",
    "QPoint", "Splitting", "in_neighborhood", "is_diagonal", "optimal_matching",
    "project_split", "qdist", "qdist_bruteforce", "separation_split",
    "PointCloudSpace", "RadiiSchedule", "ball", "ball_comparison_bound",
    "classify_mu_interior", "density_ratio", "doubling_constant", "full_delta",
    "is_full", "is_isolated", "measure", "retraction",
    "StratificationReport", "Stratum", "diagonal_set", "extend",
    "extension_bound_check", "lipschitz_certificate", "stepanov_cover", "stratify",
    "SyntheticSpec", "generate",
]
