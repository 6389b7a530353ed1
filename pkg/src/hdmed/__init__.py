"""Partially penalized high-dimensional mediation analysis."""

from .inference import (f_direct_test, fit_mediation, oracle_f_direct_test, oracle_fit,
                        wald_indirect_test)
from .model import (DataError, Dataset, DegenerateFitError, MediationFit, PenaltyFamily,
                    PenaltySpec, TestKind, TestReport, validate_dataset)
from .solver import SolverConfig, fit_path_select, lla_fit, solve_weighted_partial_l1

__version__ = "0.1.0"

__all__ = [
    "DataError", "Dataset", "DegenerateFitError", "MediationFit", "PenaltyFamily",
    "PenaltySpec", "SolverConfig", "TestKind", "TestReport", "f_direct_test",
    "fit_mediation", "fit_path_select", "lla_fit", "oracle_f_direct_test", "oracle_fit",
    "solve_weighted_partial_l1", "validate_dataset", "wald_indirect_test",
]
