"""Numerical library for fully coupled forward-backward SDEs with jumps:
small-interval Picard solver with regression conditional expectations, plus
a Monte Carlo harness auditing moment bounds, jump scaling, comparison, and
stability properties at desk scale."""

__version__ = "0.1.0"

from .errors import (BudgetError, DivergenceError, SimulationError,
                     ValidationError)
from .expressions import ExpressionError, parse_expr, to_text
from .marks import (JumpSchedule, MarkAtom, MarkSpace, build_finite,
                    integrate_mark, l_kernel, rho, sample_jumps,
                    truncate_density)
from .model import (AssumptionReport, CoefficientSet, Constants,
                    MonotonicityParams, assemble_A, check_lipschitz_growth,
                    check_monotonicity, derive_g, model_from_dict,
                    model_to_dict, validate_model)
from .pathsim import (DriverBundle, PathBundle, TimeGrid, euler_forward,
                      ito_integrals, sample_drivers, sample_initial_states)
from .solver import (FBSDESolver, PolicyChain, PolicyFunction,
                     RegressionBasis, SolveDiagnostics, SolverConfig,
                     ZeroPolicy, backward_regression_pass, chain_horizon,
                     decoupling_field, find_delta0, measure_contraction,
                     picard_solve)
from . import audit, presets

__all__ = [
    "BudgetError", "DivergenceError", "SimulationError", "ValidationError",
    "ExpressionError", "parse_expr", "to_text",
    "JumpSchedule", "MarkAtom", "MarkSpace", "build_finite", "integrate_mark",
    "l_kernel", "rho", "sample_jumps", "truncate_density",
    "AssumptionReport", "CoefficientSet", "Constants", "MonotonicityParams",
    "assemble_A", "check_lipschitz_growth", "check_monotonicity", "derive_g",
    "model_from_dict", "model_to_dict", "validate_model",
    "DriverBundle", "PathBundle", "TimeGrid", "euler_forward", "ito_integrals",
    "sample_drivers", "sample_initial_states",
    "FBSDESolver", "PolicyChain", "PolicyFunction", "RegressionBasis",
    "SolveDiagnostics", "SolverConfig", "ZeroPolicy",
    "backward_regression_pass", "chain_horizon", "decoupling_field",
    "find_delta0", "measure_contraction", "picard_solve",
    "audit", "presets",
]
