"""Optimal tracking for switched systems with a fixed mode sequence."""

__version__ = "0.1.0"

from .basis import PolynomialBasis, PolynomialExpression, enumerate_monomials, eval_basis  # noqa: E402
from .errors import (DivergenceError, IncompatibleWeightsError, NonFiniteError,  # noqa: E402
                     ProblemValidationError, UnderdeterminedFitError)
from .model import (CostSpec, ModeDynamics, Omega, ReferenceModel, SwitchedTrackingProblem,  # noqa: E402
                    validate_problem, vdp_problem)
from .oracle import compare_with_oracle, lq_solve  # noqa: E402
from .rollout import CostatePolicy, ZeroPolicy, exact_costates_along, rollout  # noqa: E402
from .snac import CostateNetwork, TrainConfig, train  # noqa: E402
from .switchopt import method1_scalar, method2_analytic, method3_sweep  # noqa: E402
from .transform import TransformedGrid  # noqa: E402
