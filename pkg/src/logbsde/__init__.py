"""Monte Carlo toolkit for BSDEs with jumps and logarithmic-growth drivers.

Modules: ``kernel`` (random sources), ``forward`` (state simulation),
``generators`` (drivers, assumption checks, mollification), ``engine``
(backward regression solver), ``control`` (Hamiltonians and verification),
``config``/``runner``/``cli`` (experiment harness).
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, LogBsdeError, NumericalError, RegressionError, SimulationError,
                     SingularMatrixError)
from .kernel import MarkMeasure, PathBundle, TimeGrid, sample_bundle
from .forward import CoefficientSet, ConstantPolicy, FunctionPolicy, StatePaths, simulate_controlled, simulate_uncontrolled
from .generators import GeneratorSpec, ThetaWeight, mollify, theta
from .engine import BsdeSolution, RegressionBasis, SolveReport, solve_lipschitz, solve_log_growth
from .control import ControlProblem, OptimalityReport, verify_optimality

__all__ = [
    "BsdeSolution", "CoefficientSet", "ConfigError", "ConstantPolicy", "ControlProblem", "DomainError",
    "FunctionPolicy", "GeneratorSpec", "LogBsdeError", "MarkMeasure", "NumericalError", "OptimalityReport",
    "PathBundle", "RegressionBasis", "RegressionError", "SimulationError", "SingularMatrixError", "SolveReport",
    "StatePaths", "ThetaWeight", "TimeGrid", "mollify", "sample_bundle", "simulate_controlled",
    "simulate_uncontrolled", "solve_lipschitz", "solve_log_growth", "theta", "verify_optimality",
]
