"""Low-rank matrix recovery from noisy linear measurements."""

from .errors import NumericalError, ResourceLimitError
from .measops import MeasOp, make_ensemble
from .solvers import (RecoveryResult, SolverConfig, default_regularization,
                      solve_dantzig, solve_lasso, solve_nuclear_eq)

__version__ = "0.1.0"
