"""Ergodic control of Brownian motion: local closed forms, occupation-measure
LPs, Monte Carlo verification and asymptotic tracking bounds."""
__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, ErgotrackError, ExponentError, GridError,
                     ParameterError, RootFindingError, SolverError)
from .localsolve import ControlClass, LocalSolution, ModelParams, find_iota, solve
