__version__ = "0.1.0"

from .numerics import ToleranceConfig, ConvergenceError
from .model import AuctionInstance, BidStrategy, UniformDistribution, PowerDistribution, PiecewiseDistribution
from .bounds import phi_constant, ell, vbar, misalloc_lb_old, misalloc_lb_new
from .equilibrium import solve, best_response_residual, EquilibriumSolution
from .welfare import optimal_welfare, equilibrium_welfare, audit_lemmas, load_suite
