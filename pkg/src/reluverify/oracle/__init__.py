"""Independent reference implementations used to validate the verifier."""
from .attack import pgd_attack
from .crown_reference import crown_reference
from .lp import EmptyDomain, GuardExceeded, exact_min, exact_range, lp_relaxation_min
from .simplex import LPProblem, LPStatus, simplex_solve

__all__ = ["EmptyDomain", "GuardExceeded", "LPProblem", "LPStatus", "crown_reference",
           "exact_min", "exact_range", "lp_relaxation_min", "pgd_attack", "simplex_solve"]
