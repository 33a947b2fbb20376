"""Split-aware linear bound propagation and branch and bound for ReLU networks."""
from .model import (DimensionError, InputRegion, ModelFormatError, Network, NonFiniteError,
                    Specification, VerificationProperty, forward_eval, load_network,
                    load_property, merge_specification, random_network)
from .bounds import (InfeasibleDomainError, LinearBound, PreActBounds, SplitSet, argmin_input,
                     backward_bound, compute_intermediate_bounds, concretize, interval_bounds)
from .optimizer import ParamState, ascend, joint_optimize
from .bab import BabConfig, Status, Verdict, run_bab
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BabConfig", "DimensionError", "InfeasibleDomainError", "InputRegion",
    "LinearBound", "ModelFormatError", "Network", "NonFiniteError", "ParamState",
    "PreActBounds", "Specification", "SplitSet", "Status", "VerificationProperty", "Verdict",
    "argmin_input", "ascend", "backward_bound", "compute_intermediate_bounds", "concretize",
    "forward_eval", "interval_bounds", "joint_optimize", "load_network", "load_property",
    "merge_specification", "random_network", "run_bab",
]
