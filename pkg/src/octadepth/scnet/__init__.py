from .layers import ShapeError, Tape, Tensor
from .network import (ForwardTrace, ScNetParams, Topology, forward, init_params,
                      scb_forward, update_running_stats)
from .optim import AdamState, adam_step
from .gradcheck import GradCheckResult, check_gradients, gradient_check

__all__ = [
    "AdamState", "ForwardTrace", "GradCheckResult", "ScNetParams", "ShapeError", "Tape",
    "Tensor", "Topology", "adam_step", "check_gradients", "forward", "gradient_check",
    "init_params", "scb_forward", "update_running_stats",
]
