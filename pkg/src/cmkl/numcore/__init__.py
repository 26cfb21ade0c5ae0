from cmkl.numcore.adam import AdamState, NonFiniteGradient, adam_step
from cmkl.numcore.checkpoint import load_checkpoint, save_checkpoint
from cmkl.numcore.gradcheck import TensorReport, analytic_grads, grad_check, is_kink, relative_error
from cmkl.numcore.params import GROUPS, ParamSet, TensorSpec, glorot_bound, grads_from_leaves, init_params

__all__ = [
    "AdamState",
    "GROUPS",
    "NonFiniteGradient",
    "ParamSet",
    "TensorReport",
    "TensorSpec",
    "adam_step",
    "analytic_grads",
    "glorot_bound",
    "grad_check",
    "grads_from_leaves",
    "init_params",
    "is_kink",
    "load_checkpoint",
    "relative_error",
    "save_checkpoint",
]
