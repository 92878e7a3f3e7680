from pyavrobust.tensorcore.gradcheck import GradientCheckReport, finite_difference_check
from pyavrobust.tensorcore.graph import TensorNode, backward
from pyavrobust.tensorcore.primitives import PRIMITIVES, forward_primitive

__all__ = [
    "GradientCheckReport",
    "PRIMITIVES",
    "TensorNode",
    "backward",
    "finite_difference_check",
    "forward_primitive",
]
