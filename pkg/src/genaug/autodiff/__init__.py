from . import ops
from .fdiff import finite_difference_oracle, flatten_gradients, relative_error
from .tape import Tape, UnsupportedPrimitiveError, Var, backward_gradients
from .tensor import NonFiniteValueError, ParameterSet, Tensor

__all__ = [
    "ops",
    "Tape",
    "Var",
    "Tensor",
    "ParameterSet",
    "backward_gradients",
    "finite_difference_oracle",
    "flatten_gradients",
    "relative_error",
    "NonFiniteValueError",
    "UnsupportedPrimitiveError",
]
