"""Domain-adversarial objectives, entropy landscapes, appearance-flow warping and
attribute-conditioned cycle translation on a small numpy autodiff core."""

from .tensor import Tensor

__version__ = "0.1.0"
__all__ = ["Tensor", "__version__"]
