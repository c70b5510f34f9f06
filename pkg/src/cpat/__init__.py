"""Channel-partitioned attention transformer for image super-resolution, in numpy."""

from .model import CPATConfig, WeightStore, cpat_forward, init_weights
from .tensor import GradTape, Tensor, backward

__all__ = ["CPATConfig", "GradTape", "Tensor", "WeightStore", "backward", "cpat_forward", "init_weights"]
__version__ = "0.1.0"
