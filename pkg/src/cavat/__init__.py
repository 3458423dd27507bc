"""Semi-supervised segmentation lab: constraint-aware virtual adversarial
training with non-differentiable connectivity rewards, on a desk-scale
synthetic benchmark."""

from .grid import active_backend
from .rng import RngState

__version__ = "0.1.0"

__all__ = ["RngState", "active_backend", "__version__"]
