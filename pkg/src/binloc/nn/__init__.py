"""Small numpy tensor engine: layers with analytic backward passes, Adam, gradient checks."""

from .gradcheck import grad_check, grad_check_fn
from .layers import (
    LAYER_KINDS,
    Layer,
    LayerSpec,
    Parameter,
    Sequential,
    ShapeError,
    make_layer,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "LAYER_KINDS", "Layer", "LayerSpec", "Parameter", "Sequential", "ShapeError",
    "make_layer", "Adam", "AdamState", "adam_step", "grad_check", "grad_check_fn",
]
