"""From-scratch graph neural networks on dense/sparse numpy tensors.

Forward passes, gradients, and the optimizer are written out by hand so the
training loss can be checked against central finite differences.
"""

from .models import (
    ARCHITECTURES,
    ModelConfig,
    Network,
    assemble_network,
    forward,
    normalized_adjacency,
)
from .training import (
    DEFAULT_GRID_DROPOUTS,
    DEFAULT_GRID_HIDDEN_DIMS,
    DEFAULT_GRID_HEADS,
    DEFAULT_GRID_LAYER_COUNTS,
    DEFAULT_GRID_LEARNING_RATES,
    DEFAULT_GRID_NORMALIZATIONS,
    DEFAULT_GRID_WEIGHT_DECAYS,
    TrainConfig,
    TrainedModel,
    evaluate,
    gradient_check,
    load_model,
    network_from_model,
    save_model,
    train,
)

__all__ = [
    "ARCHITECTURES",
    "ModelConfig",
    "Network",
    "TrainConfig",
    "TrainedModel",
    "assemble_network",
    "forward",
    "normalized_adjacency",
    "train",
    "evaluate",
    "gradient_check",
    "network_from_model",
    "save_model",
    "load_model",
    "DEFAULT_GRID_HIDDEN_DIMS",
    "DEFAULT_GRID_LAYER_COUNTS",
    "DEFAULT_GRID_NORMALIZATIONS",
    "DEFAULT_GRID_LEARNING_RATES",
    "DEFAULT_GRID_WEIGHT_DECAYS",
    "DEFAULT_GRID_DROPOUTS",
    "DEFAULT_GRID_HEADS",
]
