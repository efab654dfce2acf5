"""Language-guided local infiltration for interactive image retrieval."""

from .encoders import LEVELS, LEVEL_CHANNELS, LEVEL_HW
from .estimators import LGLIRetriever, TwoTowerLocalizer
from .gradcheck import grad_check
from .model import LGLIModel, ModelConfig
from .scenes import Dataset, GenerationConfig, build_splits, render_scene
from .tensor import Tensor, apply_primitive, backward, no_grad
from .tila import TilaConfig
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GenerationConfig",
    "LEVELS",
    "LEVEL_CHANNELS",
    "LEVEL_HW",
    "LGLIModel",
    "LGLIRetriever",
    "ModelConfig",
    "Tensor",
    "TilaConfig",
    "TrainConfig",
    "TwoTowerLocalizer",
    "apply_primitive",
    "backward",
    "build_splits",
    "grad_check",
    "no_grad",
    "render_scene",
    "train",
]
