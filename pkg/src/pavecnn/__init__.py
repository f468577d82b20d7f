"""Small convolutional networks for pavement crack, marking and severity classification."""
from .data import TASK_LABELS, Image, load_image, load_manifest, save_image
from .estimator import ImagePreprocessor, PavementCNNClassifier
from .exceptions import FormatError, NumericError, PaveCNNError, ShapeError, StateError, ValidationError
from .models import build_model, load_model, save_model
from .nn import Network
from .train import TrainConfig, evaluate, fit, predict

__version__ = "0.1.0"

__all__ = [
    "TASK_LABELS", "Image", "load_image", "save_image", "load_manifest",
    "ImagePreprocessor", "PavementCNNClassifier",
    "PaveCNNError", "ShapeError", "FormatError", "ValidationError", "StateError", "NumericError",
    "build_model", "load_model", "save_model", "Network",
    "TrainConfig", "fit", "evaluate", "predict",
]
