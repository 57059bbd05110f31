"""Composable NLI networks on a small numpy autodiff core."""
from .config import LABELS, ModelConfig
from .model import NLIModel, count_parameters

__all__ = ["LABELS", "ModelConfig", "NLIModel", "count_parameters"]
__version__ = "0.1.0"
