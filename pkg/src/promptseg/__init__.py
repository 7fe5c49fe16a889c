"""Promptable medical image segmentation on a numpy autodiff core."""

from .config import ModelConfig, full_config, toy_config
from .model import SegModel

__all__ = ["ModelConfig", "SegModel", "full_config", "toy_config"]
__version__ = "0.1.0"
