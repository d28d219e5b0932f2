"""Numerical toolkit for periodic traveling waves of viscous balance laws."""
from .errors import ModwaveError
from .model import ModelSpec, available_models, get_model

__all__ = ["ModwaveError", "ModelSpec", "available_models", "get_model"]
__version__ = "0.1.0"
