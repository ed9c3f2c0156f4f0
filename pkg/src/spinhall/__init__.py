"""Semiclassical spin Hall toolkit for continuum Kane-Mele models."""

from .model import Basis, Model, ModelParams, Valley

__all__ = ["Basis", "Model", "ModelParams", "Valley"]
__version__ = "0.1.0"
