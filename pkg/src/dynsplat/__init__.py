"""Compact dynamic Gaussian splatting at desk scale.

Anchor-based canonical scenes, hexplane-driven global-to-local deformation,
learnable dynamics masking, gradient-driven temporal interval adjustment, and
a CPU differentiable renderer to train it all end to end.
"""

from .autodiff import Tape, Tensor
from .config import TrainConfig
from .render import Camera, Gaussian3D, GaussianBatch, render
from .scene import SceneSpec, generate_scene

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "TrainConfig",
    "Camera",
    "Gaussian3D",
    "GaussianBatch",
    "render",
    "SceneSpec",
    "generate_scene",
    "__version__",
]
