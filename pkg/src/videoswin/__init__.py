"""Shifted-window 3D video transformer on a small numpy autodiff engine.

Modules: ``tensor`` (engine and kernels), ``windowing`` (3D window
geometry), ``attention`` (window MSA and blocks), ``model`` (backbone and
variants), ``checkpoint`` (container and 2D -> 3D inflation), ``analyzer``
(parameter/FLOP accounting), ``views``/``optim``/``train``/``cli``
(pipeline).
"""
from .kernels import BACKEND
from .model import ArchConfig, VideoSwin, build_variant
from .tensor import Tape, Tensor
from .windowing import ShiftSpec, WindowSpec

__all__ = ["BACKEND", "ArchConfig", "ShiftSpec", "Tape", "Tensor", "VideoSwin", "WindowSpec", "build_variant"]
__version__ = "0.1.0"
