"""Roughness-aware diffractive optical neural networks.

Simulation (``optics``), hand-written adjoint gradients (``adjoint``),
roughness metrics (``roughness``), SLR block sparsification (``slr``),
2pi periodic smoothing (``smoothing``), data and checkpoints (``dataio``) and
the training driver (``train``, ``cli``).
"""
from .optics import (
    ComplexField,
    DetectorLayout,
    DonnModel,
    Geometry,
    PhaseMask,
    build_kernel,
    data_loss,
    diff_mod,
    forward,
    modulate,
    predict,
    propagate,
)
from .roughness import intra_block_variance, mask_roughness, overall_roughness, pixel_roughness

__version__ = "0.1.0"
