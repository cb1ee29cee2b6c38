"""Hybrid quantum-classical radiance fields with an exact real-amplitude
circuit simulator, analytic gradients, volume rendering, and noise analysis."""

from . import autodiff, circuits, dataio, field, noise, qsim, renderer, trainer
from .circuits import AnsatzConfig, build_ansatz
from .field import ModelConfig, build_model
from .qsim import CircuitSpec, Gate, StateVector
from .trainer import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "autodiff", "circuits", "dataio", "field", "noise", "qsim", "renderer",
    "trainer", "AnsatzConfig", "build_ansatz", "ModelConfig", "build_model",
    "CircuitSpec", "Gate", "StateVector", "TrainConfig", "fit", "__version__",
]
