"""Inference-time noise channels and state-fidelity statistics.

Two idealized channels: additive zero-mean Gaussian perturbation of the
circuit angles (fresh draws per circuit evaluation) and a symmetric readout
bit-flip with probability p, which shrinks every Z expectation by (1 - 2p).
Fidelity is the squared overlap of (real) amplitude vectors; mixed states are
out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qsim import CircuitSpec, StateVector, run_circuit_batch

__all__ = [
    "NoiseConfig",
    "perturb_thetas",
    "apply_readout_error",
    "fidelity",
    "FidelityStudy",
    "fidelity_study",
]


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian angle noise (radians) plus symmetric readout error."""

    gaussian_std: float = 0.0
    readout_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_std < 0:
            raise ValueError("gaussian_std must be >= 0")
        if not (0.0 <= self.readout_p <= 0.5):
            raise ValueError("readout_p must lie in [0, 0.5]")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def perturb_thetas(thetas, gaussian_std: float, rng) -> np.ndarray:
    """Each angle gets an independent N(0, std^2) additive draw."""
    if gaussian_std < 0:
        raise ValueError("gaussian_std must be >= 0")
    thetas = np.asarray(thetas, dtype=np.float64)
    return thetas + rng.normal(0.0, gaussian_std, thetas.shape)


def apply_readout_error(expectations, p: float):
    """Symmetric bit flip with probability p maps each <Z> to (1 - 2p) <Z>."""
    if not (0.0 <= p <= 0.5):
        raise ValueError("p must lie in [0, 0.5]")
    return np.asarray(expectations, dtype=np.float64) * (1.0 - 2.0 * p)


def fidelity(a: StateVector, b: StateVector) -> float:
    """Squared overlap of two pure real-amplitude states."""
    if a.n != b.n:
        raise ValueError("states act on different register sizes")
    return float(np.dot(a.amps, b.amps) ** 2)


@dataclass(frozen=True)
class FidelityStudy:
    mean: float
    std: float
    min: float
    max: float
    samples: np.ndarray


def _random_embedded_inputs(n: int, runs: int, rng) -> np.ndarray:
    """Random nonnegative unit rows, the shape of ReLU-encoder outputs."""
    v = np.abs(rng.standard_normal((runs, 2**n)))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fidelity_study(circuit: CircuitSpec, noise: NoiseConfig, n_runs: int = 50,
                   rng=None, inputs: np.ndarray | None = None) -> FidelityStudy:
    """Fidelity between clean and angle-perturbed outputs over random runs.

    Per run: angles drawn uniform in [0, 2pi), an independent random embedded
    input, fresh Gaussian perturbations. ``inputs`` overrides the input states
    (rows must be unit-norm), e.g. product states for a dual-branch register.
    """
    rng = noise.rng() if rng is None else rng
    if inputs is None:
        inputs = _random_embedded_inputs(circuit.n, n_runs, rng)
    elif inputs.shape != (n_runs, 2**circuit.n):
        raise ValueError("inputs must have shape (n_runs, 2^n)")
    thetas = rng.uniform(0.0, 2.0 * np.pi, (n_runs, circuit.n_params))
    clean = run_circuit_batch(inputs, circuit.n, circuit, thetas)
    noisy_thetas = perturb_thetas(thetas, noise.gaussian_std, rng)
    noisy = run_circuit_batch(inputs, circuit.n, circuit, noisy_thetas)
    # normalized overlap: exactly 1.0 for bit-identical states (sigma = 0)
    samples = (np.sum(clean * noisy, axis=1) ** 2
               / (np.sum(clean * clean, axis=1) * np.sum(noisy * noisy, axis=1)))
    return FidelityStudy(float(samples.mean()), float(samples.std()),
                         float(samples.min()), float(samples.max()), samples)
