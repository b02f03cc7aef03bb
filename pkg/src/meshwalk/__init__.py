"""Noisy discrete-step walks on a two-ring photonic mesh lattice."""

from .lattice import (ProtocolParams, floquet_operator_k, floquet_operator_real, quasienergies,
                      step_operator_k, step_operators_real)
from .noise import NoiseSpec, coefficients, gamma_coefficients, sample_sequence
from .trajectory import StateVector, apply_step, evolve_trajectory, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "NoiseSpec", "ProtocolParams", "StateVector", "apply_step", "coefficients",
    "evolve_trajectory", "floquet_operator_k", "floquet_operator_real", "gamma_coefficients",
    "quasienergies", "run_ensemble", "sample_sequence", "step_operator_k", "step_operators_real",
]
