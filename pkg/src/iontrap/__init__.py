"""Pulse-level simulator of a trapped-ion quantum computer under laser-pulse
inaccuracies and phonon-mode decoherence."""

from __future__ import annotations

from .analysis import (
    SimulationConfig,
    correlation,
    error_rate,
    fidelity_at,
    replicate,
    run_noisy,
)
from .benchmarks import get_benchmark
from .circuits import Circuit, Gate, compile, parse_circuit, validate_tables
from .engine import DenseState, PulseOp, SparseState, new_state
from .noise import DecoherenceModel, ErrorModel

__version__ = "0.1.0"

__all__ = [
    "Circuit",
    "DecoherenceModel",
    "DenseState",
    "ErrorModel",
    "Gate",
    "PulseOp",
    "SimulationConfig",
    "SparseState",
    "compile",
    "correlation",
    "error_rate",
    "fidelity_at",
    "get_benchmark",
    "new_state",
    "parse_circuit",
    "replicate",
    "run_noisy",
    "validate_tables",
]
