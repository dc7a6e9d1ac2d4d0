"""Implicit and explicit backpropagation for small dense and recurrent nets."""
from . import activations, bench, data, linalg, network, optimizers, solvers

__all__ = ["activations", "bench", "data", "linalg", "network", "optimizers", "solvers"]
__version__ = "0.1.0"
