"""Temporal-spatial causal interpretation of recurrent pixel-control agents.

Training, explanation, and evaluation tools for small recurrent policies on
deterministic 32x32 grayscale control tasks, built on a self-contained numpy
autodiff engine.
"""

__version__ = "0.1.0"
