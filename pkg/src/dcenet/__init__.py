"""Multi-path pedestrian trajectory prediction on a numpy reverse-mode autodiff engine."""

from . import attention, autodiff, baselines, cvae, data, dynmap, encoder, nn, ranking

__version__ = "0.1.0"

__all__ = ["attention", "autodiff", "baselines", "cvae", "data", "dynmap", "encoder", "nn", "ranking"]
