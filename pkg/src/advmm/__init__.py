"""Adversarial market making: simulator, stage game, learners and harness."""

from .kernel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
