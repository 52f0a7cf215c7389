"""Adversarial training and robust-soft-label distillation on a small numpy autodiff engine."""

__version__ = "0.1.0"
