"""Bilateral intent-enhanced sequential recommendation with perturbation contrastive learning."""

__version__ = "0.1.0"
