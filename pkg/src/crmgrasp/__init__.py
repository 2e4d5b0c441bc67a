"""Contextual reward machines for stage-decomposed grasp learning."""

__version__ = "0.1.0"
