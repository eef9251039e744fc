"""Block-structured Operator Inference for coupled multiphysics reduced-order models."""

__version__ = "0.1.0"
