"""advlab: adversarial-robustness laboratory for AI-generated-image detectors."""

from .tensor import ShapeError, Tape, TapeError, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "ShapeError", "TapeError", "__version__"]
