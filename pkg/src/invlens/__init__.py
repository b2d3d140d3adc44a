"""invlens: invertible classifiers, independence cross-entropy, metameric attacks."""

__version__ = "0.1.0"

from .autodiff import Tensor, Tape, backward  # noqa: F401
