"""samlab: sharpness-aware minimization over pluggable optimizers, with
flatness probes and a small experiment harness."""

__version__ = "0.1.0"

from .errors import SamlabError  # noqa: E402
from .tensor import GradVector, ParamVector, Tensor  # noqa: E402

__all__ = ["GradVector", "ParamVector", "SamlabError", "Tensor", "__version__"]
