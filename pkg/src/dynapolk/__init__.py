"""Online kernel learning in non-stationary environments with compressed dictionaries."""

__version__ = "0.1.0"

from .kernel import KernelSpec, gram, kernel_value
from .komp import CompressionReport, compress
from .learner import DynaPOLK, LearnerConfig, LearnerState, Schedule, step
from .loss import LossSpec, WindowBuffer
from .rkhs import DictionaryFunction, NumericalError, delta_norm, evaluate, norm
from .streams import MixtureDriftSpec, SineDriftSpec

__all__ = ["KernelSpec", "gram", "kernel_value", "CompressionReport", "compress",
           "DynaPOLK", "LearnerConfig", "LearnerState", "Schedule", "step", "LossSpec",
           "WindowBuffer", "DictionaryFunction", "NumericalError", "delta_norm", "evaluate",
           "norm", "MixtureDriftSpec", "SineDriftSpec"]
