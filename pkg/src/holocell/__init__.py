"""holocell: redundant holographic associative memory and complex-valued
recurrent cells, with task generators and a training harness."""

__version__ = "0.1.0"

from . import autodiff, cells, complex_core, holo_memory, tasks, training  # noqa: F401
