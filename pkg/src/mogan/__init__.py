"""Multi-objective training of a generator against several discriminators.

Submodules:
    moo      dominance, min-norm point, and the AVG / GMAN / HV / MGD weight rules
    nn       dense MLPs with hand-written backprop, Adam, and checkpoints
    gan      ring data, random-projection discriminators, the training step
    metrics  Frechet distance and mode coverage
    runner   seeded runs, sweeps, and plots
    cli      the ``mogan`` command
"""

from . import gan, metrics, moo, nn
from .errors import DimensionError, NadirError, NumericError, PreconditionError

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "NadirError",
    "NumericError",
    "PreconditionError",
    "gan",
    "metrics",
    "moo",
    "nn",
]
