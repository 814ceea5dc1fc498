"""Simulation toolkit for quantum state certification with incoherent
measurements: hard-instance ensembles, learning-tree transcripts, exact and
Monte-Carlo likelihood ratios, martingale diagnostics and the
instance-optimal bound calculator."""

from .errors import (
    AllMassRemoved,
    BudgetExceeded,
    ComplexInputError,
    ConfigError,
    DimensionMismatch,
    InvalidStateError,
    NonBracketing,
    NotPSDError,
    ParameterError,
    PovmError,
    QcertError,
    TruncationExhausted,
)
from .states import (
    DensityMatrix,
    DiagonalSpectrum,
    fidelity,
    fidelity_mm_quasinorm,
    schatten_quasinorm,
    trace_norm_distance,
)

__version__ = "0.1.0"
