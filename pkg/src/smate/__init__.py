"""SMATE: semi-supervised spatio-temporal representation learning for
multivariate time series, on a self-contained autodiff core."""

import os as _os

# Cap BLAS pools before numpy initializes them: the model's matrices are
# small enough that thread hand-off costs more than it saves, and a fixed
# thread count keeps runs bitwise reproducible. SMATE_THREADS raises it.
_threads = _os.environ.get("SMATE_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

from .tensor import (
    Adam,
    ContractError,
    DimensionError,
    Parameter,
    Tape,
    Tensor,
    TrainingAbort,
)

__all__ = [
    "Adam",
    "ContractError",
    "DimensionError",
    "Parameter",
    "Tape",
    "Tensor",
    "TrainingAbort",
]

__version__ = "0.1.0"
