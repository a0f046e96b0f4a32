"""Recurrence kernels: compiled core with a pure-numpy fallback.

The GRU forward/backward sweep is the only sequential inner loop in the
model (everything else is a handful of BLAS calls), so it gets a compiled
implementation. Selection happens once at import:

* ``SMATE_KERNELS=auto``   (default) use the compiled extension if built;
* ``SMATE_KERNELS=python`` force the numpy fallback;
* ``SMATE_KERNELS=cython`` require the extension, fail loudly if missing.

``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _numpy

_requested = os.environ.get("SMATE_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "python"):
    raise ValueError(
        f"SMATE_KERNELS must be auto, cython or python, got {_requested!r}"
    )

backend_name = "python"
gru_forward = _numpy.gru_forward
gru_backward = _numpy.gru_backward

if _requested in ("auto", "cython"):
    try:
        from . import _fast
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "SMATE_KERNELS=cython but smate.kernels._fast is not built; "
                "run `pip install -e . --no-build-isolation` with a C compiler"
            )
    else:
        backend_name = "cython"
        gru_forward = _fast.gru_forward
        gru_backward = _fast.gru_backward
