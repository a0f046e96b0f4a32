"""Pin BLAS threading before numpy loads anywhere in the test process;
the tiny matrices in this suite run fastest single-threaded and the
determinism assertions want a fixed reduction layout."""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, os.environ.get("SMATE_THREADS", "1"))
