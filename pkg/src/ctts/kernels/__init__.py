"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly; set ``CTTS_NO_NUMBA=1``
to force the pure-numpy path. Both backends share one summation order, so
matmul/conv/sparse results are bit-identical across them. Transcendentals
(exp, tanh) come from different libm implementations and may differ by an ulp.
"""

import os

from . import _numpy as numpy_backend

try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

# The flag only picks the active backend; both stay importable for comparison.
DISABLE_NUMBA = os.environ.get("CTTS_NO_NUMBA", "").lower() in ("1", "true", "yes")
active = numpy_backend if DISABLE_NUMBA or numba_backend is None else numba_backend
BACKEND = "numba" if active is numba_backend else "numpy"

matmul = active.matmul
qmatmul = active.qmatmul
qconv1d = active.qconv1d
conv1d = active.conv1d
bsr_matvec = active.bsr_matvec
sample_categorical = active.sample_categorical
vocoder_loop = active.vocoder_loop

__all__ = [
    "BACKEND",
    "active",
    "numpy_backend",
    "numba_backend",
    "matmul",
    "qmatmul",
    "qconv1d",
    "conv1d",
    "bsr_matvec",
    "sample_categorical",
    "vocoder_loop",
]
