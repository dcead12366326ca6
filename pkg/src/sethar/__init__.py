"""sethar: set-based activity recognition on sparse wearable streams.

Windows of irregularly sampled sensor readings are treated as unordered
sets: a shared embedding network maps each reading independently, a
feature-wise max pool aggregates the set, and a classifier head maps
the pooled embedding to activity probabilities. Interpolation baselines
onto a fixed grid, a training/evaluation harness, and a CLI live in the
submodules.
"""

import os as _os
import sys as _sys

# Single-threaded BLAS keeps training bit-reproducible and makes the
# latency numbers reflect one core, as reported. Only takes effect when
# numpy has not been imported yet and the variables are unset.
if "numpy" not in _sys.modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .backend import BACKEND

__all__ = ["BACKEND", "__version__"]
