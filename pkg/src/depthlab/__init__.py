"""Affine-invariant depth estimation toolkit.

Grid/geometry primitives, the affine-invariant loss family with exact
hand-derived gradients, least-squares aligned evaluation metrics, a
curriculum batch scheduler, a stereo-flow filtering pipeline, and a
desk-scale synthetic training demo. See the ``depthlab`` CLI for the
file-based surface.
"""

import os

# DDP_THREADS caps internal (BLAS) parallelism. Must be applied before numpy
# is first imported anywhere in the process, hence here at package import.
_threads = os.environ.get("DDP_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import DepthlabError, NumericalError, ParseError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "DepthlabError",
    "ValidationError",
    "NumericalError",
    "ParseError",
    "__version__",
]
