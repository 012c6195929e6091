"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; set ``ZEROSUB_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the selected implementation.
"""
import os

from . import _pure

ckernels = None
if not os.environ.get("ZEROSUB_PURE_PYTHON"):
    try:
        from . import _ckernels as ckernels
    except ImportError:
        ckernels = None

_impl = ckernels if ckernels is not None else _pure
BACKEND = "cython" if ckernels is not None else "python"

gibbs_sweep = _impl.gibbs_sweep
dtw_accumulate = _impl.dtw_accumulate
viterbi_chain = _impl.viterbi_chain

__all__ = ["BACKEND", "gibbs_sweep", "dtw_accumulate", "viterbi_chain"]
