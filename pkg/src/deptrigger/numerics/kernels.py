"""CRF kernel backend, chosen once at import.

The compiled extension is used when it was built; setting the environment
variable ``DEPTRIGGER_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _crf_py

BACKEND = "python"
_impl = _crf_py

if os.environ.get("DEPTRIGGER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _crf_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _crf_py

forward = _impl.forward
backward = _impl.backward
viterbi = _impl.viterbi

python_kernels = _crf_py


def compiled_kernels():
    """The compiled module, or None if it was not built."""
    try:
        from . import _crf_cy

        return _crf_cy
    except ImportError:
        return None
