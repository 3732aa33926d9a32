"""Hot kernels with a compiled backend and a pure-Python fallback.

The Cython extension is used when it was built; otherwise, or when
``REPROKIT_PURE_PYTHON=1`` is set, the numpy implementation is loaded.
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("REPROKIT_PURE_PYTHON", "") != "1":
    try:
        from . import _assign as _compiled
    except ImportError:
        _compiled = None
    else:
        BACKEND = "cython"
else:
    _compiled = None

_impl = _compiled if _compiled is not None else _fallback

pairwise_euclidean = _impl.pairwise_euclidean
linear_assignment = _impl.linear_assignment


def backends():
    """Available backend modules keyed by name; used by tests and the benchmark."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
