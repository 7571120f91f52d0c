"""Transport-kernel backend selection.

Prefers the compiled extension; falls back to the pure-numpy twin when the
extension is missing (source checkout without a toolchain) or when
``UNCHART_PURE_PYTHON=1`` is set.  Both backends expose the same four
functions and agree to floating-point noise; see tests/test_kernels.py.
"""

import os

from . import pykernels

if os.environ.get("UNCHART_PURE_PYTHON") == "1":
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _transport as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = pykernels
        BACKEND = "python"

metric_at = _impl.metric_at
christoffel = _impl.christoffel
transport_polyline = _impl.transport_polyline
self_transport = _impl.self_transport

__all__ = [
    "BACKEND",
    "christoffel",
    "metric_at",
    "pykernels",
    "self_transport",
    "transport_polyline",
]
