"""unchart: coordinate-free maps of an observed stimulus space.

Learns a Riemannian metric from the local velocity statistics of raw
sensor time series, derives parallel transport from it, and expresses
stimulus locations as transport counts relative to anchor stimuli —
a representation that is independent of the observing device's channels
and sensors.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
