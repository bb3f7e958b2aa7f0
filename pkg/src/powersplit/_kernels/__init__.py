"""Kernel backend selection.

Imports the compiled extension when it is available, otherwise falls back to
the pure NumPy implementations. ``POWERSPLIT_PURE=1`` forces the fallback.
"""

import os

from . import _pure

if os.environ.get("POWERSPLIT_PURE", "").strip() in ("1", "true", "yes"):
    _impl = _pure
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND

hmm_forward = _impl.hmm_forward
hmm_backward = _impl.hmm_backward
hsmm_backward = _impl.hsmm_backward
fbpf_accumulate = _impl.fbpf_accumulate
systematic_counts = _impl.systematic_counts

pure = _pure

__all__ = [
    "BACKEND",
    "hmm_forward",
    "hmm_backward",
    "hsmm_backward",
    "fbpf_accumulate",
    "systematic_counts",
    "pure",
]
