"""Hot-kernel backend selection.

The compiled extension (built from ``_native.pyx``) is used when present;
otherwise the pure-numpy fallback takes over.  Set SPOOFBENCH_BACKEND to
``pure`` or ``native`` to force a choice (forcing ``native`` without the
built extension raises at import).
"""

import os

from . import pure
from .pure import expit

_forced = os.environ.get("SPOOFBENCH_BACKEND", "").strip().lower()

if _forced == "pure":
    _impl = pure
elif _forced == "native":
    from . import _native as _impl
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = pure

BACKEND = _impl.BACKEND_NAME
bin_cells = _impl.bin_cells
spoof_loss_delta = _impl.spoof_loss_delta

__all__ = ["BACKEND", "bin_cells", "spoof_loss_delta", "expit", "pure"]


def available_backends():
    names = ["pure"]
    try:
        from . import _native  # noqa: F401

        names.append("native")
    except ImportError:
        pass
    return names
