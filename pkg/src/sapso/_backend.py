"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin.  Set ``SAPSO_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_forced = os.environ.get("SAPSO_BACKEND", "").strip().lower()
if _forced and _forced not in BACKENDS:
    raise ImportError(f"SAPSO_BACKEND={_forced!r} is not available; have {sorted(BACKENDS)}")
DEFAULT = _forced or ("compiled" if _compiled is not None else "python")


def get(name=None):
    """Return the kernel module for ``name`` (default: best available)."""
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None
