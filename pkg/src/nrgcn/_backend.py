"""Kernel backend selection.

The compiled extension is used when it imports; ``NRGCN_BACKEND=python``
forces the pure-Python fallback.
"""

import os

from . import _fallback

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

_BACKENDS = {"python": _fallback}
if _kernels is not None:
    _BACKENDS["cython"] = _kernels

DEFAULT = os.environ.get("NRGCN_BACKEND") or ("cython" if _kernels is not None else "python")


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name=None):
    name = name or DEFAULT
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have: {', '.join(available())})") from None
