"""Split-kernel selection: compiled extension when available, numpy otherwise.

Set FLOWCODEC_SPLIT_BACKEND=python or =cython before import to force one;
forcing cython when the extension is missing raises at import time rather
than silently falling back.
"""

from __future__ import annotations

import os

from . import _split_py

try:
    from . import _split_cy
except ImportError:
    _split_cy = None

_BACKENDS = {"python": _split_py.scan_sorted}
if _split_cy is not None:
    _BACKENDS["cython"] = _split_cy.scan_sorted

_forced = os.environ.get("FLOWCODEC_SPLIT_BACKEND", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"FLOWCODEC_SPLIT_BACKEND={_forced!r} is not available; "
            f"built backends: {sorted(_BACKENDS)}"
        )
    _ACTIVE = _forced
else:
    _ACTIVE = "cython" if "cython" in _BACKENDS else "python"

scan_sorted = _BACKENDS[_ACTIVE]


def backend_name() -> str:
    """Name of the kernel picked at import time."""
    return _ACTIVE


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_kernel(name: str | None = None):
    """Fetch a scan kernel by name; None means the active one."""
    if name is None:
        return scan_sorted
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; built: {sorted(_BACKENDS)}") from None
