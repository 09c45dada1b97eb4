"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when
``GEOCELL_KIT_PURE=1`` is set, the numpy fallback is used. ``BACKEND`` names
the active one and ``use_backend`` switches at runtime (tests, benchmarks).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _fallback

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on build
    _ckernels = None

_NAMES = ("haversine_pairs", "haversine_matrix", "optics_order", "points_in_ring",
          "nearest_row", "row_distances")

BACKEND = "python"


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _ckernels is not None else [])


def use_backend(name: str) -> None:
    global BACKEND
    mod: ModuleType
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        mod = _ckernels
    elif name == "python":
        mod = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


haversine_pairs = _fallback.haversine_pairs
haversine_matrix = _fallback.haversine_matrix
optics_order = _fallback.optics_order
points_in_ring = _fallback.points_in_ring
nearest_row = _fallback.nearest_row
row_distances = _fallback.row_distances

if _ckernels is not None and os.environ.get("GEOCELL_KIT_PURE", "") not in ("1", "true"):
    use_backend("compiled")
