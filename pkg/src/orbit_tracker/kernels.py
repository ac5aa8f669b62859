"""Backend selection for the integration kernel.

The compiled extension is used when it imports; set ``ORBIT_TRACKER_PURE=1``
to force the pure-Python implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
integrate_linear = _kernels_py.integrate_linear

if os.environ.get("ORBIT_TRACKER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        integrate_linear = _compiled.integrate_linear
        BACKEND = "compiled"


def backends():
    """Available implementations by name (the pure one is always present)."""
    out = {"python": _kernels_py.integrate_linear}
    try:
        from . import _kernels
    except ImportError:
        return out
    out["compiled"] = _kernels.integrate_linear
    return out
