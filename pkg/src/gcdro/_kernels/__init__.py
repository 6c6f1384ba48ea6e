"""Flow kernel backend selection.

Prefers the compiled extension; falls back to the NumPy implementation when
the extension is missing.  Set GCDRO_PURE_PYTHON=1 to force the fallback
(useful for the backend benchmark and for debugging).
"""

import os

if os.environ.get("GCDRO_PURE_PYTHON"):
    from . import _flowcore_py as _impl
else:
    try:
        from . import _flowcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _flowcore_py as _impl

BACKEND = _impl.BACKEND
neighbor_quad_sums = _impl.neighbor_quad_sums
edge_velocities = _impl.edge_velocities
step_quantities = _impl.step_quantities
tv_sum = _impl.tv_sum


def get_backend(name: str):
    """Return a specific backend module ("python" or "cython"); for benchmarks."""
    if name == "python":
        from . import _flowcore_py

        return _flowcore_py
    if name == "cython":
        from . import _flowcore  # raises ImportError if not built

        return _flowcore
    raise ValueError(f"unknown backend {name!r}")
