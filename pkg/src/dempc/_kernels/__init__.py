"""Flow integration kernels.

The compiled module is used when it was built; ``DEMPC_PURE_PYTHON=1``
forces the pure-Python twin.
"""

import os

BACKEND = "python"
if os.environ.get("DEMPC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._flowcore import advance_rk4  # noqa: F401

        BACKEND = "compiled"
    except ImportError:
        pass
if BACKEND == "python":
    from ._flowcore_py import advance_rk4  # noqa: F401


def backends():
    """All importable implementations, keyed by name."""
    from . import _flowcore_py

    out = {"python": _flowcore_py.advance_rk4}
    try:
        from . import _flowcore

        out["compiled"] = _flowcore.advance_rk4
    except ImportError:
        pass
    return out
