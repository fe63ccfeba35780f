"""Hot loops, compiled with numba unless ``CTXSCHED_BACKEND=numpy`` is set.

Both backends expose the same functions; ``BACKEND`` names the active one.
"""

import os

_requested = os.environ.get("CTXSCHED_BACKEND", "numba").strip().lower()

if _requested == "numpy":
    from . import _vec as impl
else:
    try:
        from . import _jit as impl
    except ImportError:  # numba missing
        from . import _vec as impl

BACKEND = "numba" if impl.__name__.endswith("_jit") else "numpy"

POLICY_CODES = {
    "netgain": impl.POLICY_NETGAIN,
    "randomized": impl.POLICY_RANDOMIZED,
    "periodic": impl.POLICY_PERIODIC,
    "maxage": impl.POLICY_MAXAGE,
}

propagate = impl.propagate
expected_reset_value = impl.expected_reset_value
rvi = impl.rvi
renewal = impl.renewal
simulate_chunk = impl.simulate_chunk


def load(name: str):
    """Import one backend explicitly (``"numba"`` or ``"numpy"``), for comparisons."""
    if name == "numba":
        from . import _jit
        return _jit
    if name == "numpy":
        from . import _vec
        return _vec
    raise ValueError(f"unknown backend {name!r}")
