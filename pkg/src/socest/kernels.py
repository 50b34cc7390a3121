"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
fallback. Set ``SOCEST_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("SOCEST_PURE_PYTHON", "") not in ("", "0"):
    from socest import _kernels_py as _impl
else:
    try:
        from socest import _kernels as _impl
    except ImportError:
        from socest import _kernels_py as _impl

simulate_kernel = _impl.simulate_kernel
cc_kernel = _impl.cc_kernel
ekf_kernel = _impl.ekf_kernel
BACKEND = _impl.BACKEND
