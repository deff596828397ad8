"""Kernel backend selection.

The numerically heavy kernels exist twice: a compiled Cython extension
(``qreplay._core``) and a pure-NumPy fallback (``qreplay._kernels_np``).
The compiled one is preferred when it imports cleanly. Override with the
environment variable ``QREPLAY_BACKEND``:

* ``numpy``    always use the fallback
* ``compiled`` require the extension, fail loudly if missing
* unset/auto   try compiled, silently fall back

``ACTIVE`` names the backend in use. Both backends are deterministic;
results agree to rounding but are not guaranteed bit-identical to each
other, so reproducibility claims hold per backend.
"""

import os

from . import _kernels_np

_requested = os.environ.get("QREPLAY_BACKEND", "auto").strip().lower() or "auto"

if _requested in ("auto", "compiled"):
    try:
        from . import _core as _impl

        ACTIVE = "compiled"
    except ImportError as exc:
        if _requested == "compiled":
            raise ImportError(
                "QREPLAY_BACKEND=compiled but the qreplay._core extension is "
                "not built; run `pip install -e . --no-build-isolation`"
            ) from exc
        _impl = _kernels_np
        ACTIVE = "numpy"
elif _requested == "numpy":
    _impl = _kernels_np
    ACTIVE = "numpy"
else:
    raise ValueError(
        f"unknown QREPLAY_BACKEND={_requested!r}; expected numpy or compiled"
    )

linear_forward = _impl.linear_forward
linear_backward = _impl.linear_backward
relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
softmax_xent = _impl.softmax_xent
apply_rotation_plan = _impl.apply_rotation_plan
