"""Selects the update-kernel backend at import time.

The compiled extension (``saros._ckernels``) is preferred; the pure-numpy
fallback (``saros._kernels_py``) is used when the extension is missing.
Set ``SAROS_BACKEND=c`` or ``SAROS_BACKEND=python`` to force one; forcing
``c`` without a built extension is an import error rather than a silent
fallback.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

_requested = os.environ.get("SAROS_BACKEND", "").strip().lower()

if _requested not in ("", "c", "python"):
    raise ImportError(f"SAROS_BACKEND must be 'c' or 'python', got {_requested!r}")

if _requested == "python":
    from . import _kernels_py as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "c":
            raise
        from . import _kernels_py as _impl

BACKEND: str = _impl.BACKEND_NAME

user_block_pass_sgd = _impl.user_block_pass_sgd
user_block_pass_momentum = _impl.user_block_pass_momentum
bpr_sgd_steps = _impl.bpr_sgd_steps


def available_backends() -> dict:
    """Importable kernel modules keyed by backend name (for tests/bench)."""
    from . import _kernels_py

    backends = {"python": _kernels_py}
    try:
        from . import _ckernels  # type: ignore[attr-defined]

        backends["c"] = _ckernels
    except ImportError:
        pass
    return backends


@contextmanager
def use_backend(name: str):
    """Temporarily rebind the kernel functions to one backend."""
    global user_block_pass_sgd, user_block_pass_momentum, bpr_sgd_steps, BACKEND
    backends = available_backends()
    if name not in backends:
        raise ImportError(f"backend {name!r} is not available (have: {sorted(backends)})")
    saved = (user_block_pass_sgd, user_block_pass_momentum, bpr_sgd_steps, BACKEND)
    mod = backends[name]
    user_block_pass_sgd = mod.user_block_pass_sgd
    user_block_pass_momentum = mod.user_block_pass_momentum
    bpr_sgd_steps = mod.bpr_sgd_steps
    BACKEND = mod.BACKEND_NAME
    try:
        yield mod
    finally:
        user_block_pass_sgd, user_block_pass_momentum, bpr_sgd_steps, BACKEND = saved
