"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set ``LRDKIT_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
the kernel-agreement tests).
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("LRDKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

jacobi_orthogonalize = _impl.jacobi_orthogonalize
im2col = _impl.im2col
col2im = _impl.col2im

python = _pykernels


def compiled():
    """Return the compiled kernel module, or None when it is not built."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels
