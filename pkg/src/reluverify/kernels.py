"""Backend selection for the hot loops.

The compiled extension ``reluverify._kernels`` is used when it imports;
otherwise the numpy implementations in ``_kernels_py`` are used.  Set
``RELUVERIFY_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

_compiled = None
if os.environ.get("RELUVERIFY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]

backward_pass = _impl.backward_pass
relax_layer = _impl.relax_layer
pivot = _impl.pivot


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(BACKENDS)}")
