"""Decode-core selection: compiled extension if available, numpy otherwise.

Set TIVA_KERNELS=numpy to force the fallback (e.g. for parity checks and the
core benchmark); TIVA_KERNELS=compiled raises if the extension is missing.
"""

from __future__ import annotations

import os

from . import numpy_core

_requested = os.environ.get("TIVA_KERNELS", "auto")

if _requested == "numpy":
    _impl = numpy_core
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "TIVA_KERNELS=compiled but tiva.fast._core is not built; "
                "reinstall with a C toolchain available")
        _impl = numpy_core

BACKEND: str = _impl.BACKEND
KVDecoder = _impl.KVDecoder
static_forward = _impl.static_forward

NumpyKVDecoder = numpy_core.KVDecoder
numpy_static_forward = numpy_core.static_forward


def available_backends() -> list[str]:
    out = ["numpy"]
    try:
        from . import _core  # noqa: F401
        out.append("compiled")
    except ImportError:
        pass
    return out


def get_decoder_class(backend: str | None = None):
    if backend in (None, "auto"):
        return KVDecoder
    if backend == "numpy":
        return numpy_core.KVDecoder
    if backend == "compiled":
        from . import _core
        return _core.KVDecoder
    raise ValueError(f"unknown kernel backend {backend!r}")


def limit_blas_threads(n: int = 1):
    """Pin BLAS pools for latency-critical sections.

    On a small shared box, a second BLAS thread getting preempted mid-GEMM
    turns a 15 ms tick into a 60 ms one; real-time sessions run single
    threaded.  Returns a handle whose .restore() undoes the limit (no-op if
    threadpoolctl is unavailable).
    """
    class _Noop:
        def restore(self):
            pass

    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return _Noop()
    return _Limiter(threadpool_limits(limits=n, user_api="blas"))


class _Limiter:
    def __init__(self, ctx):
        self._ctx = ctx

    def restore(self):
        self._ctx.unregister()
