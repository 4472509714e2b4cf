"""Row kernels with a compiled backend and a numpy fallback.

The compiled module is picked at import time when it is importable and
``VIDEOSWIN_PURE_PYTHON`` is unset (or ``0``). ``BACKEND`` names the one in
use. All entry points take arrays of any rank and treat the last axis as
the row.

With the extension present, softmax forward still runs through numpy:
its vectorized ``exp`` beats the scalar C loop (see
``benchmarks/bench_kernels.py``). The other five kernels are compiled.
"""
import os
from types import SimpleNamespace

import numpy as np

from . import _pykernels

python_backend = _pykernels

if os.environ.get("VIDEOSWIN_PURE_PYTHON", "0") not in ("", "0"):
    compiled_backend = None
else:
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None


def _select(compiled):
    names = ("softmax_fwd", "softmax_bwd", "layernorm_fwd", "layernorm_bwd", "gelu_fwd", "gelu_bwd")
    chosen = {n: getattr(compiled, n) for n in names}
    chosen["softmax_fwd"] = python_backend.softmax_fwd
    return SimpleNamespace(**chosen)


_impl = _select(compiled_backend) if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"


def _rows(a):
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


def softmax_fwd(x, impl=None):
    impl = impl or _impl
    return impl.softmax_fwd(_rows(x)).reshape(x.shape)


def softmax_bwd(y, gy, impl=None):
    impl = impl or _impl
    return impl.softmax_bwd(_rows(y), _rows(gy.astype(y.dtype, copy=False))).reshape(y.shape)


def layernorm_fwd(x, gamma, beta, eps, impl=None):
    impl = impl or _impl
    dt = x.dtype
    y, xhat, rstd = impl.layernorm_fwd(
        _rows(x), np.ascontiguousarray(gamma, dtype=dt), np.ascontiguousarray(beta, dtype=dt), float(eps)
    )
    return y.reshape(x.shape), xhat.reshape(x.shape), rstd.reshape(x.shape[:-1])


def layernorm_bwd(gy, xhat, rstd, gamma, impl=None):
    impl = impl or _impl
    dt = xhat.dtype
    gx, gg, gb = impl.layernorm_bwd(
        _rows(gy.astype(dt, copy=False)),
        _rows(xhat),
        np.ascontiguousarray(rstd, dtype=dt).reshape(-1),
        np.ascontiguousarray(gamma, dtype=dt),
    )
    return gx.reshape(xhat.shape), gg, gb


def gelu_fwd(x, impl=None):
    impl = impl or _impl
    return impl.gelu_fwd(_rows(x)).reshape(x.shape)


def gelu_bwd(x, gy, impl=None):
    impl = impl or _impl
    return impl.gelu_bwd(_rows(x), _rows(gy.astype(x.dtype, copy=False))).reshape(x.shape)
