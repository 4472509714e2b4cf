"""Pure-numpy versions of the row kernels.

Same signatures and semantics as the compiled module; used when the
extension is not built or when ``VIDEOSWIN_PURE_PYTHON=1``.
"""
import math

import numpy as np
from scipy.special import erf

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax_fwd(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gy):
    return y * (gy - (y * gy).sum(axis=1, keepdims=True))


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    d = x - mean
    var = (d * d).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = d * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0].astype(x.dtype)


def layernorm_bwd(gy, xhat, rstd, gamma):
    g = gy * gamma
    a = g.mean(axis=1, keepdims=True)
    b = (g * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (g - a - xhat * b)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * np.sqrt(0.5)))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * np.sqrt(0.5)))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)
