"""A small dense-tensor engine with tape-based reverse-mode autodiff.

Values live in row-major numpy arrays of float32 (runtime default) or
float64 (gradient checks and oracles). Operations are recorded on the
innermost active :class:`Tape`; ``tape.backward(loss)`` replays the records
in exact reverse order and accumulates ``.grad`` on every tensor that
requires it.

Example::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_(linear(x, w))
    tape.backward(loss)
"""
import threading

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32
MASK_VALUE = -100.0
LN_EPS = 1e-5

_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class MaskedRowError(ValueError):
    """Raised when a softmax row has no unmasked entry."""


class PropagationError(ArithmeticError):
    """Raised when a non-finite value shows up where finite values are required."""


class Tensor:
    """Dense array plus an optional gradient buffer of the same shape.

    The element type is float32 unless ``dtype`` says otherwise.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        dtype = np.dtype(DEFAULT_DTYPE if dtype is None else dtype)
        if dtype not in _FLOAT_TYPES:
            raise TypeError(f"unsupported element type {dtype}")
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype):
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype, name=self.name)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_local = threading.local()


def _stack():
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


class Tape:
    """Ordered record of executed operations.

    Tapes nest; operations go to the innermost one. A tape belongs to the
    thread that entered it.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        st = _stack()
        assert st and st[-1] is self
        st.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, out, grad=None):
        """Propagate from ``out`` (seeded with ones unless ``grad`` is given)."""
        if grad is None:
            grad = np.ones_like(out.data)
        out.grad = np.asarray(grad, dtype=out.dtype).reshape(out.shape)
        for res, inputs, fn in reversed(self.records):
            if res.grad is None:
                continue
            grads = fn(res.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                g = np.asarray(g, dtype=t.dtype)
                if g.shape != t.shape:
                    g = g.reshape(t.shape)
                t.grad = g.copy() if t.grad is None else t.grad + g
        self.records.clear()


def active_tape():
    st = _stack()
    return st[-1] if st else None


def _result(data, inputs, backward):
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        tape.records.append((out, inputs, backward))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    data = a.data - b.data
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return _result(
        data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def scale(a, c):
    c = float(c)
    return _result(a.data * a.dtype.type(c), (a,), lambda g: (g * c,))


def reshape(a, shape):
    data = a.data.reshape(shape)
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))
    return _result(data, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def roll(a, shifts, axes):
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    data = np.roll(a.data, shifts, axes)
    return _result(data, (a,), lambda g: (np.roll(g, back, axes),))


def pad_end(a, pads):
    """Zero-pad the high end of each axis; ``pads`` has one entry per axis."""
    pads = tuple(int(p) for p in pads)
    if not any(pads):
        return a
    data = np.pad(a.data, [(0, p) for p in pads])
    crop = tuple(slice(0, n) for n in a.shape)
    return _result(data, (a,), lambda g: (g[crop],))


def crop(a, shape):
    """Keep the leading ``shape`` block of ``a`` (inverse of :func:`pad_end`)."""
    shape = tuple(shape)
    if shape == a.shape:
        return a
    idx = tuple(slice(0, n) for n in shape)
    data = np.ascontiguousarray(a.data[idx])

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _result(data, (a,), backward)


def take(a, index, axis=0):
    """Gather along ``axis`` with an integer index array of any shape."""
    index = np.asarray(index, dtype=np.intp)
    data = np.take(a.data, index, axis=axis)
    axis = axis % a.ndim

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        np.add.at(moved, index, gm)
        return (full,)

    return _result(data, (a,), backward)


def concat(ts, axis=-1):
    ts = tuple(ts)
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(data, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def sum_(a, axis=None, keepdims=False):
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes; leading axes must agree exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(data, (a, b), backward)


def linear(x, w, b=None):
    """``x @ w + b`` with ``w`` laid out as (in, out), broadcast over leading axes."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear bias {b.shape} does not match weight {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    data = out.reshape(x.shape[:-1] + (w.shape[1],))
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        grads = [(g2 @ w.data.T).reshape(x.shape), x2.T @ g2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result(data, inputs, backward)


def softmax_lastdim(x, mask=None):
    """Softmax over the last axis with max subtraction.

    ``mask`` is an optional additive array (0 or :data:`MASK_VALUE`) broadcast
    against ``x``; a row where every entry is masked raises
    :class:`MaskedRowError`. Masked probabilities are then set to exactly 0
    (they are below 4e-44 anyway), so no gradient leaks across a mask even
    in 64-bit arithmetic.
    """
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=x.dtype)
        if np.any(np.all(mask <= MASK_VALUE, axis=-1)):
            raise MaskedRowError("fully masked row")
        z = z + mask
    elif np.any(np.all(z <= MASK_VALUE, axis=-1)):
        raise MaskedRowError("fully masked row")
    y = kernels.softmax_fwd(z)
    if mask is not None:
        y = np.where(mask <= MASK_VALUE, 0.0, y).astype(y.dtype, copy=False)
    return _result(y, (x,), lambda g: (kernels.softmax_bwd(y, g),))


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalize the last axis (biased variance) then apply ``gamma``/``beta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm params {gamma.shape}/{beta.shape} do not match input {x.shape}")
    y, xhat, rstd = kernels.layernorm_fwd(x.data, gamma.data, beta.data, eps)

    def backward(g):
        gx, gg, gb = kernels.layernorm_bwd(g, xhat, rstd, gamma.data)
        return gx, gg, gb

    return _result(y, (x, gamma, beta), backward)


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    y = kernels.gelu_fwd(xd)
    return _result(y, (x,), lambda g: (kernels.gelu_bwd(xd, g),))


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of ``logits`` (batch, classes) against integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.data
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"cross_entropy expects (batch, classes) logits, got {z.shape} / {labels.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = np.asarray(-logp[np.arange(n), labels].mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _result(loss, (logits,), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, params, h=1e-6, max_coords=None, rng=None):
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and returns a scalar tensor built from
    ``params`` (float64). The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``. With ``max_coords`` only
    that many randomly chosen coordinates per parameter are probed.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("step h must lie in [1e-6, 1e-4]")
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check needs float64 parameters")
        p.requires_grad = True
        p.grad = None
    rng = rng if rng is not None else np.random.default_rng(0)

    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise DimensionError("grad_check needs a scalar output")
    if not np.all(np.isfinite(out.data)):
        raise PropagationError("non-finite function value")
    tape.backward(out)

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(analytic)):
            raise PropagationError(f"non-finite gradient for {p.name or p.shape}")
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().data.item()
            flat[i] = orig - h
            fm = f().data.item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise PropagationError(f"non-finite value while probing {p.name or p.shape}")
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
