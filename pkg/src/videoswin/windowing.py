"""3D window geometry: partitioning, cyclic shifts, shift masks and
relative-position index tables.

Token grids are laid out as ``(..., T, H, W, C)``; the three axes before the
channel axis are (time, height, width). Windows are ``p x m x m`` tokens and
tokens inside a window are ordered (t, h, w) row-major.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import ceil

import numpy as np

from .tensor import MASK_VALUE, crop, pad_end, permute, reshape, roll

PAD_REGION = 27


@dataclass(frozen=True)
class WindowSpec:
    p: int = 8
    m: int = 7

    def __post_init__(self):
        if self.p < 1 or self.m < 1:
            raise ValueError(f"window extents must be >= 1, got p={self.p}, m={self.m}")

    @property
    def size(self):
        return (self.p, self.m, self.m)

    @property
    def volume(self):
        return self.p * self.m * self.m

    @property
    def table_size(self):
        """Rows of the relative-bias table, (2p-1)(2m-1)^2."""
        return (2 * self.p - 1) * (2 * self.m - 1) ** 2

    @classmethod
    def parse(cls, text):
        """Parse ``"8x7x7"``; height and width must agree."""
        parts = [int(v) for v in text.lower().split("x")]
        if len(parts) != 3 or parts[1] != parts[2]:
            raise ValueError(f"window must look like PxMxM, got {text!r}")
        return cls(parts[0], parts[1])

    def __str__(self):
        return f"{self.p}x{self.m}x{self.m}"


@dataclass(frozen=True)
class ShiftSpec:
    t: int = 0
    h: int = 0
    w: int = 0

    def __post_init__(self):
        if min(self.t, self.h, self.w) < 0:
            raise ValueError("shift offsets must be non-negative")

    @classmethod
    def half(cls, spec):
        """Default shifted configuration, half a window on every axis."""
        return cls(spec.p // 2, spec.m // 2, spec.m // 2)

    def as_tuple(self):
        return (self.t, self.h, self.w)

    def check(self, spec):
        for s, w in zip(self.as_tuple(), spec.size):
            if s >= w:
                raise ValueError(f"shift {self.as_tuple()} must be smaller than window {spec.size}")
        return self

    @property
    def is_zero(self):
        return not any(self.as_tuple())


def _size(window):
    return window.size if isinstance(window, WindowSpec) else tuple(int(v) for v in window)


def _offsets(offsets):
    if offsets is None:
        return (0, 0, 0)
    return offsets.as_tuple() if isinstance(offsets, ShiftSpec) else tuple(int(v) for v in offsets)


def resolve(dims, spec, offsets=None):
    """Effective window and shift for a token grid.

    Where a window covers a whole axis it is shrunk to that axis and the shift
    on it is dropped; a single window needs no shift.
    """
    size = _size(spec)
    shift = _offsets(offsets)
    window = tuple(min(w, d) for w, d in zip(size, dims))
    shift = tuple(0 if w >= d else s for w, d, s in zip(size, dims, shift))
    return window, shift


def padded_dims(dims, window):
    return tuple(ceil(d / w) * w for d, w in zip(dims, _size(window)))


def num_windows(dims, window):
    return int(np.prod([ceil(d / w) for d, w in zip(dims, _size(window))]))


def _as_batched(x):
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise ValueError(f"expected (T, H, W, C) or (B, T, H, W, C) tokens, got {x.shape}")
    return x, False


def window_partition(x, window):
    """Split a token grid into windows of shape (num_windows, p*m*m, C).

    Axes that do not divide evenly are zero-padded at the high end. A batch
    axis, when present, is the slowest-varying part of the window index.
    """
    x, _ = _as_batched(x)
    b, *dims, c = x.shape
    wt, wh, ww = _size(window)
    pt, ph, pw = padded_dims(dims, (wt, wh, ww))
    x = pad_end(x, (0, pt - dims[0], ph - dims[1], pw - dims[2], 0))
    x = reshape(x, (b, pt // wt, wt, ph // wh, wh, pw // ww, ww, c))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    return reshape(x, (-1, wt * wh * ww, c))


def window_reverse(wins, window, dims, batch=None):
    """Inverse of :func:`window_partition`; padding is stripped.

    With ``batch=None`` the result is an unbatched (T, H, W, C) grid.
    """
    wt, wh, ww = _size(window)
    dims = tuple(dims)
    pt, ph, pw = padded_dims(dims, (wt, wh, ww))
    nw = (pt // wt) * (ph // wh) * (pw // ww)
    b = 1 if batch is None else batch
    c = wins.shape[-1]
    if wins.ndim != 3 or wins.shape[0] != b * nw or wins.shape[1] != wt * wh * ww:
        raise ValueError(
            f"{tuple(wins.shape)} windows are inconsistent with dims {dims}, window {(wt, wh, ww)}, batch {b}"
        )
    x = reshape(wins, (b, pt // wt, ph // wh, pw // ww, wt, wh, ww, c))
    x = permute(x, (0, 1, 4, 2, 5, 3, 6, 7))
    x = reshape(x, (b, pt, ph, pw, c))
    x = crop(x, (b,) + dims + (c,))
    if batch is None:
        x = reshape(x, dims + (c,))
    return x


def cyclic_shift(x, offsets, direction="forward"):
    """Roll the (t, h, w) axes by -offsets (forward) or +offsets (inverse)."""
    off = _offsets(offsets)
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    if not any(off):
        return x
    sign = -1 if direction == "forward" else 1
    axes = tuple(range(x.ndim - 4, x.ndim - 1))
    return roll(x, tuple(sign * s for s in off), axes)


def _axis_ids(length, real, window, shift):
    x = np.arange(length)
    ids = np.zeros(length, dtype=np.int64)
    if shift:
        ids[length - window:] = 1
        ids[length - shift:] = 2
    pad = ((x + shift) % length) >= real
    return ids, pad


@lru_cache(maxsize=256)
def _region_ids(dims, window, shift):
    pdims = padded_dims(dims, window)
    it, pt = _axis_ids(pdims[0], dims[0], window[0], shift[0])
    ih, ph = _axis_ids(pdims[1], dims[1], window[1], shift[1])
    iw, pw = _axis_ids(pdims[2], dims[2], window[2], shift[2])
    ids = (it[:, None, None] * 3 + ih[None, :, None]) * 3 + iw[None, None, :]
    pad = pt[:, None, None] | ph[None, :, None] | pw[None, None, :]
    ids = np.where(pad, PAD_REGION, ids)
    ids.setflags(write=False)
    return ids


def region_ids(dims, window, offsets=None):
    """Region id of every token of the padded grid, in the shifted frame.

    Each shifted axis splits into three intervals ``[0, L-w)``, ``[L-w, L-s)``
    and ``[L-s, L)``; ids combine the three axis ids positionally. Padding
    tokens all share :data:`PAD_REGION`.
    """
    return _region_ids(tuple(dims), _size(window), _offsets(offsets))


@lru_cache(maxsize=256)
def _shift_mask(dims, window, shift):
    ids = _region_ids(dims, window, shift)
    pt, ph, pw = ids.shape
    wt, wh, ww = window
    w = ids.reshape(pt // wt, wt, ph // wh, wh, pw // ww, ww).transpose(0, 2, 4, 1, 3, 5)
    w = w.reshape(-1, wt * wh * ww)
    mask = np.where(w[:, :, None] == w[:, None, :], 0.0, MASK_VALUE)
    mask.setflags(write=False)
    return mask


def shift_attention_mask(dims, window, offsets=None):
    """Additive (num_windows, n, n) mask: 0 within a region, -100 across regions."""
    return _shift_mask(tuple(dims), _size(window), _offsets(offsets))


def needs_mask(dims, window, offsets=None):
    """True when shifting or padding makes the region mask non-trivial."""
    return any(_offsets(offsets)) or padded_dims(dims, window) != tuple(dims)


@lru_cache(maxsize=64)
def _relpos_index(p, m, window):
    wt, wh, ww = window
    coords = np.stack(np.meshgrid(np.arange(wt), np.arange(wh), np.arange(ww), indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    span = 2 * m - 1
    idx = (rel[0] + p - 1) * span * span + (rel[1] + m - 1) * span + (rel[2] + m - 1)
    idx.setflags(write=False)
    return idx


def relative_position_index(spec, window=None):
    """(n, n) table of rows into the bias table for every token pair.

    The table belongs to ``spec``; ``window`` (defaults to ``spec.size``) is
    the effective window actually partitioned, which may be smaller than
    ``spec`` when the grid is.
    """
    window = spec.size if window is None else _size(window)
    if any(w > s for w, s in zip(window, spec.size)):
        raise ValueError(f"window {window} exceeds bias table extent {spec.size}")
    return _relpos_index(spec.p, spec.m, window)
