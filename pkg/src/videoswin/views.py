"""Multi-clip, multi-crop view sampling and score-averaged inference."""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


@dataclass(frozen=True)
class ViewSpec:
    temporal_clips: int = 4
    spatial_crops: int = 3
    clip_len: int = 32
    frame_stride: int = 2
    crop_size: int = 224

    def __post_init__(self):
        for name in ("temporal_clips", "spatial_crops", "clip_len", "frame_stride", "crop_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def num_views(self):
        return self.temporal_clips * self.spatial_crops

    @classmethod
    def parse(cls, text, **kw):
        """``"4x3"`` -> 4 temporal clips x 3 spatial crops."""
        try:
            t, s = (int(v) for v in text.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"views must look like TxS, got {text!r}") from exc
        return cls(temporal_clips=t, spatial_crops=s, **kw)


def temporal_indices(n_frames, spec):
    """Frame indices of each temporal clip.

    Clip starts are spread evenly over the valid range (centered for a single
    clip); videos shorter than one clip span wrap around modulo ``n_frames``.
    """
    if n_frames < 1:
        raise ConfigError("video has no frames")
    span = spec.clip_len * spec.frame_stride
    max_start = max(n_frames - span, 0)
    k = spec.temporal_clips
    if k == 1:
        starts = [max_start // 2]
    else:
        starts = [int(round(i * max_start / (k - 1))) for i in range(k)]
    steps = np.arange(spec.clip_len) * spec.frame_stride
    return [(s + steps) % n_frames for s in starts]


def _resize_axis(a, axis, new):
    old = a.shape[axis]
    if old == new:
        return a
    pos = (np.arange(new) + 0.5) * (old / new) - 0.5
    pos = np.clip(pos, 0, old - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, old - 1)
    frac = (pos - lo).astype(a.dtype)
    shape = [1] * a.ndim
    shape[axis] = new
    frac = frac.reshape(shape)
    return np.take(a, lo, axis=axis) * (1 - frac) + np.take(a, hi, axis=axis) * frac


def resize_shorter(frames, size):
    """Bilinear resize of (N, H, W, C) frames so the shorter side equals ``size``."""
    _, h, w, _ = frames.shape
    if h <= w:
        nh, nw = size, max(size, int(round(w * size / h)))
    else:
        nh, nw = max(size, int(round(h * size / w))), size
    return _resize_axis(_resize_axis(frames, 1, nh), 2, nw)


def crop_offsets(length, crop, k):
    if k == 1:
        return [(length - crop) // 2]
    return [int(round(i * (length - crop) / (k - 1))) for i in range(k)]


def sample_views(video, spec=ViewSpec()):
    """Cut a (N, H, W, 3) video into ``temporal_clips * spatial_crops`` clips.

    Views are ordered clip-major: all crops of clip 0, then clip 1, ...
    Crops are anchored at the start, center and end of the longer spatial
    axis (evenly spaced for other counts).
    """
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[-1] != 3:
        raise ConfigError(f"video must be (N, H, W, 3), got {video.shape}")
    views = []
    for idx in temporal_indices(video.shape[0], spec):
        frames = resize_shorter(video[idx], spec.crop_size)
        _, h, w, _ = frames.shape
        if h >= w:
            offs = [(o, 0) for o in crop_offsets(h, spec.crop_size, spec.spatial_crops)]
        else:
            offs = [(0, o) for o in crop_offsets(w, spec.crop_size, spec.spatial_crops)]
        for oy, ox in offs:
            views.append(np.ascontiguousarray(frames[:, oy:oy + spec.crop_size, ox:ox + spec.crop_size]))
    return views


def _softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def _num_workers(workers):
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("VIDEOSWIN_NUM_THREADS", "1")))


def view_probabilities(model, clips, workers=None):
    """(num_views, num_classes) softmax probabilities, row i for clip i."""
    def run(clip):
        return _softmax(model.forward(Tensor(clip, dtype=model.dtype)).data)

    n = _num_workers(workers)
    if n == 1 or len(clips) == 1:
        probs = [run(c) for c in clips]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            probs = list(pool.map(run, clips))
    return np.stack(probs)


def infer(model, video, spec=ViewSpec(), workers=None):
    """Average per-view class probabilities; returns ``(probs, argmax)``."""
    clips = sample_views(video, spec)
    if tuple(clips[0].shape[:3]) != model.cfg.clip:
        raise ConfigError(f"views of shape {clips[0].shape[:3]} do not match model clip {model.cfg.clip}")
    probs = view_probabilities(model, clips, workers).mean(axis=0)
    return probs, int(np.argmax(probs))
