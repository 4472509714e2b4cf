import numpy as np
import pytest

from videoswin.errors import ConfigError
from videoswin.model import ArchConfig, VideoSwin
from videoswin.views import ViewSpec, infer, resize_shorter, sample_views, temporal_indices, view_probabilities
from videoswin.windowing import WindowSpec


def test_defaults_and_parse():
    v = ViewSpec()
    assert (v.temporal_clips, v.spatial_crops, v.clip_len, v.frame_stride, v.crop_size) == (4, 3, 32, 2, 224)
    assert ViewSpec.parse("1x3").num_views == 3
    for bad in ("4", "ax3", "0x3"):
        with pytest.raises(ConfigError):
            ViewSpec.parse(bad)


def test_four_by_three_gives_twelve_clips():
    video = np.zeros((80, 30, 40, 3), np.float32)
    spec = ViewSpec(4, 3, clip_len=8, frame_stride=2, crop_size=16)
    views = sample_views(video, spec)
    assert len(views) == 12
    assert all(v.shape == (8, 16, 16, 3) for v in views)


def test_exact_length_single_view_indices():
    (idx,) = temporal_indices(64, ViewSpec(1, 1))
    assert list(idx) == list(range(0, 64, 2))


def test_short_video_wraps():
    spec = ViewSpec(3, 1, clip_len=8, frame_stride=2)
    for idx in temporal_indices(5, spec):
        assert len(idx) == 8
        assert list(idx) == [(2 * i) % 5 for i in range(8)]


def test_temporal_starts_evenly_cover_video():
    spec = ViewSpec(4, 1, clip_len=4, frame_stride=2)
    starts = [i[0] for i in temporal_indices(38, spec)]
    assert starts == [0, 10, 20, 30]
    assert max(i[-1] for i in temporal_indices(38, spec)) == 38 - 2  # last clip ends on the final stride step


def test_crops_cover_longer_axis():
    video = np.zeros((4, 20, 60, 3))
    video[..., 0] = np.arange(60)[None, None, :]  # stamp the column index (before resize)
    views = sample_views(video, ViewSpec(1, 3, clip_len=2, frame_stride=1, crop_size=20))
    left, mid, right = (v[0, 0, :, 0] for v in views)
    assert left[0] == 0 and right[-1] == 59
    assert abs(mid.mean() - 29.5) < 1e-9


def test_resize_shorter_side():
    frames = np.random.default_rng(0).normal(size=(2, 30, 45, 3))
    assert resize_shorter(frames, 20).shape == (2, 20, 30, 3)
    assert resize_shorter(frames.transpose(0, 2, 1, 3), 20).shape == (2, 30, 20, 3)
    const = np.full((1, 7, 9, 3), 2.5)
    np.testing.assert_allclose(resize_shorter(const, 14), 2.5)


def test_bad_video_shape():
    with pytest.raises(ConfigError):
        sample_views(np.zeros((4, 10, 10)), ViewSpec())


@pytest.fixture(scope="module")
def tiny_model():
    cfg = ArchConfig(embed_dim=8, depths=(2, 2, 2, 2), window=WindowSpec(2, 2), head_dim=4, num_classes=5, clip=(4, 32, 32))
    return VideoSwin(cfg, seed=1)


SPEC = ViewSpec(4, 3, clip_len=4, frame_stride=2, crop_size=32)


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def test_infer_is_mean_of_single_view_runs(tiny_model):
    video = np.random.default_rng(2).normal(size=(20, 32, 48, 3)).astype(np.float32)
    probs, top = infer(tiny_model, video, SPEC)
    views = sample_views(video, SPEC)
    assert len(views) == 12
    ref = np.mean([softmax(tiny_model(v).data.astype(np.float64)) for v in views], axis=0)
    assert np.array_equal(probs, ref)
    assert abs(probs.sum() - 1) <= 1e-6 and top == int(np.argmax(ref))


def test_identical_views_equal_single_view(tiny_model):
    frame = np.random.default_rng(3).normal(size=(1, 32, 32, 3)).astype(np.float32)
    video = np.repeat(frame, 4, axis=0)
    spec = ViewSpec(4, 3, clip_len=4, frame_stride=1, crop_size=32)
    probs, _ = infer(tiny_model, video, spec)
    single, _ = infer(tiny_model, video, ViewSpec(1, 1, clip_len=4, frame_stride=1, crop_size=32))
    np.testing.assert_allclose(probs, single, atol=1e-12)


def test_parallel_matches_serial_and_is_order_invariant(tiny_model, monkeypatch):
    clips = sample_views(np.random.default_rng(4).normal(size=(16, 32, 40, 3)).astype(np.float32), SPEC)
    serial = view_probabilities(tiny_model, clips, workers=1)
    parallel = view_probabilities(tiny_model, clips, workers=4)
    assert np.array_equal(serial, parallel)
    monkeypatch.setenv("VIDEOSWIN_NUM_THREADS", "3")
    assert np.array_equal(view_probabilities(tiny_model, clips), serial)
    perm = np.random.default_rng(5).permutation(len(clips))
    shuffled = view_probabilities(tiny_model, [clips[i] for i in perm], workers=2)
    np.testing.assert_allclose(shuffled.mean(axis=0), serial.mean(axis=0), atol=1e-15)


def test_infer_rejects_mismatched_crop(tiny_model):
    with pytest.raises(ConfigError):
        infer(tiny_model, np.zeros((8, 40, 40, 3), np.float32), ViewSpec(1, 1, clip_len=4, crop_size=40))
