import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diacorrect.features import (
    FEAT_DIM,
    LOG_FLOOR,
    AudioClip,
    FeatureError,
    MelFrames,
    compute_logmel,
    extract_features,
    mel_filterbank,
    read_features,
    read_wav,
    stack_and_subsample,
    write_features,
    write_wav,
)


def test_silence_hits_log_floor():
    mel = compute_logmel(AudioClip(np.zeros(8000)))
    assert mel.values.shape == (98, 23)
    assert np.all(mel.values == LOG_FLOOR)


def test_frame_count_two_seconds():
    rng = np.random.default_rng(0)
    mel = compute_logmel(AudioClip(0.1 * rng.standard_normal(16000)))
    assert mel.values.shape[0] == (16000 - 200) // 80 + 1 == 198


def _htk_centers(n=23, fmax=4000.0):
    # independent restatement of the HTK Mel scale
    top = 1127.0 * math.log(1 + fmax / 700.0)
    return [700.0 * (math.exp(top * (m + 1) / (n + 1) / 1127.0) - 1) for m in range(n)]


def test_pure_tone_peaks_in_nearest_band():
    t = np.arange(16000) / 8000
    mel = compute_logmel(AudioClip(0.5 * np.sin(2 * np.pi * 1000 * t)))
    centers = _htk_centers()
    expected = int(np.argmin([abs(c - 1000) for c in centers]))
    assert np.all(mel.values.argmax(axis=1) == expected)


def test_fft_matches_direct_dft():
    rng = np.random.default_rng(1)
    frame = rng.standard_normal(200)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(200) / 200)
    n = 256
    k = np.arange(n // 2 + 1)[:, None]
    direct = np.abs((np.exp(-2j * np.pi * k * np.arange(200)[None, :] / n) * (frame * window)).sum(axis=1))
    fb = mel_filterbank(n)
    expected = np.log(np.maximum(fb @ direct, 1e-10))
    got = compute_logmel(AudioClip(frame)).values[0]
    np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-10)


def test_filterbank_is_triangular_and_bounded():
    fb = mel_filterbank(256)
    assert fb.shape == (23, 129)
    assert fb.min() >= 0 and fb.max() <= 1 + 1e-12
    assert np.all(fb.sum(axis=1) > 0)


@pytest.mark.parametrize("n, msg", [(0, "audio too short"), (199, "audio too short")])
def test_short_audio_rejected(n, msg):
    with pytest.raises(FeatureError, match=msg):
        compute_logmel(AudioClip(np.zeros(n)))


def test_wrong_sample_rate_rejected():
    with pytest.raises(FeatureError, match="unsupported sample rate"):
        compute_logmel(AudioClip(np.zeros(16000), 16000))


def test_stack_single_frame_tiles():
    frame = np.arange(23, dtype=float)
    out = stack_and_subsample(MelFrames(frame[None, :])).values
    assert out.shape == (1, 345)
    np.testing.assert_array_equal(out[0], np.tile(frame, 15))


def test_stack_shape_and_center_slice():
    rng = np.random.default_rng(2)
    mel = MelFrames(rng.standard_normal((100, 23)))
    out = stack_and_subsample(mel)
    assert out.values.shape == (10, 345)
    assert out.frame_duration == pytest.approx(0.1)
    for t in range(10):
        np.testing.assert_array_equal(out.values[t, 7 * 23 : 8 * 23], mel.values[10 * t])


def test_stack_edge_replication():
    mel = MelFrames(np.arange(30, dtype=float)[:, None] * np.ones((1, 23)))
    out = stack_and_subsample(mel).values
    # frame 0 context t-7..t+7 -> rows 0,0,...,0,1,...,7
    np.testing.assert_array_equal(out[0].reshape(15, 23)[:, 0], [0] * 8 + list(range(1, 8)))
    # frame 20 context 13..27
    np.testing.assert_array_equal(out[2].reshape(15, 23)[:, 0], list(range(13, 28)))


def test_stack_empty_rejected():
    with pytest.raises(FeatureError):
        stack_and_subsample(MelFrames(np.zeros((0, 23))))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=250))
def test_stacked_dimensions(t0):
    out = stack_and_subsample(MelFrames(np.random.default_rng(t0).standard_normal((t0, 23))))
    assert out.values.shape == (math.ceil(t0 / 10), FEAT_DIM)


def test_features_deterministic_and_floored():
    rng = np.random.default_rng(3)
    x = 0.2 * rng.standard_normal(24000)
    x[5000:9000] = 0.0
    a, b = extract_features(AudioClip(x)), extract_features(AudioClip(x.copy()))
    assert a.values.tobytes() == b.values.tobytes()
    assert a.values.min() >= LOG_FLOOR


def test_feature_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    feats = extract_features(AudioClip(0.1 * rng.standard_normal(8000)))
    path = tmp_path / "x.feat"
    write_features(path, feats)
    raw = path.read_bytes()
    assert raw[:8] == b"DCFEAT1\n"
    assert int.from_bytes(raw[8:16], "little") == len(feats)
    assert int.from_bytes(raw[16:24], "little") == 345
    back = read_features(path)
    np.testing.assert_array_equal(back.values, feats.values.astype(np.float32))


def test_feature_cache_bad_magic(tmp_path):
    path = tmp_path / "bad.feat"
    path.write_bytes(b"NOTFEAT\n" + bytes(16))
    with pytest.raises(FeatureError, match="magic"):
        read_features(path)


def test_wav_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(5)
    clip = AudioClip(np.clip(0.3 * rng.standard_normal(4000), -1, 1))
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 8000
    np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32768)


def test_wav_float32(tmp_path):
    from scipy.io import wavfile

    x = np.linspace(-0.5, 0.5, 800, dtype=np.float32)
    wavfile.write(tmp_path / "f.wav", 8000, x)
    np.testing.assert_array_equal(read_wav(tmp_path / "f.wav").samples, x.astype(np.float64))
