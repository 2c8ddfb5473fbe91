"""Log-Mel front end: 23 Mel bands every 10 ms, stacked to 345 dims at 100 ms."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import SAMPLE_RATE

N_MELS = 23
CONTEXT = 7
SUBSAMPLING = 10
FEAT_DIM = (2 * CONTEXT + 1) * N_MELS
LOG_FLOOR = math.log(1e-10)

_FEAT_MAGIC = b"DCFEAT1\n"


class FeatureError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise FeatureError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelFrames:
    values: np.ndarray  # (T0, n_mels)
    frame_hop: float = 0.010
    frame_len: float = 0.025


@dataclass
class FeatureSequence:
    values: np.ndarray  # (T, 345)
    frame_duration: float = 0.1

    def __len__(self):
        return self.values.shape[0]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = 4000.0) -> np.ndarray:
    """Return the n_mels + 2 corner frequencies (Hz) of the triangular filters.

    Filter ``m`` rises from ``edges[m]`` to its peak at ``edges[m + 1]`` and
    falls back to zero at ``edges[m + 2]``.
    """
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_fft: int, sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS) -> np.ndarray:
    edges = mel_band_edges(n_mels, 0.0, sample_rate / 2)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def num_frames(n_samples: int, win: int, hop: int) -> int:
    return (n_samples - win) // hop + 1


def compute_logmel(
    audio: AudioClip, n_mels: int = N_MELS, win: float = 0.025, hop: float = 0.010
) -> MelFrames:
    if audio.sample_rate != SAMPLE_RATE:
        raise FeatureError(f"unsupported sample rate: {audio.sample_rate}")
    win_len = int(round(win * audio.sample_rate))
    hop_len = int(round(hop * audio.sample_rate))
    x = audio.samples
    if x.size == 0 or x.size < win_len:
        raise FeatureError("audio too short")
    n_fft = 1 << (win_len - 1).bit_length()
    t0 = num_frames(x.size, win_len, hop_len)
    idx = np.arange(win_len)[None, :] + hop_len * np.arange(t0)[:, None]
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win_len) / win_len)
    spec = np.abs(np.fft.rfft(x[idx] * window, n=n_fft, axis=1))
    energies = spec @ mel_filterbank(n_fft, audio.sample_rate, n_mels).T
    return MelFrames(np.log(np.maximum(energies, 1e-10)), hop, win)


def stack_and_subsample(mel: MelFrames, context: int = CONTEXT, factor: int = SUBSAMPLING) -> FeatureSequence:
    values = np.asarray(mel.values)
    if values.ndim != 2 or values.shape[0] == 0:
        raise FeatureError("empty mel input")
    t0 = values.shape[0]
    keep = np.arange(0, t0, factor)
    offsets = np.arange(-context, context + 1)
    src = np.clip(keep[:, None] + offsets[None, :], 0, t0 - 1)
    stacked = values[src].reshape(keep.size, -1)
    return FeatureSequence(stacked, frame_duration=mel.frame_hop * factor)


def extract_features(audio: AudioClip) -> FeatureSequence:
    """Full front end; values are float32, the precision the model and cache files use."""
    feats = stack_and_subsample(compute_logmel(audio))
    return FeatureSequence(feats.values.astype(np.float32), feats.frame_duration)


def read_wav(path) -> AudioClip:
    """Read a mono WAV file, scaling integer PCM to [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        raise FeatureError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise FeatureError(f"{path}: unsupported sample type {data.dtype}")
    return AudioClip(samples, int(rate))


def write_wav(path, audio: AudioClip) -> None:
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, audio.sample_rate, pcm)


def write_features(path, feats: FeatureSequence) -> None:
    values = np.ascontiguousarray(feats.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_FEAT_MAGIC)
        f.write(struct.pack("<QQ", *values.shape))
        f.write(values.tobytes())


def read_features(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if raw[: len(_FEAT_MAGIC)] != _FEAT_MAGIC:
        raise FeatureError(f"{path}: bad feature file magic")
    head = len(_FEAT_MAGIC)
    if len(raw) < head + 16:
        raise FeatureError(f"{path}: truncated header")
    t, d = struct.unpack_from("<QQ", raw, head)
    body = raw[head + 16 :]
    if len(body) != t * d * 4:
        raise FeatureError(f"{path}: expected {t * d * 4} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float32)
    return FeatureSequence(values)
