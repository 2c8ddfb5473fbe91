"""Toy two-speaker conversation simulator.

Each speaker is a band-limited noise "voice" with its own pass band and a
slow syllabic amplitude envelope.  Turns alternate between the speakers and
are separated either by a pause or by an overlap, with frequencies chosen so
the long-run silence / single-speaker / overlap proportions approach the
targets in :class:`ConversationStats`.  All times are snapped to the 100 ms
label grid so the returned labels mark rendered speech exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import FRAME_DURATION, SAMPLE_RATE
from .corpus import LabelMatrix, Segment, segments_to_labels
from .features import AudioClip

SPEAKERS = ["spk0", "spk1"]
SPEAKER_BANDS = ((150.0, 1300.0), (1700.0, 3600.0))

_FRAME_SAMPLES = int(round(FRAME_DURATION * SAMPLE_RATE))


@dataclass(frozen=True)
class ConversationStats:
    silence: float = 0.128
    overlap: float = 0.0837
    mean_turn: float = 3.0
    min_turn: float = 0.5
    overlap_prob: float = 0.5
    noise_floor: float = 1e-3


def _turn_budget(stats: ConversationStats) -> tuple[float, float]:
    # Per-turn timeline length L obeys L = turn - overlap*L + silence*L.
    length = stats.mean_turn / (1.0 - stats.silence + stats.overlap)
    mean_pause = stats.silence * length / (1.0 - stats.overlap_prob)
    mean_overlap = stats.overlap * length / stats.overlap_prob
    return mean_pause, mean_overlap


def _frames(rng: np.random.Generator, mean_seconds: float, minimum: int = 1) -> int:
    return max(minimum, int(round(rng.exponential(mean_seconds) / FRAME_DURATION)))


def sample_turns(
    rng: np.random.Generator, num_frames: int, stats: ConversationStats
) -> list[tuple[int, int, int]]:
    """Draw alternating turns as (speaker index, start frame, end frame)."""
    mean_pause, mean_overlap = _turn_budget(stats)
    min_turn = int(round(stats.min_turn / FRAME_DURATION))
    extra = stats.mean_turn - stats.min_turn
    turns: list[tuple[int, int, int]] = []
    spk = int(rng.integers(2))
    start = _frames(rng, mean_pause, minimum=0)
    length = min_turn + _frames(rng, extra, minimum=0)
    while start < num_frames:
        end = start + length
        turns.append((spk, start, min(end, num_frames)))
        next_len = min_turn + _frames(rng, extra, minimum=0)
        if rng.random() < stats.overlap_prob:
            prev_end = turns[-2][2] if len(turns) > 1 else 0
            # leave one single-speaker frame on each side of the overlap
            limit = min(length, next_len, end - prev_end) - 1
            start = end - min(_frames(rng, mean_overlap), max(limit, 0))
        else:
            start = end + _frames(rng, mean_pause)
        spk = 1 - spk
        length = next_len
    return turns


def render_voice(
    rng: np.random.Generator, n_samples: int, band: tuple[float, float], sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    """Band-limited Gaussian noise with a 3-6 Hz amplitude envelope."""
    noise = rng.standard_normal(n_samples)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    voice = np.fft.irfft(spec, n=n_samples)
    voice /= np.sqrt(np.mean(voice**2)) + 1e-12
    t = np.arange(n_samples) / sample_rate
    rate = rng.uniform(3.0, 6.0)
    envelope = 0.65 + 0.35 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    return voice * envelope


def simulate_conversation(
    seed: int,
    target_duration: float = 60.0,
    stats: ConversationStats = ConversationStats(),
    recording_id: str = "sim",
) -> tuple[AudioClip, LabelMatrix]:
    if target_duration < 10.0:
        raise ValueError(f"target_duration must be at least 10 s, got {target_duration}")
    rng = np.random.default_rng(seed)
    num_frames = int(round(target_duration / FRAME_DURATION))
    turns = sample_turns(rng, num_frames, stats)

    n_samples = num_frames * _FRAME_SAMPLES
    samples = stats.noise_floor * rng.standard_normal(n_samples)
    gains = rng.uniform(0.08, 0.15, size=2)
    segments = []
    for spk, start, end in turns:
        a, b = start * _FRAME_SAMPLES, end * _FRAME_SAMPLES
        samples[a:b] += gains[spk] * render_voice(rng, b - a, SPEAKER_BANDS[spk])
        segments.append(
            Segment(recording_id, start * FRAME_DURATION, (end - start) * FRAME_DURATION, SPEAKERS[spk])
        )
    labels = segments_to_labels(segments, SPEAKERS, num_frames)
    return AudioClip(np.clip(samples, -1.0, 1.0), SAMPLE_RATE), labels


def activity_fractions(labels: LabelMatrix) -> tuple[float, float, float]:
    """Return the (silence, single-speaker, overlap) fractions of frames."""
    count = labels.values.sum(axis=1)
    n = max(len(count), 1)
    return float(np.sum(count == 0) / n), float(np.sum(count == 1) / n), float(np.sum(count >= 2) / n)


def simulate_example(seed: int, duration: float, corruption, stats: ConversationStats = ConversationStats()):
    """Simulate one recording and return (features, corrupted SAP, labels).

    ``corruption`` is a :class:`~diacorrect.corpus.CorruptionConfig`; its seed
    is offset by ``seed`` so every recording gets independent errors.
    """
    from dataclasses import replace

    from .corpus import corrupt_oracle
    from .features import extract_features

    audio, labels = simulate_conversation(seed, duration, stats)
    feats = extract_features(audio)
    sap = corrupt_oracle(labels, replace(corruption, seed=corruption.seed * 1_000_003 + seed))
    return feats, sap, labels
