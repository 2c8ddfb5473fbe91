"""Annotations and speaker-activity data on the shared 100 ms frame grid.

Holds the RTTM reader/writer, conversions between segment lists and binary
label matrices, the DCSAP01 logit file format and the corruptible oracle
that stands in for an initial diarization system.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import FRAME_DURATION

_SAP_MAGIC = b"DCSAP01\n"


class RttmError(ValueError):
    pass


class SapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    recording_id: str
    onset: float
    duration: float
    speaker: str

    def __post_init__(self):
        if not math.isfinite(self.onset) or not math.isfinite(self.duration):
            raise ValueError(f"non-finite segment times: {self}")
        if self.duration <= 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


@dataclass
class LabelMatrix:
    values: np.ndarray  # (T, C) of {0, 1}
    speakers: list[str] = field(default_factory=lambda: ["spk0", "spk1"])
    frame_duration: float = FRAME_DURATION

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {values.shape}")
        if values.size and not np.isin(values, (0, 1)).all():
            raise ValueError("labels must be binary")
        self.values = values.astype(np.int8)
        self.speakers = list(self.speakers)
        if len(self.speakers) != values.shape[1]:
            raise ValueError("speaker list does not match label columns")

    def __len__(self):
        return self.values.shape[0]


@dataclass
class SapSequence:
    """Per-frame, per-speaker logits of an initial diarization system.

    Values are kept in float64.  DCSAP01 files store float32, so a file
    round-trip is bit-exact for float32-representable values (everything read
    from disk, and oracle output generated without a global bias).
    """

    values: np.ndarray  # (T, C) logits
    speakers: list[str] = field(default_factory=lambda: ["spk0", "spk1"])
    frame_duration: float = FRAME_DURATION

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"SAP values must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("SAP values must be finite")
        self.values = values
        self.speakers = list(self.speakers)
        if len(self.speakers) != values.shape[1]:
            raise ValueError("speaker list does not match SAP columns")

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class CorruptionConfig:
    flip_prob: float = 0.08
    logit_noise_std: float = 1.0
    logit_scale: float = 4.0
    global_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.logit_scale <= 0:
            raise ValueError(f"logit_scale must be positive, got {self.logit_scale}")
        if self.logit_noise_std < 0:
            raise ValueError(f"logit_noise_std must be non-negative, got {self.logit_noise_std}")


# ---------------------------------------------------------------------------
# RTTM


def parse_rttm(text: str) -> list[Segment]:
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise RttmError(f"line {lineno}: expected at least 8 fields, got {len(fields)}")
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError:
            raise RttmError(f"line {lineno}: non-numeric onset/duration") from None
        try:
            segments.append(Segment(fields[1], onset, duration, fields[7]))
        except ValueError as e:
            raise RttmError(f"line {lineno}: {e}") from None
    return segments


def write_rttm(segments: Sequence[Segment]) -> str:
    lines = []
    for seg in segments:
        if seg.duration < 0:
            raise RttmError(f"negative duration in {seg}")
        lines.append(
            f"SPEAKER {seg.recording_id} 1 {seg.onset:.2f} {seg.duration:.2f} "
            f"<NA> <NA> {seg.speaker} <NA> <NA>"
        )
    return "".join(line + "\n" for line in lines)


def read_rttm(path) -> list[Segment]:
    return parse_rttm(Path(path).read_text(encoding="utf-8"))


def group_by_recording(segments: Sequence[Segment]) -> dict[str, list[Segment]]:
    out: dict[str, list[Segment]] = {}
    for seg in segments:
        out.setdefault(seg.recording_id, []).append(seg)
    return out


# ---------------------------------------------------------------------------
# frame grid


def segments_to_labels(
    segments: Sequence[Segment],
    speakers: Sequence[str],
    num_frames: int,
    frame_duration: float = FRAME_DURATION,
) -> LabelMatrix:
    """Rasterize segments: frame t is active iff its midpoint lies in [onset, offset)."""
    index = {spk: c for c, spk in enumerate(speakers)}
    values = np.zeros((num_frames, len(speakers)), dtype=np.int8)
    mid = (np.arange(num_frames) + 0.5) * frame_duration
    for seg in segments:
        if seg.speaker not in index:
            raise ValueError(f"unknown speaker {seg.speaker!r}")
        values[(mid >= seg.onset) & (mid < seg.offset), index[seg.speaker]] = 1
    return LabelMatrix(values, list(speakers), frame_duration)


def labels_to_segments(labels: LabelMatrix, recording_id: str = "rec") -> list[Segment]:
    fd = labels.frame_duration
    segments = []
    for c, spk in enumerate(labels.speakers):
        col = np.concatenate([[0], labels.values[:, c].astype(np.int8), [0]])
        edges = np.flatnonzero(np.diff(col))
        for start, stop in zip(edges[::2], edges[1::2]):
            segments.append(
                Segment(recording_id, round(start * fd, 6), round((stop - start) * fd, 6), spk)
            )
    segments.sort(key=lambda s: (s.onset, s.speaker))
    return segments


def threshold(sap: SapSequence, thr: float = 0.0) -> LabelMatrix:
    """Binary decisions ``logit > thr`` (logit 0 is probability 0.5)."""
    return LabelMatrix((sap.values > thr).astype(np.int8), sap.speakers, sap.frame_duration)


# ---------------------------------------------------------------------------
# SAP files


def write_sap(path, sap: SapSequence) -> None:
    t, c = sap.values.shape
    parts = [_SAP_MAGIC, struct.pack("<QQ", t, c)]
    for name in sap.speakers:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(sap.values, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_sap(path) -> SapSequence:
    raw = Path(path).read_bytes()
    if raw[: len(_SAP_MAGIC)] != _SAP_MAGIC:
        raise SapFormatError(f"{path}: bad magic")
    pos = len(_SAP_MAGIC)
    try:
        t, c = struct.unpack_from("<QQ", raw, pos)
        pos += 16
        speakers = []
        for _ in range(c):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            if pos + n > len(raw):
                raise SapFormatError(f"{path}: truncated speaker name")
            speakers.append(raw[pos : pos + n].decode("utf-8"))
            pos += n
    except struct.error:
        raise SapFormatError(f"{path}: truncated header") from None
    body = raw[pos:]
    if len(body) != t * c * 4:
        raise SapFormatError(f"{path}: expected {t * c * 4} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f4").reshape(t, c).astype(np.float64)
    return SapSequence(values, speakers)


# ---------------------------------------------------------------------------
# initial-system emulation


def corrupt_oracle(labels: LabelMatrix, cfg: CorruptionConfig) -> SapSequence:
    """Turn ground truth into imperfect logits.

    Every cell starts at +logit_scale (speech) or -logit_scale (silence), is
    sign-flipped with probability ``flip_prob``, receives Gaussian noise and
    finally the global bias.
    """
    rng = np.random.default_rng(cfg.seed)
    shape = labels.values.shape
    base = np.where(labels.values == 1, cfg.logit_scale, -cfg.logit_scale)
    flips = rng.random(shape) < cfg.flip_prob
    noise = rng.standard_normal(shape) * cfg.logit_noise_std
    values = np.where(flips, -base, base) + noise
    # quantize to file precision before the bias so the bias stays exactly additive
    values = values.astype(np.float32).astype(np.float64) + cfg.global_bias
    return SapSequence(values, labels.speakers, labels.frame_duration)
