"""Frame-level diarization error rate with collars, plus post-processing."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import LabelMatrix, Segment, SapSequence, labels_to_segments, threshold


@dataclass(frozen=True)
class ScoringConfig:
    collar: float = 0.0
    median_frames: int = 1
    threshold_logit: float = 0.0
    scoring_resolution: float = 0.01

    def __post_init__(self):
        if self.collar < 0:
            raise ValueError(f"collar must be non-negative, got {self.collar}")
        if self.median_frames < 1 or self.median_frames % 2 == 0:
            raise ValueError(f"median_frames must be a positive odd integer, got {self.median_frames}")
        if self.scoring_resolution <= 0:
            raise ValueError("scoring_resolution must be positive")


CALLHOME = ScoringConfig(collar=0.25, median_frames=11)
DIHARD = ScoringConfig(collar=0.0, median_frames=1)


@dataclass(frozen=True)
class DerBreakdown:
    der: float
    miss: float
    fa: float
    conf: float
    scored_speech: float
    scored_time: float
    miss_time: float = 0.0
    fa_time: float = 0.0
    conf_time: float = 0.0

    @classmethod
    def from_times(cls, miss_t, fa_t, conf_t, speech_t, scored_t) -> "DerBreakdown":
        def pct(x):
            if speech_t > 0:
                return 100.0 * x / speech_t
            return 0.0 if x == 0 else math.inf

        miss, fa, conf = pct(miss_t), pct(fa_t), pct(conf_t)
        return cls(miss + fa + conf, miss, fa, conf, speech_t, scored_t, miss_t, fa_t, conf_t)


def combine(parts: Iterable[DerBreakdown]) -> DerBreakdown:
    """Corpus-level DER: pool error and reference time over recordings."""
    parts = list(parts)
    return DerBreakdown.from_times(
        sum(p.miss_time for p in parts),
        sum(p.fa_time for p in parts),
        sum(p.conf_time for p in parts),
        sum(p.scored_speech for p in parts),
        sum(p.scored_time for p in parts),
    )


# ---------------------------------------------------------------------------
# post-processing


def median_filter(labels: LabelMatrix, width: int) -> LabelMatrix:
    """Majority vote over a centred window of ``width`` frames, per speaker.

    Near the edges the window shrinks to the available frames; an exact tie
    (only possible with a shrunken, even-sized window) keeps the original
    value.
    """
    if width < 1 or width % 2 == 0:
        raise ValueError(f"median filter width must be odd, got {width}")
    values = labels.values
    t = values.shape[0]
    if width == 1 or t == 0:
        return LabelMatrix(values.copy(), labels.speakers, labels.frame_duration)
    half = width // 2
    csum = np.vstack([np.zeros((1, values.shape[1]), dtype=np.int64), np.cumsum(values, axis=0, dtype=np.int64)])
    lo = np.clip(np.arange(t) - half, 0, t)
    hi = np.clip(np.arange(t) + half + 1, 0, t)
    ones = csum[hi] - csum[lo]
    size = (hi - lo)[:, None]
    out = np.where(2 * ones > size, 1, np.where(2 * ones < size, 0, values))
    return LabelMatrix(out.astype(np.int8), labels.speakers, labels.frame_duration)


def decide(sap: SapSequence, cfg: ScoringConfig) -> LabelMatrix:
    """Threshold logits and apply the configured median filter."""
    return median_filter(threshold(sap, cfg.threshold_logit), cfg.median_frames)


# ---------------------------------------------------------------------------
# scoring


def _speakers(segments: Sequence[Segment]) -> list[str]:
    return sorted({s.speaker for s in segments})


def rasterize(segments: Sequence[Segment], speakers: Sequence[str], n: int, res: float) -> np.ndarray:
    """Boolean (n, len(speakers)) activity at ``res`` resolution, by frame midpoint."""
    index = {spk: c for c, spk in enumerate(speakers)}
    act = np.zeros((n, len(speakers)), dtype=bool)
    mid = (np.arange(n) + 0.5) * res
    for seg in segments:
        lo = np.searchsorted(mid, seg.onset, side="left")
        hi = np.searchsorted(mid, seg.offset, side="left")
        act[lo:hi, index[seg.speaker]] = True
    return act


def _grid_size(ref, hyp, res: float, collar: float) -> int:
    end = max([s.offset for s in list(ref) + list(hyp)], default=0.0)
    return int(math.ceil((end + collar) / res)) + 1


def collar_mask(ref_act: np.ndarray, collar: float, res: float) -> np.ndarray:
    """True for frames that are scored, i.e. not within ``collar`` of a reference boundary."""
    n = ref_act.shape[0]
    scored = np.ones(n, dtype=bool)
    if collar <= 0 or n == 0:
        return scored
    padded = np.vstack([np.zeros((1, ref_act.shape[1]), bool), ref_act, np.zeros((1, ref_act.shape[1]), bool)])
    changes = np.flatnonzero(np.any(padded[1:] != padded[:-1], axis=1))
    boundaries = changes * res  # change between frame i-1 and i sits at time i*res
    mid = (np.arange(n) + 0.5) * res
    for b in boundaries:
        lo = np.searchsorted(mid, b - collar, side="right")
        hi = np.searchsorted(mid, b + collar, side="left")
        scored[lo:hi] = False
    return scored


def _best_assignment(overlap: np.ndarray) -> list[tuple[int, int]]:
    """Index pairs (hyp, ref) maximizing summed overlap."""
    n_hyp, n_ref = overlap.shape
    if n_hyp == 0 or n_ref == 0:
        return []
    if n_hyp <= 3 and n_ref <= 3:
        best, best_pairs = -1, []
        k = min(n_hyp, n_ref)
        for hyps in itertools.permutations(range(n_hyp), k):
            for refs in itertools.permutations(range(n_ref), k):
                total = sum(overlap[h, r] for h, r in zip(hyps, refs))
                if total > best:
                    best, best_pairs = total, list(zip(hyps, refs))
        return sorted(best_pairs)
    rows, cols = linear_sum_assignment(-overlap)
    return sorted(zip(rows.tolist(), cols.tolist()))


def optimal_speaker_map(
    ref: Sequence[Segment], hyp: Sequence[Segment], resolution: float = 0.01
) -> dict[str, str]:
    ref_spk, hyp_spk = _speakers(ref), _speakers(hyp)
    n = _grid_size(ref, hyp, resolution, 0.0)
    r = rasterize(ref, ref_spk, n, resolution)
    h = rasterize(hyp, hyp_spk, n, resolution)
    return _map_from_activity(r, h, ref_spk, hyp_spk)


def _map_from_activity(r, h, ref_spk, hyp_spk) -> dict[str, str]:
    overlap = h.T.astype(np.int64) @ r.astype(np.int64)
    return {hyp_spk[i]: ref_spk[j] for i, j in _best_assignment(overlap) if overlap[i, j] > 0}


def der(ref: Sequence[Segment], hyp: Sequence[Segment], cfg: ScoringConfig = ScoringConfig()) -> DerBreakdown:
    """DER of one recording.

    Time is discretized at ``cfg.scoring_resolution``.  Per scored frame with
    ``R`` active reference and ``H`` active hypothesis speakers, of which
    ``K`` reference speakers are covered by their mapped hypothesis speaker:
    miss = max(0, R - H), false alarm = max(0, H - R), confusion = min(R, H) - K.
    """
    if cfg.collar < 0:
        raise ValueError("collar must be non-negative")
    res = cfg.scoring_resolution
    ref_spk, hyp_spk = _speakers(ref), _speakers(hyp)
    n = _grid_size(ref, hyp, res, cfg.collar)
    r = rasterize(ref, ref_spk, n, res)
    h = rasterize(hyp, hyp_spk, n, res)
    scored = collar_mask(r, cfg.collar, res)
    r, h = r[scored], h[scored]

    mapping = _map_from_activity(r, h, ref_spk, hyp_spk)
    n_ref = r.sum(axis=1).astype(np.int64)
    n_hyp = h.sum(axis=1).astype(np.int64)
    correct = np.zeros(len(n_ref), dtype=np.int64)
    ref_index = {s: j for j, s in enumerate(ref_spk)}
    for i, spk in enumerate(hyp_spk):
        if spk in mapping:
            correct += h[:, i] & r[:, ref_index[mapping[spk]]]

    miss = int(np.maximum(n_ref - n_hyp, 0).sum())
    fa = int(np.maximum(n_hyp - n_ref, 0).sum())
    conf = int((np.minimum(n_ref, n_hyp) - correct).sum())
    return DerBreakdown.from_times(miss * res, fa * res, conf * res, int(n_ref.sum()) * res, int(scored.sum()) * res)


def score_labels(ref: LabelMatrix, hyp: LabelMatrix, cfg: ScoringConfig = ScoringConfig(), recording_id: str = "rec") -> DerBreakdown:
    return der(labels_to_segments(ref, recording_id), labels_to_segments(hyp, recording_id), cfg)


def infer_and_score(model, features, sap: SapSequence, ref: Sequence[Segment], cfg: ScoringConfig = ScoringConfig(), recording_id: str = "rec"):
    """Correct ``sap`` with ``model`` and score against ``ref``.

    Returns the corrected segments and their DerBreakdown.
    """
    from .model import correct

    corrected = correct(model, features, sap)
    segments = labels_to_segments(decide(corrected, cfg), recording_id)
    return segments, der(ref, segments, cfg)


def format_report(rows: Sequence[tuple[str, DerBreakdown]]) -> str:
    """Tab-separated per-recording rows followed by a corpus total row."""
    lines = ["recording_id\tder\tmiss\tfa\tconf\tscored_speech\tscored_time"]
    for rec, b in list(rows) + [("TOTAL", combine(b for _, b in rows))]:
        lines.append(
            f"{rec}\t{b.der:.2f}\t{b.miss:.2f}\t{b.fa:.2f}\t{b.conf:.2f}\t{b.scored_speech:.2f}\t{b.scored_time:.2f}"
        )
    return "\n".join(lines) + "\n"
