"""Bias calibration of initial SAP logits and their class-conditional histograms."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import LabelMatrix, SapSequence, Segment, labels_to_segments
from .scoring import ScoringConfig, combine, decide, der


@dataclass(frozen=True)
class CalibrationCurve:
    points: list[tuple[float, float]]
    best_bias: float
    best_der: float

    def to_tsv(self) -> str:
        return "bias\tder\n" + "".join(f"{float(b)!r}\t{float(d)!r}\n" for b, d in self.points)


@dataclass(frozen=True)
class SapHistogram:
    bin_edges: np.ndarray
    speech_counts: np.ndarray
    silence_counts: np.ndarray

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def to_tsv(self) -> str:
        rows = zip(self.bin_centers, self.speech_counts, self.silence_counts)
        return "bin_center\tspeech\tsilence\n" + "".join(f"{float(c)!r}\t{int(s)}\t{int(n)}\n" for c, s, n in rows)


def apply_bias(sap: SapSequence, bias: float) -> SapSequence:
    """Subtract ``bias`` from every logit.

    For float32-representable logits and biases on a coarse grid the shift is
    exact in float64, so applying ``b`` then ``-b`` restores the input.
    """
    if not np.isfinite(bias):
        raise ValueError(f"bias must be finite, got {bias}")
    return SapSequence(sap.values - bias, sap.speakers, sap.frame_duration)


def corpus_der(pairs: Sequence[tuple[SapSequence, Sequence[Segment]]], cfg: ScoringConfig, bias: float = 0.0):
    parts = []
    for i, (sap, ref) in enumerate(pairs):
        rec = ref[0].recording_id if ref else str(i)
        hyp = labels_to_segments(decide(apply_bias(sap, bias), cfg), rec)
        parts.append(der(ref, hyp, cfg))
    return combine(parts)


def sweep_bias(
    pairs: Sequence[tuple[SapSequence, Sequence[Segment]]],
    grid: Sequence[float],
    cfg: ScoringConfig = ScoringConfig(),
    jobs: int = 1,
) -> CalibrationCurve:
    """Corpus DER for every bias in ``grid``; best point breaks ties toward small |bias|."""
    if not pairs:
        raise ValueError("no recordings to calibrate on")
    grid = [float(b) for b in grid]
    if not grid:
        raise ValueError("empty bias grid")
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            ders = list(pool.map(lambda b: corpus_der(pairs, cfg, b).der, grid))
    else:
        ders = [corpus_der(pairs, cfg, b).der for b in grid]
    points = list(zip(grid, ders))
    best_bias, best_der = min(points, key=lambda p: (p[1], abs(p[0]), p[0]))
    return CalibrationCurve(points, best_bias, best_der)


def bias_grid(lo: float = -3.0, hi: float = 3.0, step: float = 0.25) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


def sap_histogram(pairs: Sequence[tuple[SapSequence, LabelMatrix]], bins: int = 50) -> SapHistogram:
    """Histogram logits separately for ground-truth speech and silence cells."""
    for i, (sap, lab) in enumerate(pairs):
        if sap.values.shape != lab.values.shape:
            raise ValueError(f"recording {i}: SAP shape {sap.values.shape} vs labels {lab.values.shape}")
    speech = np.concatenate([sap.values[lab.values == 1] for sap, lab in pairs] or [np.zeros(0)])
    silence = np.concatenate([sap.values[lab.values == 0] for sap, lab in pairs] or [np.zeros(0)])
    everything = np.concatenate([speech, silence])
    if everything.size == 0:
        edges = np.linspace(-1.0, 1.0, bins + 1)
    else:
        edges = np.histogram_bin_edges(everything, bins=bins)
    return SapHistogram(edges, np.histogram(speech, edges)[0], np.histogram(silence, edges)[0])
