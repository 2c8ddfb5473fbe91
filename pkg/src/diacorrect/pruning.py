"""Hard-sample selection by the initial system's per-recording DER."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import LabelMatrix, SapSequence, threshold
from .scoring import DerBreakdown, ScoringConfig, score_labels

# collar 0, no median filter, threshold at probability 0.5
PRUNE_SCORING = ScoringConfig(collar=0.0, median_frames=1, threshold_logit=0.0)


@dataclass(frozen=True)
class PruneRow:
    recording_id: str
    der: float
    miss: float
    fa: float
    conf: float


@dataclass
class PruneTable:
    rows: list[PruneRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def ids(self) -> list[str]:
        return [r.recording_id for r in self.rows]

    def mean_der(self) -> float:
        return float(np.mean([r.der for r in self.rows])) if self.rows else 0.0

    def to_tsv(self) -> str:
        lines = ["recording_id\tder\tmiss\tfa\tconf"]
        lines += [f"{r.recording_id}\t{float(r.der)!r}\t{float(r.miss)!r}\t{float(r.fa)!r}\t{float(r.conf)!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "PruneTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split("\t")[0] != "recording_id":
            raise ValueError("prune table must start with a header row")
        rows = []
        for ln in lines[1:]:
            rec, *vals = ln.split("\t")
            rows.append(PruneRow(rec, *(float(v) for v in vals)))
        return cls(rows)


def _score_one(item) -> PruneRow:
    rec, sap, labels = item
    if len(sap) != len(labels):
        raise ValueError(f"recording {rec}: SAP has {len(sap)} frames, labels have {len(labels)}")
    b: DerBreakdown = score_labels(labels, threshold(sap, PRUNE_SCORING.threshold_logit), PRUNE_SCORING, rec)
    return PruneRow(rec, b.der, b.miss, b.fa, b.conf)


def score_corpus(corpus: Iterable[tuple[str, SapSequence, LabelMatrix]], jobs: int = 1) -> PruneTable:
    """Score each recording's initial SAPs against its labels.

    ``corpus`` yields (recording_id, sap, labels); plain (sap, labels) pairs
    are accepted too and are named by their position.
    """
    items = []
    for i, item in enumerate(corpus):
        items.append(item if len(item) == 3 else (str(i), *item))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(_score_one, items))
    else:
        rows = [_score_one(it) for it in items]
    return PruneTable(rows)


def select_hard(table: PruneTable, lower: float, upper: float = 40.0) -> list[str]:
    """Ids whose DER (percent) lies in [lower, upper], in table order."""
    if lower >= upper:
        raise ValueError(f"lower limit {lower} must be below upper limit {upper}")
    return [r.recording_id for r in table.rows if lower <= r.der <= upper]


def selection_fraction(table: PruneTable, ids: Sequence[str]) -> float:
    return len(ids) / len(table) if len(table) else 0.0
