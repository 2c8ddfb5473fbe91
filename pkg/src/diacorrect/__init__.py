"""Error correction of 2-speaker diarization outputs.

A correction network reads stacked log-Mel features together with the
speaker-activity logits of an initial diarization system and emits refined
per-speaker logits.  The package also ships the data plumbing (RTTM, SAP and
feature files, a toy conversation simulator), PIT training, DER-based data
pruning, logit calibration and a frame-level DER scorer.
"""

FRAME_DURATION = 0.1
SAMPLE_RATE = 8000

__version__ = "0.1.0"
