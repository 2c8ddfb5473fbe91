"""Slow, independent reference implementations used by the tests."""

import itertools
import math


def bce(logit, label):
    p = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else math.exp(logit) / (1.0 + math.exp(logit))
    # log terms computed separately to stay independent of the logit-form implementation
    log_p = -math.log1p(math.exp(-logit)) if logit >= 0 else logit - math.log1p(math.exp(logit))
    log_q = -logit + log_p
    assert 0.0 <= p <= 1.0
    return -(label * log_p + (1 - label) * log_q)


def pit_bce_bruteforce(logits, labels):
    t, c = len(labels), len(labels[0])
    best = None
    for perm in itertools.permutations(range(c)):
        total = 0.0
        for i in range(t):
            for j in range(c):
                total += bce(float(logits[i][perm[j]]), float(labels[i][j]))
        value = total / (t * c)
        if best is None or value < best[0]:
            best = (value, perm)
    return best


def der_bruteforce(ref, hyp, collar=0.0, res=0.01):
    """Per-frame DER counting with exhaustive speaker mapping.

    ``ref`` and ``hyp`` are lists of (onset, offset, speaker).  Segments of
    one speaker must not overlap each other.  Returns error and reference
    times in seconds: (miss, fa, conf, speech).
    """
    end = max([e for _, e, _ in ref + hyp], default=0.0) + collar
    n = int(math.ceil(end / res)) + 1
    boundaries = [b for s, e, _ in ref for b in (s, e)]
    ref_spk = sorted({s for *_, s in ref})
    hyp_spk = sorted({s for *_, s in hyp})
    frames = []
    for i in range(n):
        mid = (i + 0.5) * res
        if any(abs(mid - b) < collar for b in boundaries):
            continue
        r = {s for a, b, s in ref if a <= mid < b}
        h = {s for a, b, s in hyp if a <= mid < b}
        frames.append((r, h))

    def errors(mapping):
        miss = fa = conf = 0
        for r, h in frames:
            nr, nh = len(r), len(h)
            correct = sum(1 for hs in h if mapping.get(hs) in r)
            miss += max(nr - nh, 0)
            fa += max(nh - nr, 0)
            conf += min(nr, nh) - correct
        return miss, fa, conf

    best = None
    for k in range(0, min(len(ref_spk), len(hyp_spk)) + 1):
        for hs in itertools.permutations(hyp_spk, k):
            for rs in itertools.combinations(ref_spk, k):
                for rperm in itertools.permutations(rs):
                    e = errors(dict(zip(hs, rperm)))
                    if best is None or sum(e) < sum(best):
                        best = e
    speech = sum(len(r) for r, _ in frames)
    return tuple(x * res for x in best) + (speech * res,)
