"""Latency, quality and policy-sufficiency measurement.

Average lagging for a policy g over a J-token source and an I-token
hypothesis:

    AL = (1/tau) * sum_{i<=tau} [ g_i - (i-1)/r ],   r = I / J,

where tau is the first position whose read count reaches J, or I if the
source is never fully read.  BLEU is corpus-level 4-gram precision
(geometric mean, brevity penalty, no smoothing).  Sufficiency is the
fraction of aligned target tokens whose read count covers their farthest
aligned source position.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import AlignmentSet, SentencePair
from .model import ScorerCheckpoint, StreamScorer


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyReport:
    al: float
    tau: int
    length_ratio: float


def average_lagging(g: list[int], source_len: int, hyp_len: int) -> LatencyReport:
    if hyp_len < 1 or not g:
        raise MetricError("empty hypothesis")
    if len(g) != hyp_len:
        raise MetricError(f"policy length {len(g)} != hypothesis length {hyp_len}")
    if any(not 1 <= gi <= source_len for gi in g):
        raise MetricError(f"read counts must lie in [1, {source_len}]")
    r = hyp_len / source_len
    tau = hyp_len
    for i, gi in enumerate(g, start=1):
        if gi >= source_len:
            tau = i
            break
    total = sum(g[i - 1] - (i - 1) / r for i in range(1, tau + 1))
    return LatencyReport(al=total / tau, tau=tau, length_ratio=r)


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[k : k + n]) for k in range(len(tokens) - n + 1))


def corpus_bleu(hyps: list[list], refs: list[list], max_order: int = 4) -> float:
    """Corpus BLEU in percent, unsmoothed; zero precision at any order
    gives 0."""
    if len(hyps) != len(refs):
        raise MetricError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[gram]) for gram, c in h.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    if hyp_len == 0 or any(t == 0 for t in totals):
        return 0.0
    if any(m == 0 for m in matches):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec)


def sufficiency(policies: list[list[int]], alignments: list[AlignmentSet]) -> float:
    """Fraction of aligned target tokens with g_i >= farthest aligned source.

    Unaligned target tokens are excluded from both numerator and
    denominator.
    """
    if len(policies) != len(alignments):
        raise MetricError(f"{len(policies)} policies vs {len(alignments)} alignments")
    covered = considered = 0
    for g, align in zip(policies, alignments):
        for i in range(1, len(g) + 1):
            far = align.farthest_source(i)
            if far is None:
                continue
            considered += 1
            covered += g[i - 1] >= far
    return covered / considered if considered else 0.0


def probability_profile(ckpt: ScorerCheckpoint, bucket: list[SentencePair],
                        q_grid: list[float]) -> np.ndarray:
    """Mean teacher-forced probability of the reference token per
    (target position, relative source position q); shape (len(q_grid), I)."""
    if not bucket:
        raise MetricError("empty bucket")
    target_len = bucket[0].target_len
    if any(p.target_len != target_len for p in bucket):
        raise MetricError("bucket must share one target length")
    if any(q <= 0 or q > 1 for q in q_grid):
        raise MetricError("relative positions must lie in (0, 1]")
    acc = np.zeros((len(q_grid), target_len))
    for pair in bucket:
        scorer = StreamScorer(ckpt, pair.source)
        j = pair.source_len
        for qi, q in enumerate(q_grid):
            g = max(1, math.ceil(q * j))
            acc[qi] += scorer.teacher_probs(pair.target, np.full(target_len, g))
    return acc / len(bucket)


def save_profile_csv(profile: np.ndarray, q_grid: list[float], path) -> None:
    """Long-format rows q,i,p (i is 1-based)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("q,i,p\n")
        for qi, q in enumerate(q_grid):
            for i in range(profile.shape[1]):
                f.write(f"{q:g},{i + 1},{profile[qi, i]:.17g}\n")
