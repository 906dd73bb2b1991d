"""Online construction of read-count policies by binary search.

For each target token, the candidate read counts form an interval that
shifts one source position right per target position.  The search probes
the midpoint and keeps the half-interval with the larger gain in
ground-truth translation probability per extra source token; since both
halves have equal width this reduces to the midpoint-concavity test
p_m >= (p_l + p_r) / 2, with ties going left (lower latency).  The scorer
is teacher-forced: probabilities condition on the ground-truth target
prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import BOS, SentencePair
from .model import (ScorerCheckpoint, StreamScorer, TrainSchedule,
                    train_policy_ce, visible_count)

ProbFn = Callable[[int, int], float]  # (target index i, read count g) -> probability


@dataclass(frozen=True)
class IntervalSchedule:
    """First-token interval [l1, r1]; both ends shift +1 per target token."""

    l1: int
    r1: int

    def __post_init__(self):
        if not 1 <= self.l1 <= self.r1:
            raise ValueError(f"need 1 <= l1 <= r1, got [{self.l1}, {self.r1}]")

    def interval_for(self, i: int, source_len: int) -> tuple[int, int]:
        if i < 1 or source_len < 1:
            raise ValueError("target index and source length must be >= 1")
        return (min(self.l1 + i - 1, source_len), min(self.r1 + i - 1, source_len))


def interval_for(sched: IntervalSchedule, i: int, source_len: int) -> tuple[int, int]:
    return sched.interval_for(i, source_len)


@dataclass
class SearchStep:
    l: int
    r: int
    m: int
    p_l: float
    p_m: float
    p_r: float
    went_left: bool


@dataclass
class TokenTrace:
    i: int
    steps: list[SearchStep] = field(default_factory=list)
    result: int = 0


def binary_search_token(prob: ProbFn, i: int, l: int, r: int) -> tuple[int, TokenTrace]:
    """Read count for target token i searched within [l, r].

    `prob(i, g)` must return the model probability of the ground-truth
    token given g source tokens; it is consulted at most three times per
    iteration.
    """
    if l > r:
        raise ValueError(f"empty interval [{l}, {r}]")
    trace = TokenTrace(i=i)
    while l < r:
        m = (l + r) // 2
        p_l, p_m, p_r = prob(i, l), prob(i, m), prob(i, r)
        left = p_m >= (p_l + p_r) / 2.0
        trace.steps.append(SearchStep(l, r, m, p_l, p_m, p_r, left))
        if left:
            r = m
        else:
            l = m + 1
    trace.result = l
    return l, trace


def max_iterations(l: int, r: int) -> int:
    """Iteration bound for a width-(r-l+1) interval."""
    return math.ceil(math.log2(r - l + 1)) + 1 if r > l else 0


class CachedProbs:
    """Memoized per-sentence teacher-forced probabilities.

    Single probes run through the same full-sentence decoder pass as
    vector probes, so batched and token-by-token searches see bitwise
    identical numbers.
    """

    def __init__(self, scorer: StreamScorer, target: tuple[int, ...]):
        self.scorer = scorer
        self.target = target
        self.memo: dict[tuple[int, int], float] = {}

    def prefetch(self, counts_by_token: dict[int, int]) -> None:
        """Score several (token, read count) probes in one decoder pass."""
        missing = {i: g for i, g in counts_by_token.items() if (i, g) not in self.memo}
        if not missing:
            return
        row = np.ones(len(self.target), dtype=np.int64)
        for i, g in missing.items():
            row[i - 1] = g
        probs = self.scorer.teacher_probs(self.target, row)
        for i, g in missing.items():
            self.memo[(i, g)] = float(probs[i - 1])

    def __call__(self, i: int, g: int) -> float:
        if (i, g) not in self.memo:
            self.prefetch({i: g})
        return self.memo[(i, g)]


def monotone_project(g: list[int]) -> list[int]:
    """Smallest non-decreasing sequence that dominates g pointwise."""
    out = []
    best = 0
    for gi in g:
        best = max(best, gi)
        out.append(best)
    return out


def search_policy(ckpt: ScorerCheckpoint, pair: SentencePair,
                  sched: IntervalSchedule,
                  return_traces: bool = False):
    """Binary-search every target token, then repair monotonicity.

    All tokens advance one search iteration at a time and share decoder
    passes; results are identical to running each token independently.
    """
    scorer = StreamScorer(ckpt, pair.source)
    probs = CachedProbs(scorer, pair.target)
    j = pair.source_len
    state = {}
    for i in range(1, pair.target_len + 1):
        l, r = sched.interval_for(i, j)
        state[i] = [l, r]
    traces = {i: TokenTrace(i=i) for i in state}
    while True:
        active = {i for i, (l, r) in state.items() if l < r}
        if not active:
            break
        for probe in range(3):  # l, m, r probes each get one shared pass
            batch = {}
            for i in sorted(active):
                l, r = state[i]
                g = (l, (l + r) // 2, r)[probe]
                if (i, g) not in probs.memo and i not in batch:
                    batch[i] = g
            probs.prefetch(batch)
        for i in sorted(active):
            l, r = state[i]
            m = (l + r) // 2
            p_l, p_m, p_r = probs(i, l), probs(i, m), probs(i, r)
            left = p_m >= (p_l + p_r) / 2.0
            traces[i].steps.append(SearchStep(l, r, m, p_l, p_m, p_r, left))
            if left:
                state[i][1] = m
            else:
                state[i][0] = m + 1
    raw = [state[i][0] for i in range(1, pair.target_len + 1)]
    for i in traces:
        traces[i].result = state[i][0]
    policy = monotone_project(raw)
    if return_traces:
        return policy, [traces[i] for i in range(1, pair.target_len + 1)]
    return policy


def search_policies(ckpt: ScorerCheckpoint, pairs: list[SentencePair],
                    sched: IntervalSchedule) -> list[list[int]]:
    return [search_policy(ckpt, p, sched) for p in pairs]


def waitk_policy(k: int, target_len: int, source_len: int) -> list[int]:
    """Read k tokens, then alternate: g_i = min(k + i - 1, J)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [min(k + i - 1, source_len) for i in range(1, target_len + 1)]


def gt_comparison_policy(ckpt: ScorerCheckpoint, pair: SentencePair,
                         sched: IntervalSchedule) -> list[int]:
    """Ablation: earliest interval point where greedy output matches the
    reference, falling back to the interval's right end."""
    scorer = StreamScorer(ckpt, pair.source)
    j = pair.source_len
    raw = []
    prefix = [BOS]
    for i in range(1, pair.target_len + 1):
        l, r = sched.interval_for(i, j)
        chosen = r
        for g in range(l, r + 1):
            tok = scorer.greedy_next(tuple(prefix), visible_count(g, j))
            if tok == pair.target[i - 1]:
                chosen = g
                break
        raw.append(chosen)
        prefix.append(pair.target[i - 1])
    return monotone_project(raw)


def alternate_train(ckpt: ScorerCheckpoint, pairs: list[SentencePair],
                    dev_pairs: list[SentencePair], sched: IntervalSchedule,
                    rounds: int, schedule: TrainSchedule,
                    quality_fn=None):
    """Alternate policy search and policy-conditioned training.

    Each round searches policies for all training pairs with the current
    scorer, then fine-tunes the scorer on them.  The checkpoint whose own
    searched policies score best on `dev_pairs` (by `quality_fn`, default
    corpus BLEU of oracle-policy decoding) is returned together with the
    policies it induces on the training pairs.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if quality_fn is None:
        from .decode import oracle_decode
        from .metrics import corpus_bleu

        def quality_fn(ck):
            dev_pols = search_policies(ck, dev_pairs, sched)
            hyps = [oracle_decode(ck, g, p.source).hypothesis
                    for g, p in zip(dev_pols, dev_pairs)]
            return corpus_bleu(hyps, [list(p.target) for p in dev_pairs])

    best_ckpt = None
    best_score = -float("inf")
    current = ckpt
    for r in range(rounds):
        policies = search_policies(current, pairs, sched)
        current = train_policy_ce(current, pairs, policies, schedule)
        score = quality_fn(current)
        if score > best_score:
            best_score = score
            best_ckpt = current
    best_policies = search_policies(best_ckpt, pairs, sched)
    return best_ckpt, best_policies


def save_policies(policies: list[list[int]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in policies:
            f.write(" ".join(str(x) for x in g) + "\n")


def load_policies(path) -> list[list[int]]:
    with open(path, encoding="utf-8", newline=None) as f:
        return [[int(x) for x in line.split()] for line in f.read().splitlines()]


def dump_traces(traces: list[TokenTrace], path) -> None:
    """Structured text dump of the per-token search for debugging."""
    with open(path, "w", encoding="utf-8") as f:
        for t in traces:
            f.write(f"token {t.i} -> {t.result}\n")
            for s in t.steps:
                side = "left" if s.went_left else "right"
                f.write(f"  [{s.l},{s.r}] m={s.m} "
                        f"p_l={s.p_l:.6f} p_m={s.p_m:.6f} p_r={s.p_r:.6f} {side}\n")
