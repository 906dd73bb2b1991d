"""Streaming simultaneous inference.

The driver keeps a stream cursor j over the source tokens followed by the
end sentinel.  Each step an action is chosen: by the trained agent, by a
fixed read-count policy, or forced to WRITE once the sentinel has been
read.  WRITE emits the scorer's greedy token conditioned on everything
read so far; READ advances the cursor.  Decoding stops when the emitted
token is the end sentinel or the hypothesis reaches the length cap
2*J + 10.

Scoring visibility follows one rule everywhere: a read count of g exposes
the first g source positions, plus the sentinel exactly when g = J (a
complete source is scored as such).  Read counts reported in policies and
metrics are always clamped to J.
"""

from __future__ import annotations

from dataclasses import dataclass

from .actions import READ, WRITE
from .agent import AgentCheckpoint, TranslationStatus, decide, initial_state
from .corpus import BOS, EOS
from .model import ScorerCheckpoint, StreamScorer, visible_count


@dataclass(frozen=True)
class DecodeResult:
    hypothesis: tuple[int, ...]
    realized_policy: tuple[int, ...]
    action_log: str


def length_cap(source_len: int) -> int:
    return 2 * source_len + 10


def _drive(scorer: StreamScorer, choose, cap: int) -> DecodeResult:
    """Run the streaming loop; `choose(status, reads, writes) -> action`
    decides unforced steps."""
    j_total = scorer.source_len
    stream = list(scorer.source) + [EOS]
    prefix = [BOS]
    hyp: list[int] = []
    realized: list[int] = []
    log = [READ]  # forced first action
    j = 1
    last_action = READ
    while True:
        status = TranslationStatus(
            last_source_token=stream[j - 1],
            last_target_token=prefix[-1],
            last_action=last_action,
        )
        if stream[j - 1] == EOS:
            action = WRITE  # source exhausted, override before consulting
        else:
            action = choose(status, min(j, j_total), len(hyp))
        log.append(action)
        last_action = action
        if action == WRITE:
            reads = min(j, j_total)
            tok = scorer.greedy_next(tuple(prefix), visible_count(reads, j_total))
            if tok == EOS:
                break
            hyp.append(tok)
            realized.append(reads)
            prefix.append(tok)
            if len(hyp) >= cap:
                break
        else:
            j += 1
    return DecodeResult(tuple(hyp), tuple(realized), "".join(log))


def simultaneous_decode(scorer_ckpt: ScorerCheckpoint, agent_ckpt: AgentCheckpoint,
                        source: tuple[int, ...], threshold: float = 0.5,
                        cap: int | None = None) -> DecodeResult:
    """Agent-driven streaming decode."""
    scorer = StreamScorer(scorer_ckpt, source)
    state_box = [initial_state(agent_ckpt.config)]

    def choose(status: TranslationStatus, reads: int, writes: int) -> str:
        action, state_box[0] = decide(agent_ckpt, state_box[0], status,
                                      scorer_ckpt, threshold)
        return action

    return _drive(scorer, choose, cap or length_cap(len(source)))


def policy_decode(scorer_ckpt: ScorerCheckpoint, policy: list[int],
                  source: tuple[int, ...], cap: int | None = None) -> DecodeResult:
    """Decode following a fixed read-count schedule.

    Token i is written after policy[i-1] reads; positions beyond the
    schedule use the full source.
    """
    j_total = len(source)
    prev = 0
    for g in policy:
        if not 1 <= g <= j_total or g < prev:
            raise ValueError("policy must be monotone within [1, J]")
        prev = g
    scorer = StreamScorer(scorer_ckpt, source)

    def choose(status: TranslationStatus, reads: int, writes: int) -> str:
        goal = policy[writes] if writes < len(policy) else j_total
        return WRITE if reads >= goal else READ

    return _drive(scorer, choose, cap or length_cap(j_total))


oracle_decode = policy_decode


def full_sentence_decode(scorer_ckpt: ScorerCheckpoint, source: tuple[int, ...],
                         cap: int | None = None) -> tuple[int, ...]:
    """Greedy decode with the whole source visible."""
    result = policy_decode(scorer_ckpt, [len(source)], source, cap)
    return result.hypothesis
