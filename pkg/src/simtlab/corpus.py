"""Parallel-text ingestion: vocabularies, sentence pairs, word alignments,
length buckets and a deterministic synthetic translation task.

File conventions: parallel text is UTF-8, one sentence per line,
whitespace-tokenized.  Alignment files use the Pharaoh "i-j" format,
0-based on disk; indices are converted to 1-based (source, target) pairs
in memory.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from .seeding import substream

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


class CorpusError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class Vocabulary:
    """Dense token<->id map with reserved specials and a frequency cutoff."""

    token_to_id: dict[str, int]
    min_freq: int = 0
    pad: int = PAD
    bos: int = BOS
    eos: int = EOS
    unk: int = UNK
    id_to_token: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        self.id_to_token = [""] * len(self.token_to_id)
        for tok, idx in self.token_to_id.items():
            self.id_to_token[idx] = tok

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, self.unk) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# min_freq={self.min_freq}\n")
            for tok in self.id_to_token:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            if not header.startswith("# min_freq="):
                raise CorpusError(f"{path}: not a vocabulary file")
            min_freq = int(header.split("=", 1)[1])
            tokens = [line.rstrip("\n") for line in f]
        if tokens[:4] != list(SPECIAL_TOKENS):
            raise CorpusError(f"{path}: special tokens missing or reordered")
        return cls({t: i for i, t in enumerate(tokens)}, min_freq=min_freq)


@dataclass(frozen=True)
class SentencePair:
    """One aligned sentence pair as id sequences, padding-free.

    `source` holds the J real tokens (no end sentinel); `target` holds the
    I real tokens.
    """

    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self):
        if len(self.source) < 1 or len(self.target) < 1:
            raise CorpusError("sentence pair with empty side")
        if PAD in self.source or PAD in self.target:
            raise CorpusError("padding id inside a sentence pair")

    @property
    def source_len(self) -> int:
        return len(self.source)

    @property
    def target_len(self) -> int:
        return len(self.target)


@dataclass(frozen=True)
class AlignmentSet:
    """Expert word alignments for one pair: 1-based (source, target) links."""

    links: frozenset[tuple[int, int]]

    def farthest_source(self, target_index: int) -> int | None:
        """Largest source position linked to `target_index`, or None."""
        linked = [s for s, t in self.links if t == target_index]
        return max(linked) if linked else None


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Deterministic toy transduction task.

    Output token i is a fixed relabeling of source token i + lookahead,
    so translating it needs exactly the first i + lookahead source tokens
    and no more.  The output has max(1, J - lookahead) tokens; clamping to
    the last source token only happens for degenerate sentences shorter
    than the lookahead.
    """

    vocab_size: int
    length_range: tuple[int, int]
    lookahead: int
    seed: int

    def __post_init__(self):
        if self.vocab_size <= len(SPECIAL_TOKENS) + 1:
            raise CorpusError("vocab_size leaves no room for content tokens")
        lo, hi = self.length_range
        if not (1 <= lo <= hi):
            raise CorpusError("bad length range")
        if self.lookahead < 0:
            raise CorpusError("lookahead must be >= 0")

    @property
    def content_ids(self) -> range:
        return range(len(SPECIAL_TOKENS), self.vocab_size)

    def relabel_permutation(self) -> list[int]:
        n = self.vocab_size - len(SPECIAL_TOKENS)
        rng = substream(self.seed, "synthetic-relabel")
        return list(rng.permutation(n))

    def target_len(self, source_len: int) -> int:
        return max(1, source_len - self.lookahead)

    def reference_output(self, source: tuple[int, ...]) -> tuple[int, ...]:
        """Apply the task function to a source sequence."""
        perm = self.relabel_permutation()
        base = len(SPECIAL_TOKENS)
        j_max = len(source)
        out = []
        for i in range(1, self.target_len(j_max) + 1):
            src_tok = source[min(i + self.lookahead, j_max) - 1]
            out.append(base + perm[src_tok - base])
        return tuple(out)


def build_vocab(sentences: list[list[str]], min_freq: int = 0) -> Vocabulary:
    """Count tokens and keep those with frequency >= min_freq.

    Kept tokens get dense ids after the four specials, ordered by
    descending frequency then lexicographically.  Everything else maps to
    the unknown id at encode time.
    """
    if not sentences:
        raise CorpusError("empty corpus")
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS),
        key=lambda t: (-counts[t], t),
    )
    token_to_id = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
    for t in kept:
        token_to_id[t] = len(token_to_id)
    return Vocabulary(token_to_id, min_freq=min_freq)


def read_token_lines(path) -> list[list[str]]:
    with open(path, encoding="utf-8", newline=None) as f:
        return [line.split() for line in f.read().splitlines()]


def load_parallel(source_path, target_path, vocab_s: Vocabulary,
                  vocab_t: Vocabulary) -> list[SentencePair]:
    """Read line-aligned parallel files into encoded pairs.

    Raises on a line-count mismatch; pairs where either side is empty are
    skipped with a warning.
    """
    src_lines = read_token_lines(source_path)
    tgt_lines = read_token_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line count mismatch: {source_path} has {len(src_lines)}, "
            f"{target_path} has {len(tgt_lines)}"
        )
    pairs = []
    for lineno, (src, tgt) in enumerate(zip(src_lines, tgt_lines), start=1):
        if not src or not tgt:
            log.warning("skipping empty line %d", lineno)
            continue
        pairs.append(SentencePair(tuple(vocab_s.encode(src)), tuple(vocab_t.encode(tgt))))
    return pairs


def load_alignments(path) -> list[AlignmentSet]:
    """Parse a Pharaoh alignment file, one sentence per line."""
    out = []
    with open(path, encoding="utf-8", newline=None) as f:
        for lineno, line in enumerate(f.read().splitlines(), start=1):
            links = set()
            for piece in line.split():
                parts = piece.split("-")
                if len(parts) != 2:
                    raise CorpusError(f"{path}:{lineno}: malformed link {piece!r}")
                try:
                    s, t = int(parts[0]), int(parts[1])
                except ValueError:
                    raise CorpusError(f"{path}:{lineno}: malformed link {piece!r}") from None
                if s < 0 or t < 0:
                    raise CorpusError(f"{path}:{lineno}: negative index in {piece!r}")
                links.add((s + 1, t + 1))
            out.append(AlignmentSet(frozenset(links)))
    return out


def save_alignments(alignments: list[AlignmentSet], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in alignments:
            links = sorted(a.links)
            f.write(" ".join(f"{s - 1}-{t - 1}" for s, t in links) + "\n")


def farthest_aligned_source(a: AlignmentSet, i: int) -> int | None:
    if i < 1:
        raise CorpusError("target index must be >= 1")
    return a.farthest_source(i)


def length_bucket(pairs: list[SentencePair], target_len: int) -> list[SentencePair]:
    """All pairs whose target length equals `target_len`."""
    if target_len < 1:
        raise CorpusError("target_len must be >= 1")
    return [p for p in pairs if p.target_len == target_len]


def generate_synthetic(spec: SyntheticTaskSpec, n: int) -> list[SentencePair]:
    """Sample `n` pairs of the synthetic task, deterministic given the seed."""
    if n < 1:
        raise CorpusError("need n >= 1")
    rng = substream(spec.seed, "synthetic-pairs")
    lo, hi = spec.length_range
    base = len(SPECIAL_TOKENS)
    n_content = spec.vocab_size - base
    pairs = []
    for _ in range(n):
        j = int(rng.integers(lo, hi + 1))
        source = tuple(base + int(u) for u in rng.integers(0, n_content, size=j))
        pairs.append(SentencePair(source, spec.reference_output(source)))
    return pairs


def synthetic_alignments(spec: SyntheticTaskSpec, pairs: list[SentencePair]) -> list[AlignmentSet]:
    """Gold alignments implied by the task: token i links to min(i+d, J)."""
    out = []
    for p in pairs:
        j_max = p.source_len
        links = frozenset(
            (min(i + spec.lookahead, j_max), i) for i in range(1, p.target_len + 1)
        )
        out.append(AlignmentSet(links))
    return out


def save_sentences(pairs: list[SentencePair], vocab: Vocabulary, path, side: str) -> None:
    """Write one side of a pair list back to a token file."""
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            ids = p.source if side == "source" else p.target
            f.write(" ".join(vocab.decode(list(ids))) + "\n")


def identity_vocab(vocab_size: int) -> Vocabulary:
    """Vocabulary whose tokens are the decimal ids themselves (synthetic data)."""
    token_to_id = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
    for i in range(len(SPECIAL_TOKENS), vocab_size):
        token_to_id[str(i)] = i
    return Vocabulary(token_to_id, min_freq=0)
