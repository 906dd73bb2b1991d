"""Incremental encoder-decoder translation scorer.

The encoder is unidirectional (causal self-attention), so its state at
source position j depends only on x_<=j and a prefix can be scored from a
single full encoding pass; cross-attention is masked per target position
to the first g_i source positions.  Trained with token-level cross-entropy
under an arbitrary monotone read-count policy, or under wait-k paths with
k sampled uniformly per sentence per update.

Read-count convention: policies count real source tokens, 1 <= g <= J.
The encoder input always carries an end sentinel after the J real tokens;
a policy value g = J means the whole source is available and unmasks the
sentinel as well.  Streaming callers (the decode drivers) bypass that rule
and pass raw visible counts in [1, J+1] as the stream delivers tokens.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .corpus import BOS, EOS, PAD, SentencePair
from .seeding import substream
from .serialize import read_container, write_container

NEG_INF = -1e30


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    ffn_dim: int = 128
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_positions: int = 512
    rel_window: int = 16  # clip range of the learned relative-position attention bias

    def __post_init__(self):
        if min(self.src_vocab, self.tgt_vocab, self.encoder_layers,
               self.decoder_layers, self.heads, self.embed_dim, self.ffn_dim) <= 0:
            raise ValueError("all dimensions must be positive")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.label_smoothing < 1.0):
            raise ValueError("dropout and label_smoothing must lie in [0, 1)")


@dataclass
class TrainSchedule:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 5e-4
    warmup: int = 200
    betas: tuple[float, float] = (0.9, 0.98)
    weight_decay: float = 1e-4
    seed: int = 0
    log_every: int = 0


@dataclass
class ScorerCheckpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    meta: dict = field(default_factory=dict)

    def clone(self) -> "ScorerCheckpoint":
        return ScorerCheckpoint({k: v.copy() for k, v in self.params.items()},
                                self.config, dict(self.meta))


@dataclass(frozen=True)
class PrefixQuery:
    """Context for scoring the next target token.

    `target_prefix` starts at the begin-of-sentence sentinel; `read_count`
    counts real source tokens available, in [1, len(source)].
    """

    source: tuple[int, ...]
    target_prefix: tuple[int, ...]
    read_count: int

    def __post_init__(self):
        if not self.target_prefix or self.target_prefix[0] != BOS:
            raise ValueError("target prefix must begin at the begin-of-sentence id")
        if not 1 <= self.read_count <= len(self.source):
            raise ValueError(
                f"read_count {self.read_count} outside [1, {len(self.source)}]")


def visible_count(read_count: int, source_len: int) -> int:
    """Encoder positions exposed for a policy read count (sentinel at J)."""
    return source_len + 1 if read_count >= source_len else read_count


# ---------------------------------------------------------------------------
# parameters

def _xavier(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_checkpoint(config: ModelConfig, seed: int) -> ScorerCheckpoint:
    rng = substream(seed, "scorer-init")
    d, f = config.embed_dim, config.ffn_dim
    p: dict[str, np.ndarray] = {}
    p["src_embed"] = rng.normal(0.0, d ** -0.5, size=(config.src_vocab, d))
    p["tgt_embed"] = rng.normal(0.0, d ** -0.5, size=(config.tgt_vocab, d))

    def attn_block(prefix):
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{prefix}.{name}"] = _xavier(rng, d, d)
        p[f"{prefix}.rel"] = np.zeros((2 * config.rel_window + 1, config.heads))

    def ln_block(prefix):
        p[f"{prefix}.g"] = np.ones(d)
        p[f"{prefix}.b"] = np.zeros(d)

    def ffn_block(prefix):
        p[f"{prefix}.w1"] = _xavier(rng, d, f)
        p[f"{prefix}.b1"] = np.zeros(f)
        p[f"{prefix}.w2"] = _xavier(rng, f, d)
        p[f"{prefix}.b2"] = np.zeros(d)

    for layer in range(config.encoder_layers):
        ln_block(f"enc.{layer}.ln1")
        attn_block(f"enc.{layer}.self")
        ln_block(f"enc.{layer}.ln2")
        ffn_block(f"enc.{layer}.ffn")
    ln_block("enc.final_ln")
    for layer in range(config.decoder_layers):
        ln_block(f"dec.{layer}.ln1")
        attn_block(f"dec.{layer}.self")
        ln_block(f"dec.{layer}.ln2")
        attn_block(f"dec.{layer}.cross")
        ln_block(f"dec.{layer}.ln3")
        ffn_block(f"dec.{layer}.ffn")
    ln_block("dec.final_ln")
    p["out.w"] = _xavier(rng, d, config.tgt_vocab)
    return ScorerCheckpoint(p, config, {"step": 0, "objective": "init", "seed": seed})


def sinusoid_table(n_pos: int, dim: int) -> np.ndarray:
    pos = np.arange(n_pos)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((n_pos, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


# ---------------------------------------------------------------------------
# forward graph

_offset_cache: dict[tuple[int, int, int], np.ndarray] = {}


def _offset_index(tq: int, s: int, window: int) -> np.ndarray:
    """(tq, s) table of clipped key-minus-query offsets, shifted to >= 0."""
    key = (tq, s, window)
    if key not in _offset_cache:
        off = np.arange(s)[None, :] - np.arange(tq)[:, None]
        _offset_cache[key] = np.clip(off, -window, window) + window
    return _offset_cache[key]


def _mha(t, prefix, x_q, x_kv, bias, heads, train_rng, dropout, window):
    """Multi-head attention with a learned relative-position logit bias;
    `bias` is the additive mask constant."""
    b, tq, d = x_q.data.shape
    s = x_kv.data.shape[1]
    dk = d // heads
    q = ad.linear(x_q, t[prefix + ".wq"])
    k = ad.linear(x_kv, t[prefix + ".wk"])
    v = ad.linear(x_kv, t[prefix + ".wv"])
    q = ad.transpose(ad.reshape(q, (b, tq, heads, dk)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(k, (b, s, heads, dk)), (0, 2, 1, 3))
    v = ad.transpose(ad.reshape(v, (b, s, heads, dk)), (0, 2, 1, 3))
    scores = ad.scale(ad.bmm(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    rel = ad.embedding(t[prefix + ".rel"], _offset_index(tq, s, window))  # (tq, s, H)
    scores = ad.add(scores, ad.reshape(ad.transpose(rel, (2, 0, 1)), (1, heads, tq, s)))
    attn = ad.softmax(ad.add_const(scores, bias), axis=-1)
    ctx = ad.bmm(attn, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
    out = ad.linear(ctx, t[prefix + ".wo"])
    return ad.dropout(out, dropout, train_rng)


def _ffn(t, prefix, x, train_rng, dropout):
    h = ad.relu(ad.add(ad.linear(x, t[prefix + ".w1"]), t[prefix + ".b1"]))
    out = ad.add(ad.linear(h, t[prefix + ".w2"]), t[prefix + ".b2"])
    return ad.dropout(out, dropout, train_rng)


def _ln(t, prefix, x):
    return ad.layer_norm(x, t[prefix + ".g"], t[prefix + ".b"])


_causal_cache: dict[int, np.ndarray] = {}


def _causal_bias(n: int) -> np.ndarray:
    if n not in _causal_cache:
        _causal_cache[n] = np.where(
            np.arange(n)[None, :] <= np.arange(n)[:, None], 0.0, NEG_INF)[None, None]
    return _causal_cache[n]


def _visibility_bias(visible: np.ndarray, s: int) -> np.ndarray:
    """(B, 1, T, S) additive mask allowing key j < visible[b, t]."""
    allow = np.arange(s)[None, None, :] < visible[:, :, None]
    return np.where(allow, 0.0, NEG_INF)[:, None]


def _embed(t, table_name, ids, cfg, train_rng, pos_table):
    x = ad.embedding(t[table_name], ids)
    x = ad.scale(x, math.sqrt(cfg.embed_dim))
    x = ad.add_const(x, pos_table[: ids.shape[1]][None])
    return ad.dropout(x, cfg.dropout, train_rng)


_pos_cache: dict[tuple[int, int], np.ndarray] = {}


def _pos_table(n_pos: int, dim: int) -> np.ndarray:
    key = (n_pos, dim)
    if key not in _pos_cache:
        _pos_cache[key] = sinusoid_table(n_pos, dim)
    return _pos_cache[key]


class _Graph:
    """Tensor views of the parameters plus the positional table."""

    def __init__(self, ckpt: ScorerCheckpoint, trainable: bool):
        self.cfg = ckpt.config
        self.t = {k: ad.Tensor(v, requires_grad=trainable) for k, v in ckpt.params.items()}
        self.pos = _pos_table(self.cfg.max_positions, self.cfg.embed_dim)

    def encode(self, src_ids: np.ndarray, train_rng=None) -> ad.Tensor:
        cfg, t = self.cfg, self.t
        drop = cfg.dropout if train_rng is not None else 0.0
        x = _embed(t, "src_embed", src_ids, cfg, train_rng, self.pos)
        bias = _causal_bias(src_ids.shape[1])
        for layer in range(cfg.encoder_layers):
            pre = f"enc.{layer}"
            h = _ln(t, f"{pre}.ln1", x)
            x = ad.add(x, _mha(t, f"{pre}.self", h, h, bias, cfg.heads, train_rng,
                               drop, cfg.rel_window))
            x = ad.add(x, _ffn(t, f"{pre}.ffn", _ln(t, f"{pre}.ln2", x), train_rng, drop))
        return _ln(t, "enc.final_ln", x)

    def decode(self, enc_out: ad.Tensor, tgt_in: np.ndarray, visible: np.ndarray,
               train_rng=None) -> ad.Tensor:
        """Logits (B, T, V); row t may attend the first visible[b, t] source keys."""
        cfg, t = self.cfg, self.t
        drop = cfg.dropout if train_rng is not None else 0.0
        x = _embed(t, "tgt_embed", tgt_in, cfg, train_rng, self.pos)
        self_bias = _causal_bias(tgt_in.shape[1])
        cross_bias = _visibility_bias(visible, enc_out.data.shape[1])
        for layer in range(cfg.decoder_layers):
            pre = f"dec.{layer}"
            h = _ln(t, f"{pre}.ln1", x)
            x = ad.add(x, _mha(t, f"{pre}.self", h, h, self_bias, cfg.heads, train_rng,
                               drop, cfg.rel_window))
            x = ad.add(x, _mha(t, f"{pre}.cross", _ln(t, f"{pre}.ln2", x),
                               enc_out, cross_bias, cfg.heads, train_rng, drop,
                               cfg.rel_window))
            x = ad.add(x, _ffn(t, f"{pre}.ffn", _ln(t, f"{pre}.ln3", x), train_rng, drop))
        x = _ln(t, "dec.final_ln", x)
        return ad.linear(x, t["out.w"])


# ---------------------------------------------------------------------------
# scoring

def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class StreamScorer:
    """Frozen scorer for one source sentence with the encoder pass cached.

    `visible` arguments are raw encoder positions over source + sentinel,
    in [1, J + 1]; policy-level callers translate read counts through
    visible_count() first.
    """

    def __init__(self, ckpt: ScorerCheckpoint, source: tuple[int, ...]):
        self.source = tuple(source)
        self.graph = _Graph(ckpt, trainable=False)
        self.src_row = np.array([list(source) + [EOS]], dtype=np.int64)
        with ad.no_grad():
            self.enc_out = self.graph.encode(self.src_row)

    @property
    def source_len(self) -> int:
        return len(self.source)

    def _logits(self, tgt_in: np.ndarray, visible: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.graph.decode(self.enc_out, tgt_in, visible).data

    def next_token_dist(self, prefix: tuple[int, ...], visible: int) -> np.ndarray:
        if not 1 <= visible <= self.source_len + 1:
            raise ValueError(f"visible count {visible} outside [1, {self.source_len + 1}]")
        tgt_in = np.array([list(prefix)], dtype=np.int64)
        vis = np.full((1, len(prefix)), visible, dtype=np.int64)
        logits = self._logits(tgt_in, vis)
        return _softmax_rows(logits[0, -1])

    def greedy_next(self, prefix: tuple[int, ...], visible: int) -> int:
        return int(np.argmax(self.next_token_dist(prefix, visible)))

    def teacher_probs(self, target: tuple[int, ...], read_counts: np.ndarray) -> np.ndarray:
        """p(y_i | x_<=g_i, y_<i) for every target position in one pass.

        `read_counts` has one policy read count per target token.
        """
        if len(read_counts) != len(target):
            raise ValueError("one read count per target token required")
        tgt_in = np.array([[BOS] + list(target[:-1])], dtype=np.int64)
        vis = np.array([[visible_count(int(g), self.source_len) for g in read_counts]],
                       dtype=np.int64)
        logits = self._logits(tgt_in, vis)
        probs = _softmax_rows(logits[0])
        return probs[np.arange(len(target)), list(target)]


def score_prefix(ckpt: ScorerCheckpoint, query: PrefixQuery) -> np.ndarray:
    """Distribution over the target vocabulary for the next token."""
    scorer = StreamScorer(ckpt, query.source)
    vis = visible_count(query.read_count, len(query.source))
    return scorer.next_token_dist(query.target_prefix, vis)


def score_prefix_batch(ckpt: ScorerCheckpoint, queries: list[PrefixQuery]) -> list[np.ndarray]:
    """Batched equivalent of score_prefix; padding does not leak into rows."""
    if not queries:
        return []
    graph = _Graph(ckpt, trainable=False)
    s_max = max(len(q.source) for q in queries) + 1
    t_max = max(len(q.target_prefix) for q in queries)
    b = len(queries)
    src = np.full((b, s_max), PAD, dtype=np.int64)
    tgt = np.full((b, t_max), PAD, dtype=np.int64)
    vis = np.ones((b, t_max), dtype=np.int64)
    for n, q in enumerate(queries):
        src[n, : len(q.source)] = q.source
        src[n, len(q.source)] = EOS
        tgt[n, : len(q.target_prefix)] = q.target_prefix
        vis[n, :] = visible_count(q.read_count, len(q.source))
    with ad.no_grad():
        logits = graph.decode(graph.encode(src), tgt, vis).data
    rows = [logits[n, len(q.target_prefix) - 1] for n, q in enumerate(queries)]
    return [_softmax_rows(r) for r in rows]


def greedy_next_token(ckpt: ScorerCheckpoint, query: PrefixQuery) -> int:
    """Argmax of score_prefix; ties resolve to the lowest token id."""
    return int(np.argmax(score_prefix(ckpt, query)))


def token_embedding(ckpt: ScorerCheckpoint, side: str, token: int) -> np.ndarray:
    if side not in ("source", "target"):
        raise ValueError(f"unknown side {side!r}")
    table = ckpt.params["src_embed" if side == "source" else "tgt_embed"]
    if not 0 <= token < table.shape[0]:
        raise ValueError(f"token id {token} outside vocabulary")
    return table[token].copy()


# ---------------------------------------------------------------------------
# training

def _training_arrays(pairs: list[SentencePair], read_count_rows: list[np.ndarray]):
    """Pad a batch; targets get the end sentinel appended and its read count
    is the full source."""
    b = len(pairs)
    s_max = max(p.source_len for p in pairs) + 1
    t_max = max(p.target_len for p in pairs) + 1
    src = np.full((b, s_max), PAD, dtype=np.int64)
    tgt_in = np.full((b, t_max), PAD, dtype=np.int64)
    labels = np.full((b, t_max), PAD, dtype=np.int64)
    weights = np.zeros((b, t_max))
    vis = np.ones((b, t_max), dtype=np.int64)
    for n, (pair, counts) in enumerate(zip(pairs, read_count_rows)):
        j, i = pair.source_len, pair.target_len
        src[n, :j] = pair.source
        src[n, j] = EOS
        tgt_in[n, 0] = BOS
        tgt_in[n, 1 : i + 1] = pair.target
        labels[n, :i] = pair.target
        labels[n, i] = EOS
        weights[n, : i + 1] = 1.0
        vis[n, :i] = [visible_count(int(g), j) for g in counts]
        vis[n, i] = j + 1
    return src, tgt_in, labels, weights, vis


def _batch_loss(graph: _Graph, batch, train_rng) -> ad.Tensor:
    src, tgt_in, labels, weights, vis = batch
    enc = graph.encode(src, train_rng)
    logits = graph.decode(enc, tgt_in, vis, train_rng)
    return ad.cross_entropy(logits, labels, weights, graph.cfg.label_smoothing)


def _run_training(ckpt: ScorerCheckpoint, pairs, schedule: TrainSchedule,
                  counts_fn, objective: str) -> ScorerCheckpoint:
    """Shared SGD loop; `counts_fn(pair, rng)` yields that update's read counts."""
    from .optim import Adam

    out = ckpt.clone()
    graph = _Graph(out, trainable=True)
    opt = Adam(graph.t, lr=schedule.lr, warmup=schedule.warmup, betas=schedule.betas,
               weight_decay=schedule.weight_decay)
    shuffle_rng = substream(schedule.seed, "train-shuffle")
    path_rng = substream(schedule.seed, "train-paths")
    drop_rng = substream(schedule.seed, "train-dropout") if out.config.dropout > 0 else None
    n = len(pairs)
    lengths = np.array([p.source_len + p.target_len for p in pairs])
    step = out.meta.get("step", 0)
    for epoch in range(schedule.epochs):
        # shuffle, then stable-sort by length so batches carry little padding
        order = shuffle_rng.permutation(n)
        order = order[np.argsort(lengths[order], kind="stable")]
        batches = [order[lo : lo + schedule.batch_size]
                   for lo in range(0, n, schedule.batch_size)]
        for bi in shuffle_rng.permutation(len(batches)):
            chunk = [pairs[k] for k in batches[bi]]
            rows = [counts_fn(p, path_rng) for p in chunk]
            loss = _batch_loss(graph, _training_arrays(chunk, rows), drop_rng)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at step {step}")
            loss.backward()
            opt.step()
            step += 1
            if schedule.log_every and step % schedule.log_every == 0:
                print(f"{objective} step {step} loss {float(loss.data):.4f}")
    for k, tensor in graph.t.items():
        out.params[k] = tensor.data
    out.meta.update({"step": step, "objective": objective})
    return out


def train_policy_ce(ckpt: ScorerCheckpoint, pairs: list[SentencePair],
                    policies: list[list[int]], schedule: TrainSchedule) -> ScorerCheckpoint:
    """Cross-entropy training under fixed per-sentence read-count policies."""
    if len(pairs) != len(policies):
        raise ValueError("one policy per sentence pair required")
    by_id = {}
    for pair, pol in zip(pairs, policies):
        if len(pol) != pair.target_len:
            raise ValueError("policy length must equal target length")
        prev = 0
        for g in pol:
            if not 1 <= g <= pair.source_len or g < prev:
                raise ValueError("policy must be monotone within [1, J]")
            prev = g
        by_id[id(pair)] = np.asarray(pol, dtype=np.int64)
    return _run_training(ckpt, pairs, schedule,
                         lambda p, rng: by_id[id(p)], "policy_ce")


def waitk_counts(k: int, target_len: int, source_len: int) -> np.ndarray:
    return np.minimum(k + np.arange(target_len), source_len).astype(np.int64)


def train_multipath(ckpt: ScorerCheckpoint, pairs: list[SentencePair],
                    schedule: TrainSchedule) -> ScorerCheckpoint:
    """Wait-k training with k ~ Uniform{1..J} per sentence per update."""
    if not pairs:
        raise ValueError("no training pairs")

    def counts(pair: SentencePair, rng) -> np.ndarray:
        k = int(rng.integers(1, pair.source_len + 1))
        return waitk_counts(k, pair.target_len, pair.source_len)

    return _run_training(ckpt, pairs, schedule, counts, "multipath")


def training_loss(ckpt: ScorerCheckpoint, pairs: list[SentencePair],
                  policies: list[list[int]]) -> float:
    """Smoothed policy cross-entropy without updating parameters."""
    graph = _Graph(ckpt, trainable=False)
    rows = [np.asarray(p, dtype=np.int64) for p in policies]
    with ad.no_grad():
        loss = _batch_loss(graph, _training_arrays(pairs, rows), None)
    return float(loss.data)


# ---------------------------------------------------------------------------
# persistence

def save(ckpt: ScorerCheckpoint, path) -> None:
    write_container(path, kind="scorer", config=asdict(ckpt.config),
                    meta=ckpt.meta, arrays=ckpt.params)


def load(path) -> ScorerCheckpoint:
    config_dict, meta, arrays = read_container(path, kind="scorer")
    config = ModelConfig(**config_dict)
    return ScorerCheckpoint(arrays, config, meta)
