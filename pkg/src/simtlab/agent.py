"""Recurrent READ/WRITE decision agent.

At every step the agent sees the translation status: the most recently
read source token, the most recently produced target token and the last
executed action.  Source and target token embeddings come frozen from the
translation scorer, are concatenated and projected; the action goes
through its own embedding and projection; both projections feed one LSTM
layer whose state carries the decision history.  A sigmoid head gives the
probability of WRITE.

Supervision comes from action sequences derived from constructed
policies.  By default the target tokens recorded in the statuses are the
scorer's own greedy outputs under the policy rather than the references,
so training statuses match what the agent will see at inference; the
reference-token variant is kept as an ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .actions import READ, WRITE, policy_to_actions
from .corpus import BOS, SentencePair
from .model import (NumericError, ScorerCheckpoint, StreamScorer, TrainSchedule,
                    visible_count)
from .optim import Adam
from .seeding import substream
from .serialize import read_container, write_container

ACTION_IDS = {READ: 0, WRITE: 1}


@dataclass(frozen=True)
class AgentConfig:
    hidden_dim: int = 64
    action_embed_dim: int = 64
    status_projection_dim: int = 64
    scorer_embed_dim: int = 64

    def __post_init__(self):
        if min(self.hidden_dim, self.action_embed_dim,
               self.status_projection_dim, self.scorer_embed_dim) <= 0:
            raise ValueError("all dimensions must be positive")


@dataclass(frozen=True)
class TranslationStatus:
    last_source_token: int
    last_target_token: int
    last_action: str


@dataclass
class AgentState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class AgentCheckpoint:
    params: dict[str, np.ndarray]
    config: AgentConfig
    meta: dict = field(default_factory=dict)

    def clone(self) -> "AgentCheckpoint":
        return AgentCheckpoint({k: v.copy() for k, v in self.params.items()},
                               self.config, dict(self.meta))


@dataclass
class Episode:
    """Statuses for steps t = 2..T plus the full T-step action labels.

    The first action is the forced initial READ; it appears in `labels`
    but has no status row, so len(statuses) == len(labels) - 1.
    """

    statuses: list[TranslationStatus]
    labels: str


def init_agent(config: AgentConfig, seed: int) -> AgentCheckpoint:
    rng = substream(seed, "agent-init")
    h, a, p, d = (config.hidden_dim, config.action_embed_dim,
                  config.status_projection_dim, config.scorer_embed_dim)

    def xavier(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    params = {
        "status.w": xavier(2 * d, p),
        "status.b": np.zeros(p),
        "act_embed": rng.normal(0.0, a ** -0.5, size=(2, a)),
        "act.w": xavier(a, p),
        "act.b": np.zeros(p),
        "lstm.wx": xavier(2 * p, 4 * h),
        "lstm.wh": xavier(h, 4 * h),
        "lstm.b": np.zeros(4 * h),
        "head.w": xavier(h, 1),
        "head.b": np.zeros(1),
    }
    return AgentCheckpoint(params, config, {"step": 0, "seed": seed})


def initial_state(config: AgentConfig) -> AgentState:
    return AgentState(h=np.zeros(config.hidden_dim), c=np.zeros(config.hidden_dim))


def _slice(x, lo, hi):
    """View of the last axis; gradient scatters back into place."""

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., lo:hi] = g
        ad._accum(x, full)

    return ad._make(x.data[..., lo:hi], (x,), backward)


def _lstm_cell(t, x, h_prev, c_prev):
    z = ad.add(ad.add(ad.linear(x, t["lstm.wx"]), ad.linear(h_prev, t["lstm.wh"])),
               t["lstm.b"])
    zi = z.data.shape[-1] // 4
    i_g = ad.sigmoid(_slice(z, 0, zi))
    f_g = ad.sigmoid(_slice(z, zi, 2 * zi))
    o_g = ad.sigmoid(_slice(z, 2 * zi, 3 * zi))
    g_g = ad.tanh(_slice(z, 3 * zi, 4 * zi))
    c = ad.add(ad.mul(f_g, c_prev), ad.mul(i_g, g_g))
    h = ad.mul(o_g, ad.tanh(c))
    return h, c


def _status_features(scorer: ScorerCheckpoint, src_tok: np.ndarray,
                     tgt_tok: np.ndarray) -> np.ndarray:
    """Frozen concatenated scorer embeddings for a batch of statuses."""
    src_e = scorer.params["src_embed"][src_tok]
    tgt_e = scorer.params["tgt_embed"][tgt_tok]
    return np.concatenate([src_e, tgt_e], axis=-1)


def _forward_probs(t, agent_cfg: AgentConfig, feats: np.ndarray, acts: np.ndarray):
    """WRITE logits for a padded batch of episodes, shape (B, T)."""
    b, steps, _ = feats.shape
    h = ad.Tensor(np.zeros((b, agent_cfg.hidden_dim)))
    c = ad.Tensor(np.zeros((b, agent_cfg.hidden_dim)))
    logits = []
    for s in range(steps):
        x_status = ad.add(ad.linear(ad.Tensor(feats[:, s]), t["status.w"]), t["status.b"])
        x_act = ad.add(ad.linear(ad.embedding(t["act_embed"], acts[:, s]), t["act.w"]),
                       t["act.b"])
        x = ad.concat([x_status, x_act], axis=-1)
        h, c = _lstm_cell(t, x, h, c)
        logits.append(ad.add(ad.linear(h, t["head.w"]), t["head.b"]))
    return ad.concat(logits, axis=-1)


def agent_step(agent: AgentCheckpoint, state: AgentState, status: TranslationStatus,
               scorer: ScorerCheckpoint) -> tuple[float, AgentState]:
    """Probability of WRITE for one status, advancing the recurrent state."""
    feats = _status_features(scorer, np.array([status.last_source_token]),
                             np.array([status.last_target_token]))
    act_ids = np.array([ACTION_IDS[status.last_action]])
    t = {k: ad.Tensor(v) for k, v in agent.params.items()}
    with ad.no_grad():
        x_status = ad.add(ad.linear(ad.Tensor(feats), t["status.w"]), t["status.b"])
        x_act = ad.add(ad.linear(ad.embedding(t["act_embed"], act_ids), t["act.w"]),
                       t["act.b"])
        x = ad.concat([x_status, x_act], axis=-1)
        h, c = _lstm_cell(t, x, ad.Tensor(state.h[None]), ad.Tensor(state.c[None]))
        logit = ad.add(ad.linear(h, t["head.w"]), t["head.b"])
    p = float(1.0 / (1.0 + np.exp(-logit.data[0, 0])))
    return p, AgentState(h=h.data[0].copy(), c=c.data[0].copy())


def decide(agent: AgentCheckpoint, state: AgentState, status: TranslationStatus,
           scorer: ScorerCheckpoint, threshold: float = 0.5) -> tuple[str, AgentState]:
    """WRITE iff p(WRITE) >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p, new_state = agent_step(agent, state, status, scorer)
    return (WRITE if p >= threshold else READ), new_state


def rollout_statuses(scorer_ckpt: ScorerCheckpoint, pair: SentencePair,
                     policy: list[int], status_source: str = "generated") -> Episode:
    """Execute a policy's action sequence and record the status stream.

    With status_source="generated" the target tokens entering the
    statuses are the scorer's greedy outputs under the policy; with
    "ground_truth" they are the reference tokens.
    """
    if status_source not in ("generated", "ground_truth"):
        raise ValueError(f"unknown status source {status_source!r}")
    j_total = pair.source_len
    labels = policy_to_actions(policy, j_total)
    scorer = StreamScorer(scorer_ckpt, pair.source)
    statuses = []
    prefix = [BOS]
    j = 1  # one source token read by the forced first action
    i = 0
    last_action = READ
    for t in range(1, len(labels)):
        statuses.append(TranslationStatus(
            last_source_token=pair.source[min(j, j_total) - 1],
            last_target_token=prefix[-1],
            last_action=last_action,
        ))
        action = labels[t]
        if action == WRITE:
            if status_source == "generated":
                tok = scorer.greedy_next(tuple(prefix), visible_count(policy[i], j_total))
            else:
                tok = pair.target[i]
            prefix.append(tok)
            i += 1
        else:
            j += 1
        last_action = action
    return Episode(statuses=statuses, labels=labels)


def make_training_episodes(scorer_ckpt: ScorerCheckpoint, pairs: list[SentencePair],
                           policies: list[list[int]],
                           status_source: str = "generated") -> list[Episode]:
    if len(pairs) != len(policies):
        raise ValueError("one policy per pair required")
    return [rollout_statuses(scorer_ckpt, p, g, status_source)
            for p, g in zip(pairs, policies)]


def _episode_arrays(episodes: list[Episode], scorer: ScorerCheckpoint):
    b = len(episodes)
    steps = max(len(e.statuses) for e in episodes)
    d = scorer.params["src_embed"].shape[1]
    feats = np.zeros((b, steps, 2 * d))
    acts = np.zeros((b, steps), dtype=np.int64)
    labels = np.zeros((b, steps))
    weight = np.zeros((b, steps))
    for n, e in enumerate(episodes):
        for s, st in enumerate(e.statuses):
            feats[n, s, :d] = scorer.params["src_embed"][st.last_source_token]
            feats[n, s, d:] = scorer.params["tgt_embed"][st.last_target_token]
            acts[n, s] = ACTION_IDS[st.last_action]
            labels[n, s] = ACTION_IDS[e.labels[s + 1]]
            weight[n, s] = 1.0
    return feats, acts, labels, weight


def train_agent(agent: AgentCheckpoint, episodes: list[Episode],
                scorer: ScorerCheckpoint, schedule: TrainSchedule) -> AgentCheckpoint:
    """Binary cross-entropy over the labelled actions."""
    if not episodes:
        raise ValueError("no training episodes")
    out = agent.clone()
    t = {k: ad.Tensor(v, requires_grad=True) for k, v in out.params.items()}
    opt = Adam(t, lr=schedule.lr, warmup=schedule.warmup, betas=schedule.betas,
               weight_decay=schedule.weight_decay)
    rng = substream(schedule.seed, "agent-shuffle")
    n = len(episodes)
    step = out.meta.get("step", 0)
    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, schedule.batch_size):
            chunk = [episodes[k] for k in order[lo : lo + schedule.batch_size]]
            feats, acts, labels, weight = _episode_arrays(chunk, scorer)
            logits = _forward_probs(t, out.config, feats, acts)
            loss = ad.bce_logits(logits, labels, weight)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite agent loss at step {step}")
            loss.backward()
            opt.step()
            step += 1
            if schedule.log_every and step % schedule.log_every == 0:
                print(f"agent step {step} loss {float(loss.data):.4f}")
    for k, tensor in t.items():
        out.params[k] = tensor.data
    out.meta.update({"step": step})
    return out


def action_accuracy(agent: AgentCheckpoint, episodes: list[Episode],
                    scorer: ScorerCheckpoint, threshold: float = 0.5) -> float:
    """Fraction of labelled steps the thresholded agent reproduces."""
    feats, acts, labels, weight = _episode_arrays(episodes, scorer)
    t = {k: ad.Tensor(v) for k, v in agent.params.items()}
    with ad.no_grad():
        logits = _forward_probs(t, agent.config, feats, acts).data
    pred = (logits >= np.log(threshold / (1.0 - threshold))) if threshold != 0.5 \
        else (logits >= 0.0)
    hits = ((pred == labels.astype(bool)) * weight).sum()
    return float(hits / weight.sum())


def save(agent: AgentCheckpoint, path) -> None:
    write_container(path, kind="agent", config=asdict(agent.config),
                    meta=agent.meta, arrays=agent.params)


def load(path) -> AgentCheckpoint:
    config_dict, meta, arrays = read_container(path, kind="agent")
    return AgentCheckpoint(arrays, AgentConfig(**config_dict), meta)
