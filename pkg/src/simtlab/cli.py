"""Command-line interface.

Every command reads an optional YAML config (flags override file values),
writes its artifacts plus the effective config and a manifest into the
output directory, and is deterministic given the seed.  Exit codes:
0 success, 1 usage or configuration error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import actions as actions_mod
from . import agent as agent_mod
from . import corpus as corpus_mod
from . import decode as decode_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import search as search_mod
from .config import ConfigError, RunConfig, prepare_out_dir, write_manifest
from .corpus import CorpusError, SyntheticTaskSpec, Vocabulary
from .metrics import MetricError
from .model import NumericError, TrainSchedule
from .serialize import CheckpointError

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _schedule(cfg: RunConfig, epochs: int, lr: float, batch: int | None = None,
              seed_offset: int = 0) -> TrainSchedule:
    return TrainSchedule(epochs=epochs, batch_size=batch or cfg.batch_size, lr=lr,
                         warmup=cfg.warmup, weight_decay=cfg.weight_decay,
                         seed=cfg.seed + seed_offset)


def _model_config(cfg: RunConfig, src_vocab: int, tgt_vocab: int) -> model_mod.ModelConfig:
    return model_mod.ModelConfig(
        src_vocab=src_vocab, tgt_vocab=tgt_vocab,
        encoder_layers=cfg.enc_layers, decoder_layers=cfg.dec_layers,
        heads=cfg.heads, embed_dim=cfg.embed_dim, ffn_dim=cfg.ffn_dim,
        dropout=cfg.dropout, label_smoothing=cfg.label_smoothing,
        rel_window=cfg.rel_window,
    )


def _load_vocabs(args) -> tuple[Vocabulary, Vocabulary]:
    return Vocabulary.load(args.vocab_source), Vocabulary.load(args.vocab_target)


def _load_pairs(source, target, vocab_s, vocab_t):
    return corpus_mod.load_parallel(source, target, vocab_s, vocab_t)


def _interval(cfg: RunConfig) -> search_mod.IntervalSchedule:
    return search_mod.IntervalSchedule(cfg.l1, cfg.r1)


# ---------------------------------------------------------------------------
# commands

def cmd_synth_data(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    spec = SyntheticTaskSpec(cfg.vocab_size, (cfg.min_len, cfg.max_len),
                             cfg.lookahead, cfg.seed)
    total = cfg.n_train + cfg.n_dev + cfg.n_test
    pairs = corpus_mod.generate_synthetic(spec, total)
    vocab = corpus_mod.identity_vocab(cfg.vocab_size)
    splits = {
        "train": pairs[: cfg.n_train],
        "dev": pairs[cfg.n_train : cfg.n_train + cfg.n_dev],
        "test": pairs[cfg.n_train + cfg.n_dev :],
    }
    artifacts = []
    for name, split in splits.items():
        for side, suffix in (("source", "src"), ("target", "tgt")):
            path = out / f"{name}.{suffix}"
            corpus_mod.save_sentences(split, vocab, path, side)
            artifacts.append(path.name)
    align_path = out / "test.align"
    corpus_mod.save_alignments(
        corpus_mod.synthetic_alignments(spec, splits["test"]), align_path)
    artifacts.append(align_path.name)
    for side in ("src", "tgt"):
        path = out / f"vocab.{side}"
        vocab.save(path)
        artifacts.append(path.name)
    write_manifest(out, cfg, "synth-data", artifacts)
    print(f"wrote {len(splits['train'])}/{len(splits['dev'])}/{len(splits['test'])} "
          f"train/dev/test pairs to {out}")
    return 0


def cmd_make_vocab(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    artifacts = []
    for path, side in ((args.source, "src"), (args.target, "tgt")):
        sentences = corpus_mod.read_token_lines(path)
        vocab = corpus_mod.build_vocab([s for s in sentences if s], cfg.min_freq)
        vpath = out / f"vocab.{side}"
        vocab.save(vpath)
        artifacts.append(vpath.name)
        print(f"{side}: {len(vocab)} entries (min_freq={cfg.min_freq})")
    write_manifest(out, cfg, "make-vocab", artifacts)
    return 0


def cmd_train_multipath(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.train_source, args.train_target, vocab_s, vocab_t)
    ckpt = model_mod.init_checkpoint(_model_config(cfg, len(vocab_s), len(vocab_t)),
                                     cfg.seed)
    ckpt = model_mod.train_multipath(ckpt, pairs,
                                     _schedule(cfg, cfg.epochs, cfg.lr))
    path = out / "scorer.ckpt"
    model_mod.save(ckpt, path)
    write_manifest(out, cfg, "train-multipath", [path.name])
    print(f"trained multipath scorer for {cfg.epochs} epochs -> {path}")
    return 0


def cmd_search(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.source, args.target, vocab_s, vocab_t)
    ckpt = model_mod.load(args.scorer)
    sched = _interval(cfg)
    artifacts = ["policies.txt"]
    policies = []
    traces_path = out / "traces.txt"
    all_traces = []
    for pair in pairs:
        if args.traces:
            policy, traces = search_mod.search_policy(ckpt, pair, sched,
                                                      return_traces=True)
            all_traces.extend(traces)
        else:
            policy = search_mod.search_policy(ckpt, pair, sched)
        policies.append(policy)
    search_mod.save_policies(policies, out / "policies.txt")
    if args.traces:
        search_mod.dump_traces(all_traces, traces_path)
        artifacts.append(traces_path.name)
    write_manifest(out, cfg, "search", artifacts)
    print(f"searched {len(policies)} policies with interval "
          f"[{cfg.l1}, {cfg.r1}] -> {out / 'policies.txt'}")
    return 0


def cmd_alternate_train(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    train = _load_pairs(args.train_source, args.train_target, vocab_s, vocab_t)
    dev = _load_pairs(args.dev_source, args.dev_target, vocab_s, vocab_t)
    ckpt = model_mod.load(args.scorer)
    best, policies = search_mod.alternate_train(
        ckpt, train, dev, _interval(cfg), cfg.rounds,
        _schedule(cfg, cfg.ft_epochs, cfg.ft_lr, seed_offset=1))
    spath = out / "scorer.ckpt"
    model_mod.save(best, spath)
    ppath = out / "train_policies.txt"
    search_mod.save_policies(policies, ppath)
    write_manifest(out, cfg, "alternate-train", [spath.name, ppath.name])
    print(f"{cfg.rounds} alternating rounds -> {spath}")
    return 0


def cmd_train_agent(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.train_source, args.train_target, vocab_s, vocab_t)
    scorer = model_mod.load(args.scorer)
    if args.policies:
        policies = search_mod.load_policies(args.policies)
        if len(policies) != len(pairs):
            raise CorpusError(f"{len(policies)} policies for {len(pairs)} pairs")
    else:
        policies = search_mod.search_policies(scorer, pairs, _interval(cfg))
    episodes = agent_mod.make_training_episodes(scorer, pairs, policies,
                                                cfg.status_source)
    agent_cfg = agent_mod.AgentConfig(
        hidden_dim=cfg.agent_hidden, action_embed_dim=cfg.agent_embed,
        status_projection_dim=cfg.agent_proj,
        scorer_embed_dim=scorer.config.embed_dim)
    agent = agent_mod.init_agent(agent_cfg, cfg.seed)
    agent = agent_mod.train_agent(
        agent, episodes, scorer,
        _schedule(cfg, cfg.agent_epochs, cfg.agent_lr, batch=cfg.agent_batch,
                  seed_offset=2))
    accuracy = agent_mod.action_accuracy(agent, episodes, scorer)
    agent.meta["train_accuracy"] = accuracy
    path = out / "agent.ckpt"
    agent_mod.save(agent, path)
    write_manifest(out, cfg, "train-agent", [path.name])
    print(f"agent trained on {len(episodes)} episodes "
          f"({cfg.status_source} statuses), action accuracy {accuracy:.3f}")
    return 0


def _decode_corpus(cfg: RunConfig, args, scorer, pairs):
    driver = args.driver
    results = []
    if driver == "agent":
        agent = agent_mod.load(args.agent)
        for p in pairs:
            results.append(decode_mod.simultaneous_decode(
                scorer, agent, p.source, cfg.threshold))
    elif driver == "oracle":
        sched = _interval(cfg)
        for p in pairs:
            policy = search_mod.search_policy(scorer, p, sched)
            results.append(decode_mod.policy_decode(scorer, policy, p.source))
    elif driver == "waitk":
        for p in pairs:
            policy = search_mod.waitk_policy(cfg.k, p.target_len + 8, p.source_len)
            results.append(decode_mod.policy_decode(scorer, policy, p.source))
    elif driver == "full":
        for p in pairs:
            policy = [p.source_len]
            results.append(decode_mod.policy_decode(scorer, policy, p.source))
    else:
        raise ConfigError(f"unknown driver {driver!r}")
    return results


def cmd_decode(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.source, args.target, vocab_s, vocab_t)
    scorer = model_mod.load(args.scorer)
    results = _decode_corpus(cfg, args, scorer, pairs)
    hyp_path = out / "hyps.txt"
    with open(hyp_path, "w", encoding="utf-8") as f:
        for res in results:
            f.write(" ".join(vocab_t.decode(list(res.hypothesis))) + "\n")
    artifacts = [hyp_path.name]
    if args.emit_policies:
        search_mod.save_policies([list(r.realized_policy) for r in results],
                                 out / "realized_policies.txt")
        actions_mod.save_actions([r.action_log for r in results],
                                 out / "actions.txt")
        artifacts += ["realized_policies.txt", "actions.txt"]
    write_manifest(out, cfg, "decode", artifacts)
    print(f"decoded {len(results)} sentences with driver {args.driver} -> {hyp_path}")
    return 0


def _corpus_metrics(results, pairs, alignments=None):
    als = []
    for res, p in zip(results, pairs):
        if res.hypothesis:
            als.append(metrics_mod.average_lagging(
                list(res.realized_policy), p.source_len, len(res.hypothesis)).al)
    bleu = metrics_mod.corpus_bleu([list(r.hypothesis) for r in results],
                                   [list(p.target) for p in pairs])
    row = {"AL": float(np.mean(als)) if als else float("nan"), "BLEU": bleu}
    if alignments is not None:
        row["sufficiency"] = metrics_mod.sufficiency(
            [list(r.realized_policy) for r in results], alignments)
    return row


def cmd_eval(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.source, args.target, vocab_s, vocab_t)
    scorer = model_mod.load(args.scorer)
    alignments = corpus_mod.load_alignments(args.alignments) if args.alignments else None
    if alignments is not None and len(alignments) != len(pairs):
        raise CorpusError(f"{len(alignments)} alignments for {len(pairs)} pairs")
    results = _decode_corpus(cfg, args, scorer, pairs)
    row = _corpus_metrics(results, pairs, alignments)
    report_path = out / "report.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump({"driver": args.driver, **row}, f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(out, cfg, "eval", [report_path.name])
    parts = [f"AL {row['AL']:.2f}", f"BLEU {row['BLEU']:.2f}"]
    if "sufficiency" in row:
        parts.append(f"sufficiency {row['sufficiency']:.3f}")
    print(f"{args.driver}: " + "  ".join(parts))
    return 0


def _parse_pairs_list(text: str) -> list[tuple[int, int]]:
    out = []
    for piece in text.split(","):
        l, _, r = piece.partition(":")
        out.append((int(l), int(r)))
    return out


def cmd_sweep(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.source, args.target, vocab_s, vocab_t)
    scorer = model_mod.load(args.scorer)
    alignments = corpus_mod.load_alignments(args.alignments) if args.alignments else None
    if alignments is not None and len(alignments) != len(pairs):
        raise CorpusError(f"{len(alignments)} alignments for {len(pairs)} pairs")
    rows = []
    if args.intervals:
        for l1, r1 in _parse_pairs_list(args.intervals):
            sched = search_mod.IntervalSchedule(l1, r1)
            results = [decode_mod.policy_decode(
                scorer, search_mod.search_policy(scorer, p, sched), p.source)
                for p in pairs]
            rows.append((f"{l1}:{r1}", _corpus_metrics(results, pairs, alignments)))
    elif args.ks:
        for k in (int(x) for x in args.ks.split(",")):
            results = [decode_mod.policy_decode(
                scorer, search_mod.waitk_policy(k, p.target_len + 8, p.source_len),
                p.source) for p in pairs]
            rows.append((f"k={k}", _corpus_metrics(results, pairs, alignments)))
    elif args.thresholds:
        agent = agent_mod.load(args.agent)
        for th in (float(x) for x in args.thresholds.split(",")):
            results = [decode_mod.simultaneous_decode(scorer, agent, p.source, th)
                       for p in pairs]
            rows.append((f"th={th:g}", _corpus_metrics(results, pairs, alignments)))
    else:
        raise ConfigError("sweep needs --intervals, --ks or --thresholds")
    rows.sort(key=lambda item: item[1]["AL"])
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("config,AL,BLEU,sufficiency\n")
        for name, row in rows:
            suff = f"{row['sufficiency']:.2f}" if "sufficiency" in row else ""
            f.write(f"{name},{row['AL']:.2f},{row['BLEU']:.2f},{suff}\n")
    json_path = out / "sweep.json"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([{"config": name, **row} for name, row in rows], f,
                  indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(out, cfg, "sweep", [csv_path.name, json_path.name])
    print(csv_path.read_text(encoding="utf-8"), end="")
    return 0


def cmd_profile(cfg: RunConfig, args) -> int:
    out = prepare_out_dir(cfg)
    vocab_s, vocab_t = _load_vocabs(args)
    pairs = _load_pairs(args.source, args.target, vocab_s, vocab_t)
    scorer = model_mod.load(args.scorer)
    bucket = corpus_mod.length_bucket(pairs, args.target_len)
    if not bucket:
        raise CorpusError(f"no pairs with target length {args.target_len}")
    q_grid = [float(x) for x in args.q.split(",")]
    profile = metrics_mod.probability_profile(scorer, bucket, q_grid)
    path = out / "profile.csv"
    metrics_mod.save_profile_csv(profile, q_grid, path)
    write_manifest(out, cfg, "profile", [path.name])
    print(f"profiled {len(bucket)} pairs of target length {args.target_len} -> {path}")
    return 0


# ---------------------------------------------------------------------------
# wiring

def _add_config_flags(p: argparse.ArgumentParser, keys: list[str]) -> None:
    p.add_argument("--config", default=None, help="YAML config file")
    types = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}
    for key in keys:
        default_type = RunConfig.__dataclass_fields__[key].type
        caster = {"int": int, "float": float, "str": str}[default_type]
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                       type=caster)


_COMMON = ["seed", "out_dir", "workers"]
_MODEL_KEYS = ["enc_layers", "dec_layers", "heads", "embed_dim", "ffn_dim",
               "dropout", "label_smoothing", "rel_window"]
_TRAIN_KEYS = ["epochs", "batch_size", "lr", "warmup", "weight_decay"]
_SEARCH_KEYS = ["l1", "r1"]


def build_parser() -> _Parser:
    parser = _Parser(prog="simtlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic task corpus")
    _add_config_flags(p, _COMMON + ["vocab_size", "min_len", "max_len", "lookahead",
                                    "n_train", "n_dev", "n_test"])
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("make-vocab", help="build vocabularies from token files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _add_config_flags(p, _COMMON + ["min_freq"])
    p.set_defaults(fn=cmd_make_vocab)

    p = sub.add_parser("train-multipath", help="train the scorer under uniform wait-k")
    p.add_argument("--train-source", required=True)
    p.add_argument("--train-target", required=True)
    p.add_argument("--vocab-source", required=True)
    p.add_argument("--vocab-target", required=True)
    _add_config_flags(p, _COMMON + _MODEL_KEYS + _TRAIN_KEYS)
    p.set_defaults(fn=cmd_train_multipath)

    p = sub.add_parser("search", help="binary-search policies for a corpus")
    p.add_argument("--scorer", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--vocab-source", required=True)
    p.add_argument("--vocab-target", required=True)
    p.add_argument("--traces", action="store_true")
    _add_config_flags(p, _COMMON + _SEARCH_KEYS)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("alternate-train",
                       help="alternate policy search and scorer fine-tuning")
    p.add_argument("--scorer", required=True)
    p.add_argument("--train-source", required=True)
    p.add_argument("--train-target", required=True)
    p.add_argument("--dev-source", required=True)
    p.add_argument("--dev-target", required=True)
    p.add_argument("--vocab-source", required=True)
    p.add_argument("--vocab-target", required=True)
    _add_config_flags(p, _COMMON + _SEARCH_KEYS +
                      ["rounds", "ft_epochs", "ft_lr", "batch_size", "warmup",
                       "weight_decay"])
    p.set_defaults(fn=cmd_alternate_train)

    p = sub.add_parser("train-agent", help="train the READ/WRITE agent")
    p.add_argument("--scorer", required=True)
    p.add_argument("--train-source", required=True)
    p.add_argument("--train-target", required=True)
    p.add_argument("--vocab-source", required=True)
    p.add_argument("--vocab-target", required=True)
    p.add_argument("--policies", default=None,
                   help="policy file; searched fresh when omitted")
    _add_config_flags(p, _COMMON + _SEARCH_KEYS +
                      ["agent_hidden", "agent_embed", "agent_proj", "agent_epochs",
                       "agent_lr", "agent_batch", "status_source", "warmup",
                       "weight_decay"])
    p.set_defaults(fn=cmd_train_agent)

    for name, fn in (("decode", cmd_decode), ("eval", cmd_eval)):
        p = sub.add_parser(name)
        p.add_argument("--scorer", required=True)
        p.add_argument("--source", required=True)
        p.add_argument("--target", required=True)
        p.add_argument("--vocab-source", required=True)
        p.add_argument("--vocab-target", required=True)
        p.add_argument("--driver", required=True,
                       choices=["agent", "oracle", "waitk", "full"])
        p.add_argument("--agent", default=None)
        if name == "decode":
            p.add_argument("--emit-policies", action="store_true")
        if name == "eval":
            p.add_argument("--alignments", default=None)
        _add_config_flags(p, _COMMON + _SEARCH_KEYS + ["k", "threshold"])
        p.set_defaults(fn=fn)

    p = sub.add_parser("sweep", help="latency-quality sweep, CSV output")
    p.add_argument("--scorer", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--vocab-source", required=True)
    p.add_argument("--vocab-target", required=True)
    p.add_argument("--intervals", default=None, help="e.g. 3:7,5:9,7:11")
    p.add_argument("--ks", default=None, help="e.g. 1,3,5,7")
    p.add_argument("--thresholds", default=None, help="e.g. 0.3,0.5,0.7")
    p.add_argument("--agent", default=None)
    p.add_argument("--alignments", default=None)
    _add_config_flags(p, _COMMON)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("profile", help="probability profiles over source prefixes")
    p.add_argument("--scorer", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--vocab-source", required=True)
    p.add_argument("--vocab-target", required=True)
    p.add_argument("--target-len", type=int, required=True)
    p.add_argument("--q", default="0.2,0.4,0.6,0.8,1.0")
    _add_config_flags(p, _COMMON)
    p.set_defaults(fn=cmd_profile)

    return parser


def _merge_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k) for k in RunConfig.field_names()
                 if hasattr(args, k)}
    return cfg.override(**overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _merge_config(args)
        return args.fn(cfg, args)
    except (ConfigError, ValueError) as e:
        if isinstance(e, (CorpusError, MetricError)):
            print(f"data error: {e}", file=sys.stderr)
            return DATA_ERROR
        print(f"config error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return NUMERIC_ERROR
    except (CheckpointError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
