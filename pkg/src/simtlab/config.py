"""Run configuration, seeding and reproducibility plumbing.

One flat key-value YAML file holds every knob; command-line flags override
file values.  Whatever configuration a command actually ran with is
dumped next to its outputs together with a manifest (config hash, seed,
version) so reruns can be checked byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import yaml

from . import __version__


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # reproducibility
    seed: int = 0
    out_dir: str = "run"
    workers: int = 1
    # synthetic task
    vocab_size: int = 32
    min_len: int = 8
    max_len: int = 20
    lookahead: int = 2
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    # corpus
    min_freq: int = 0
    # scorer
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    ffn_dim: int = 128
    dropout: float = 0.1
    label_smoothing: float = 0.1
    rel_window: int = 16
    # training
    epochs: int = 24
    batch_size: int = 80
    lr: float = 2e-3
    warmup: int = 150
    weight_decay: float = 1e-4
    # policy search
    l1: int = 3
    r1: int = 7
    rounds: int = 3
    ft_epochs: int = 2
    ft_lr: float = 5e-4
    # agent
    agent_hidden: int = 64
    agent_embed: int = 64
    agent_proj: int = 64
    agent_epochs: int = 12
    agent_lr: float = 2e-3
    agent_batch: int = 64
    threshold: float = 0.5
    status_source: str = "generated"
    # decoding
    k: int = 3
    cap_margin: int = 10

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a flat key-value mapping")
        unknown = set(raw) - set(cls.field_names())
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**raw)

    def override(self, **kwargs) -> "RunConfig":
        values = asdict(self)
        for key, val in kwargs.items():
            if val is None:
                continue
            if key not in values:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = val
        return RunConfig(**values)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def write_manifest(out_dir, config: RunConfig, command: str,
                   artifacts: list[str]) -> None:
    manifest = {
        "command": command,
        "config_hash": config.digest(),
        "seed": config.seed,
        "version": f"simtlab-{__version__}",
        "artifacts": sorted(artifacts),
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def prepare_out_dir(config: RunConfig, subdir: str | None = None) -> Path:
    out = Path(config.out_dir)
    if subdir:
        out = out / subdir
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "effective_config.yaml")
    return out
