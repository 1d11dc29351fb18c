"""Run configuration: ``section.key = value`` text files with documented defaults.

Precedence is command-line flags > config file > defaults. Unknown keys are
errors.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "ssdvae"          # ssdvae | rnnlm | rnnlm_role | classifier | classifier_role
    frames: int = 500             # F
    vocab_size: int = 40000       # V
    events: int = 5               # M
    embed_dim: int = 300          # token embedding width
    frame_dim: int = 300          # d_e
    enc_layers: int = 2
    enc_hidden: int = 512         # per direction; d_h = 2 * enc_hidden
    dec_layers: int = 2
    dec_hidden: int = 512
    role_dim: int = 300
    temperature: float = 0.5      # Gumbel-Softmax tau
    attention: str = "additive"   # additive | concat
    tup: bool = False             # insert <tup> after every event
    pretrained: str = ""          # optional token-embedding text file


@dataclass
class TrainSection:
    epsilon: float = 0.7
    alpha_q: float = 0.1
    alpha_c: float = 0.1
    samples: int = 1              # S sample chains per document
    lr: float = 1e-3
    clip: float = 5.0
    batch_size: int = 100
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0                 # master seed
    mask_fixed: bool = False      # draw epsilon-masks once instead of per epoch
    tau_decay: float = 1.0        # per-epoch multiplicative tau schedule (1.0 = off)
    tau_min: float = 0.1


@dataclass
class DataSection:
    train: str = ""
    valid: str = ""
    test: str = ""
    inc: str = ""
    frames_test: str = ""


@dataclass
class SynthSection:
    frames: int = 10
    slot_vocab: int = 50
    events: int = 5
    train: int = 5000
    valid: int = 500
    test: int = 500
    self_loop: float = 0.6
    successors: str = "1,3"       # offsets of the two designated successor frames
    own_tokens: int = 5           # preferred tokens per frame and slot
    own_mass: str = "0.9,0.6,0.6,0.5"   # probability on preferred tokens, per slot
    seed: int = 0
    inc_samples: int = 2000
    inc_events: int = 6


@dataclass
class EvalSection:
    samples: int = 1              # chains averaged per document at evaluation
    aggregate: str = "mean"       # mean | max, for cluster reports
    topk: int = 5
    temperature: float = 1.0      # token sampling temperature for generation (0 = greedy)


SECTIONS = {
    "model": ModelSection,
    "train": TrainSection,
    "data": DataSection,
    "synth": SynthSection,
    "eval": EvalSection,
}


@dataclass
class ModelConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def keys(self) -> list[str]:
        return [f"{s}.{f.name}" for s, cls in SECTIONS.items() for f in dataclasses.fields(cls)]

    def get(self, key: str) -> Any:
        section, name = _split(key)
        return getattr(getattr(self, section), name)

    def set(self, key: str, raw: Any) -> None:
        section, name = _split(key)
        sec = getattr(self, section)
        ftype = {f.name: f.type for f in dataclasses.fields(sec)}[name]
        setattr(sec, name, _coerce(key, raw, ftype))

    def to_dict(self) -> dict[str, Any]:
        return {k: self.get(k) for k in self.keys()}

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "ModelConfig":
        cfg = cls()
        for k, v in values.items():
            cfg.set(k, v)
        return cfg

    def to_text(self) -> str:
        lines = []
        for k in self.keys():
            v = self.get(k)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def copy(self) -> "ModelConfig":
        return ModelConfig.from_dict(self.to_dict())


def _split(key: str) -> tuple[str, str]:
    section, _, name = key.partition(".")
    cls = SECTIONS.get(section)
    if cls is None or name not in {f.name for f in dataclasses.fields(cls)}:
        raise ConfigError(f"unknown config key {key!r}")
    return section, name


def _coerce(key: str, raw: Any, ftype: str) -> Any:
    if not isinstance(raw, str):
        if ftype == "float" and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return raw
    try:
        if ftype == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {ftype})") from None


def parse_config_text(text: str, cfg: ModelConfig | None = None, source: str = "<config>") -> ModelConfig:
    cfg = cfg or ModelConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        try:
            cfg.set(key.strip(), value.strip())
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> ModelConfig:
    cfg = ModelConfig()
    if path:
        cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg, str(path))
    for k, v in (overrides or {}).items():
        cfg.set(k, v)
    return cfg
