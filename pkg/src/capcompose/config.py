"""Run configuration shared by the CLI commands.

A single JSON file can hold every knob; each CLI flag overrides the file
value. Validation happens before any work starts so a bad configuration
never leaves partial outputs. All randomness flows from the one ``seed``
field, split per component with fixed labels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .artifacts import read_json
from .errors import ConfigError


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).hexdigest()
    return int(digest[:16], 16)


@dataclass
class RunConfig:
    # paths (commands require the ones they use)
    corpus: str | None = None
    features: str | None = None
    lexicon: str | None = None
    mine_dir: str | None = None
    np_model: str | None = None
    c_model: str | None = None
    e_model: str | None = None
    control: str | None = None
    initial: str | None = None
    out: str | None = None

    # mining
    min_count: int = 5
    max_caption_len: int = 18
    np_min_occurrences: int = 50
    connector_min_occurrences: int = 1
    neg_ratio: float = 1.0

    # model dims and training
    hidden_dim: int = 16
    embed_dim: int = 16
    d_g: int = 4
    d_r: int = 4
    n_regions: int = 1
    learning_rate: float = 0.0001
    epochs: int = 50
    threshold: float = 0.5
    share_encoders: bool = False
    use_image_context: bool = True

    # composition
    n: int = 7
    epsilon: float = 0.002
    mode: str = "greedy"
    beam_pairs: int = 3
    beam_connections: int = 1
    sample_temperature: float = 1.0
    max_steps: int | None = None
    stop_on_complete: bool = True

    seed: int = 0

    def validate(self) -> "RunConfig":
        problems = []
        if self.min_count < 1:
            problems.append("min_count must be >= 1")
        if self.max_caption_len < 1:
            problems.append("max_caption_len must be >= 1")
        if self.np_min_occurrences < 0:
            problems.append("np_min_occurrences must be >= 0")
        if self.connector_min_occurrences < 1:
            problems.append("connector_min_occurrences must be >= 1")
        if self.neg_ratio < 0:
            problems.append("neg_ratio must be >= 0")
        for name in ("hidden_dim", "embed_dim", "d_g", "d_r", "n_regions"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.learning_rate < 0:
            problems.append("learning_rate must be >= 0")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            problems.append("threshold must lie strictly in (0, 1)")
        if self.n < 1:
            problems.append("n must be >= 1")
        if self.epsilon < 0:
            problems.append("epsilon must be >= 0")
        if self.mode not in ("greedy", "beam", "sample"):
            problems.append("mode must be greedy, beam or sample")
        if self.beam_pairs < 1 or self.beam_connections < 1:
            problems.append("beam sizes must be >= 1")
        if self.sample_temperature <= 0:
            problems.append("sample_temperature must be > 0")
        if self.max_steps is not None and self.max_steps < 1:
            problems.append("max_steps must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        obj = read_json(path)
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        known = set(cls.field_names())
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
        return cls(**obj)

    def with_overrides(self, **overrides) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in values:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
        return RunConfig(**values)
