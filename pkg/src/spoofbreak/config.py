"""Run configuration: a YAML document with eight sections.

Every leaf is addressable by a dotted path (``losses.lambda2``). Unknown
keys and ill-typed values are rejected with the offending path; defaults
are always materialised so the resolved config can be echoed to disk and
loaded back unchanged.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError, SpoofbreakError
from .losses import ADVERSARIAL_FORMS, LossWeights
from .nets import DEFAULT_FRAME_LEN, DiscriminatorConfig, GeneratorConfig


@dataclass
class DataSection:
    frame_len: int = DEFAULT_FRAME_LEN
    sample_rate: int = 16000
    n_clips: int = 2000
    seed: int = 7
    manifest: Optional[str] = None


def _default_members():
    return [{"family": "res_tssdnet_like"}, {"family": "inc_tssdnet_like"}]


@dataclass
class EnsembleSection:
    members: list = field(default_factory=_default_members)
    epochs: int = 4
    lr: float = 1e-3
    batch_size: int = 8


@dataclass
class TranscriptionSection:
    backend: str = "mock"
    asr_command: Optional[str] = None
    embedder: str = "mock"
    embed_command: Optional[str] = None
    embed_dim: int = 256


@dataclass
class LossesSection:
    lambda1: float = 1.0
    lambda2: float = 1e-4
    lambda3: float = 1.0
    lambda4: float = 0.01
    adversarial_form: str = "non_saturating"

    def weights(self):
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4)


@dataclass
class TrainingSection:
    batch_size: int = 16
    total_steps: int = 1000
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 500
    d_updates: bool = True


def _default_scenarios():
    return {
        "white": [{"family": "res_tssdnet_like"}, {"family": "inc_tssdnet_like"}],
        "gray": [{"family": "res_tssdnet_like", "size": "small"}, {"family": "res_tssdnet_like", "size": "large"},
                 {"family": "inc_tssdnet_like", "size": "small"}, {"family": "inc_tssdnet_like", "size": "large"}],
        "black": [{"family": "toy_cnn_small"}, {"family": "toy_cnn_large"}],
    }


@dataclass
class EvaluationSection:
    threshold: float = 0.5
    subset: str = "eval"
    scenarios: dict = field(default_factory=_default_scenarios)
    lambda2_grid: list = field(default_factory=lambda: [0.1, 0.01, 0.001, 0.0001])
    ensemble_sizes: list = field(default_factory=lambda: [2, 3])
    surrogate_pool: list = field(default_factory=lambda: [
        {"family": "res_tssdnet_like"}, {"family": "inc_tssdnet_like"}, {"family": "toy_cnn_large"}])


SECTIONS = {
    "data": DataSection,
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "ensemble": EnsembleSection,
    "transcription": TranscriptionSection,
    "losses": LossesSection,
    "training": TrainingSection,
    "evaluation": EvaluationSection,
}


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    transcription: TranscriptionSection = field(default_factory=TranscriptionSection)
    losses: LossesSection = field(default_factory=LossesSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self):
        d = asdict(self)
        d["discriminator"]["fc_dims"] = list(d["discriminator"]["fc_dims"])
        return d

    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            frame_len=self.data.frame_len,
            batch_size=self.training.batch_size,
            total_steps=self.training.total_steps,
            lr_g=self.training.lr_g,
            lr_d=self.training.lr_d,
            weights=self.losses.weights(),
            adversarial_form=self.losses.adversarial_form,
            seed=self.training.seed,
            checkpoint_every=self.training.checkpoint_every,
            ensemble_spec=copy.deepcopy(self.ensemble.members),
            transcription_backend=asdict(self.transcription),
            generator=copy.deepcopy(self.generator),
            discriminator=copy.deepcopy(self.discriminator),
            d_updates=self.training.d_updates,
            sample_rate=self.data.sample_rate,
        )


def _coerce(value, default, path):
    """Type-check ``value`` against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"expected a mapping, got {value!r}", path)
        return value
    if default is None or isinstance(default, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def from_dict(doc):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", "<root>")
    sections = {}
    for name, value in doc.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section (expected one of {sorted(SECTIONS)})", name)
        if value is not None and not isinstance(value, dict):
            raise ConfigError("section must be a mapping", name)
    for name, cls in SECTIONS.items():
        given = doc.get(name) or {}
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in given.items():
            path = f"{name}.{key}"
            if key not in known:
                raise ConfigError("unknown key", path)
            kwargs[key] = _coerce(value, getattr(defaults, key), path)
        try:
            sections[name] = cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError, SpoofbreakError) as exc:
            raise ConfigError(str(exc), name) from exc
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg):
    try:
        cfg.losses.weights()
    except ConfigError:
        raise
    if cfg.losses.adversarial_form not in ADVERSARIAL_FORMS:
        raise ConfigError(f"expected one of {ADVERSARIAL_FORMS}", "losses.adversarial_form")
    for path, value in (("data.frame_len", cfg.data.frame_len), ("data.sample_rate", cfg.data.sample_rate),
                        ("training.total_steps", cfg.training.total_steps),
                        ("training.checkpoint_every", cfg.training.checkpoint_every),
                        ("training.lr_g", cfg.training.lr_g), ("training.lr_d", cfg.training.lr_d),
                        ("generator.width", cfg.generator.width), ("discriminator.width", cfg.discriminator.width)):
        if not value > 0:
            raise ConfigError(f"must be positive, got {value}", path)
    if cfg.training.batch_size < 2:
        raise ConfigError("batch norm needs batch_size >= 2", "training.batch_size")
    if cfg.generator.frame_len != cfg.data.frame_len:
        raise ConfigError(f"{cfg.generator.frame_len} != data.frame_len {cfg.data.frame_len}", "generator.frame_len")
    if cfg.discriminator.input_len != cfg.generator.frame_len:
        raise ConfigError(f"{cfg.discriminator.input_len} != generator.frame_len {cfg.generator.frame_len}",
                          "discriminator.input_len")
    if cfg.generator.sample_rate != cfg.data.sample_rate:
        raise ConfigError(f"{cfg.generator.sample_rate} != data.sample_rate {cfg.data.sample_rate}",
                          "generator.sample_rate")
    if not 0 < cfg.generator.cutoff_hz < cfg.generator.sample_rate / 2:
        raise ConfigError("cutoff must lie below Nyquist", "generator.cutoff_hz")
    if cfg.generator.num_taps < 3 or cfg.generator.num_taps % 2 == 0:
        raise ConfigError("must be odd and >= 3", "generator.num_taps")
    if not 0.0 <= cfg.evaluation.threshold <= 1.0:
        raise ConfigError("must lie in [0, 1]", "evaluation.threshold")
    for scen in cfg.evaluation.scenarios:
        if scen not in ("white", "gray", "black"):
            raise ConfigError("unknown scenario", f"evaluation.scenarios.{scen}")
    for i, member in enumerate(cfg.ensemble.members):
        if not isinstance(member, dict) or "family" not in member:
            raise ConfigError("each member needs a family", f"ensemble.members[{i}]")
    return cfg


def parse_value(text):
    """Parse a command-line override value with YAML scalar rules."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from exc


def apply_overrides(doc, overrides):
    """Set dotted-path values (``section.key=value``) on a raw config mapping."""
    doc = copy.deepcopy(doc or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, raw = item.partition("=")
        parts = path.strip().split(".")
        if len(parts) != 2:
            raise ConfigError("overrides must name section.key", path)
        section, key = parts
        if section not in SECTIONS:
            raise ConfigError("unknown section", section)
        doc.setdefault(section, {})
        if doc[section] is None:
            doc[section] = {}
        doc[section][key] = parse_value(raw)
    return doc


def read_document(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", str(path))
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse: {exc}", str(path)) from exc


def load_config(path=None, overrides=()):
    """Resolve file values and overrides on top of defaults (override > file > default)."""
    doc = read_document(path) if path else {}
    return from_dict(apply_overrides(doc, overrides))


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def write_config(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path
