"""Alternating generator/discriminator training and corpus attacking."""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .archive import arrays_to_state, load_archive, save_archive, state_to_arrays
from .audio_io import chunk, reassemble, write_wav
from .errors import ConfigError, DataError, LoadError, NumericalError, ShapeError
from .losses import (
    ADVERSARIAL_FORMS,
    LossBreakdown,
    LossWeights,
    adversarial_loss_g,
    discriminator_loss,
    forensics_loss,
    perceptual_loss,
    total_generator_loss,
)
from .nets import DEFAULT_FRAME_LEN, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .surrogates import SurrogateEnsemble, ensemble_score, load_surrogate
from .transcription import make_backend, transcription_loss_train

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    frame_len: int = DEFAULT_FRAME_LEN
    batch_size: int = 16
    total_steps: int = 1000
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    adversarial_form: str = "non_saturating"
    seed: int = 0
    checkpoint_every: int = 500
    ensemble_spec: list = field(default_factory=list)
    transcription_backend: dict = field(default_factory=lambda: {"backend": "mock"})
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    d_updates: bool = True
    sample_rate: int = 16000

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        if isinstance(self.discriminator, dict):
            self.discriminator = DiscriminatorConfig(**self.discriminator)
        self.validate()

    def validate(self):
        for name in ("frame_len", "total_steps", "checkpoint_every", "sample_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", f"training.{name}")
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", f"training.{name}")
        if self.batch_size < 2:
            raise ConfigError("batch norm needs batch_size >= 2", "training.batch_size")
        if self.adversarial_form not in ADVERSARIAL_FORMS:
            raise ConfigError(f"unknown form {self.adversarial_form!r}", "losses.adversarial_form")
        if self.generator.frame_len != self.frame_len:
            raise ConfigError(f"{self.generator.frame_len} != frame_len {self.frame_len}", "generator.frame_len")
        if self.discriminator.input_len != self.frame_len:
            raise ConfigError(f"{self.discriminator.input_len} != frame_len {self.frame_len}",
                              "discriminator.input_len")

    def to_dict(self):
        d = asdict(self)
        d["discriminator"]["fc_dims"] = list(d["discriminator"]["fc_dims"])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainState:
    step: int
    gen: Generator
    disc: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    config: TrainConfig


def build_state(config, dtype=torch.float32):
    torch.manual_seed(config.seed)
    gen = Generator(config.generator).to(dtype)
    disc = Discriminator(config.discriminator).to(dtype)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr_g, betas=ADAM_BETAS, eps=ADAM_EPS)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_d, betas=ADAM_BETAS, eps=ADAM_EPS)
    return TrainState(0, gen, disc, opt_g, opt_d, config)


def build_ensemble(config):
    if not config.ensemble_spec:
        raise ConfigError("attack training needs at least one surrogate", "ensemble.members")
    members = []
    for i, spec in enumerate(config.ensemble_spec):
        model = load_surrogate({"frame_len": config.frame_len, **spec})
        if not model.differentiable:
            raise ConfigError("external detectors cannot guide training", f"ensemble.members[{i}]")
        members.append(model)
    return SurrogateEnsemble(members).freeze()


def generator_terms(state, fake_batch, ensemble, backend):
    """Forward pass of the generator objective; returns (attacked, term tensors)."""
    attacked = state.gen(fake_batch)
    terms = {
        "perceptual": perceptual_loss(fake_batch, attacked),
        "forensics": forensics_loss(ensemble_score(ensemble, attacked)),
        "transcription": transcription_loss_train(backend.encode_frames(fake_batch),
                                                  backend.encode_frames(attacked)),
        "adversarial": adversarial_loss_g(state.disc(attacked), state.config.adversarial_form),
    }
    return attacked, terms


def train_step(state, fake_batch, real_batch, ensemble, backend, config=None):
    """One generator update followed by one discriminator update."""
    config = config or state.config
    expected = (config.batch_size, 1, config.frame_len)
    for name, batch in (("fake", fake_batch), ("real", real_batch)):
        if batch.dim() != 3 or batch.shape[1:] != expected[1:]:
            raise ShapeError(f"{name} batch must be (B, 1, {config.frame_len}), got {tuple(batch.shape)}")
    gen, disc = state.gen.train(), state.disc.train()

    disc.requires_grad_(False)
    attacked, terms = generator_terms(state, fake_batch, ensemble, backend)
    total = total_generator_loss(terms, config.weights)
    values = {k: float(v.detach()) for k, v in terms.items()}
    if not all(np.isfinite(list(values.values()))) or not torch.isfinite(total):
        raise NumericalError("non-finite generator loss",
                             LossBreakdown(**values, total=float(total.detach())))
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    disc.requires_grad_(True)

    d_value = float("nan")
    if config.d_updates:
        d_loss = discriminator_loss(disc(real_batch), disc(attacked.detach()))
        d_value = float(d_loss.detach())
        if not np.isfinite(d_value):
            raise NumericalError("non-finite discriminator loss",
                                 LossBreakdown(**values, total=float(total.detach()), disc_loss=d_value))
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_d.step()
        disc.project_()
    state.step += 1
    return state, LossBreakdown(**values, total=float(total.detach()), disc_loss=d_value)


# -- data --------------------------------------------------------------------

def load_train_frames(manifest, frame_len, sample_rate=16000, subset="train"):
    """(fake_frames, real_frames) float32 arrays from one manifest subset."""
    out = {}
    for label in ("fake", "real"):
        records = manifest.select(subset=subset, label=label)
        if not records:
            raise DataError(f"no {label} clips in the {subset} subset")
        out[label] = np.concatenate([chunk(manifest.load(r, sample_rate), frame_len) for r in records])
    return out["fake"].astype(np.float32), out["real"].astype(np.float32)


def batch_indices(seed, step, n, batch_size):
    """Batch for a given step; a pure function of (seed, step) so resumes replay exactly."""
    rng = np.random.default_rng([int(seed), int(step)])
    return rng.choice(n, size=batch_size, replace=n < batch_size)


# -- checkpoints -------------------------------------------------------------

def _optimizer_arrays(opt, prefix):
    sd = opt.state_dict()
    arrays = {}
    for pid, st in sd["state"].items():
        for k, v in st.items():
            arrays[f"{prefix}/{pid}/{k}"] = v.detach().cpu().numpy() if torch.is_tensor(v) else np.asarray(v)
    return arrays, sd["param_groups"]


def _restore_optimizer(opt, arrays, prefix, groups):
    state = {}
    for key, value in arrays.items():
        if not key.startswith(prefix + "/"):
            continue
        pid, name = key[len(prefix) + 1:].split("/", 1)
        state.setdefault(int(pid), {})[name] = torch.from_numpy(np.array(value))
    opt.load_state_dict({"state": state, "param_groups": groups})


def save_checkpoint(state, path):
    arrays = {}
    arrays.update(state_to_arrays(state.gen, "gen/"))
    arrays.update(state_to_arrays(state.disc, "disc/"))
    og, groups_g = _optimizer_arrays(state.opt_g, "opt_g")
    od, groups_d = _optimizer_arrays(state.opt_d, "opt_d")
    arrays.update(og)
    arrays.update(od)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "alpha": float(state.gen.alpha.detach()),
        "highpass_taps": [float(t) for t in state.gen.highpass],
        "frame_len": state.config.frame_len,
        "train_config": state.config.to_dict(),
        "opt_g_groups": groups_g,
        "opt_d_groups": groups_d,
    }
    return save_archive(path, arrays, meta)


def load_checkpoint(path, frame_len=None):
    """Rebuild a TrainState; ``frame_len`` (if given) must match the checkpoint."""
    arrays, meta = load_archive(path)
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise LoadError(f"unsupported checkpoint version {meta.get('format_version')}")
    if frame_len is not None and int(frame_len) != meta["frame_len"]:
        raise ConfigError(f"checkpoint frame_len {meta['frame_len']} != requested {frame_len}", "frame_len")
    config = TrainConfig.from_dict(meta["train_config"])
    state = build_state(config)
    state.gen.load_state_dict(arrays_to_state(arrays, "gen/"))
    state.disc.load_state_dict(arrays_to_state(arrays, "disc/"))
    _restore_optimizer(state.opt_g, arrays, "opt_g", meta["opt_g_groups"])
    _restore_optimizer(state.opt_d, arrays, "opt_d", meta["opt_d_groups"])
    state.step = int(meta["step"])
    return state


def checkpoint_path(out_dir, step):
    return Path(out_dir) / "checkpoints" / f"step_{step:07d}.ckpt"


def train(config, manifest, out_dir, ensemble=None, backend=None, resume=None, progress=None):
    """Run the alternating loop and return the final checkpoint path.

    Checkpoints land in ``out_dir/checkpoints`` every ``checkpoint_every``
    steps and at the last step; one JSON line per step goes to
    ``out_dir/metrics.jsonl``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ensemble = ensemble or build_ensemble(config)
    backend = backend or make_backend(config.transcription_backend)
    fake, real = load_train_frames(manifest, config.frame_len, config.sample_rate)

    if resume is not None:
        state = load_checkpoint(resume, config.frame_len)
        state.config = config
    else:
        state = build_state(config)
    metrics_path = out_dir / "metrics.jsonl"
    kept = metrics_path.read_text().splitlines()[:state.step] if resume and metrics_path.exists() else []
    last = None
    with metrics_path.open("w") as fh:
        for line in kept:
            fh.write(line + "\n")
        while state.step < config.total_steps:
            step = state.step
            fb = torch.from_numpy(fake[batch_indices(config.seed, 2 * step, len(fake), config.batch_size)])
            rb = torch.from_numpy(real[batch_indices(config.seed, 2 * step + 1, len(real), config.batch_size)])
            t0 = time.perf_counter()
            state, bd = train_step(state, fb.unsqueeze(1), rb.unsqueeze(1), ensemble, backend, config)
            wall_ms = (time.perf_counter() - t0) * 1000
            fh.write(json.dumps({"step": state.step, **bd.to_dict(), "wall_ms": round(wall_ms, 3)}) + "\n")
            fh.flush()
            if progress:
                progress(state.step, bd)
            if state.step % config.checkpoint_every == 0 or state.step == config.total_steps:
                last = save_checkpoint(state, checkpoint_path(out_dir, state.step))
    return last or checkpoint_path(out_dir, state.step)


# -- attacking ---------------------------------------------------------------

def load_generator(checkpoint, frame_len=None):
    state = load_checkpoint(checkpoint, frame_len)
    return state.gen.eval(), state.config


@torch.no_grad()
def attack_clip(gen, clip, batch_size=16):
    frames = chunk(clip, gen.frame_len)
    out = []
    for i in range(0, len(frames), batch_size):
        x = torch.from_numpy(frames[i:i + batch_size].astype(np.float32)).unsqueeze(1)
        out.append(gen(x).squeeze(1).numpy())
    y = reassemble(np.concatenate(out), len(clip))
    return np.clip(y, -1.0, 1.0)


def attack_corpus(checkpoint, manifest, out_dir, subsets=None, frame_len=None):
    """Attack fake clips, copy real ones, and write ``pairs.jsonl``; returns its path."""
    gen, config = load_generator(checkpoint, frame_len)
    out_dir = Path(out_dir)
    records = [r for r in manifest if subsets is None or r.subset in subsets]
    if not any(r.label == "fake" for r in records):
        raise DataError("manifest has no fake clips to attack")
    lines = []
    for rec in records:
        src = Path(manifest.resolve(rec)).resolve()
        if rec.label == "fake":
            clip = manifest.load(rec, config.sample_rate)
            rel = Path("attacked") / f"{rec.clip_id}.wav"
            write_wav(out_dir / rel, attack_clip(gen, clip), clip.sample_rate)
        else:
            rel = Path("real") / f"{rec.clip_id}{src.suffix}"
            (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, out_dir / rel)
        lines.append(json.dumps({"clip_id": rec.clip_id, "original_path": str(src),
                                 "attacked_path": rel.as_posix(), "label": rec.label}))
    index = out_dir / "pairs.jsonl"
    index.write_text("".join(line + "\n" for line in lines))
    return index
