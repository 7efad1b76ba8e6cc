"""Frozen detector ensembles and the toy detectors used at desk scale.

Every detector is normalised to emit P(real) per frame. Torch-backed
detectors are differentiable with respect to their input so they can steer
the generator; external detectors are scored through a subprocess and are
only usable for evaluation.
"""

from __future__ import annotations

import hashlib
import os
import subprocess
import tempfile
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .archive import arrays_to_state, load_archive, save_archive, state_to_arrays
from .audio_io import chunk, write_wav
from .errors import ConfigError, DataError, LoadError, ShapeError
from .nets import DEFAULT_FRAME_LEN

FAMILIES = ("toy_cnn_small", "toy_cnn_large", "res_tssdnet_like", "inc_tssdnet_like", "external")
SIZES = {"small": 0.5, "base": 1.0, "large": 2.0}
BASE_WIDTH = {"toy_cnn_small": 4, "toy_cnn_large": 12, "res_tssdnet_like": 16, "inc_tssdnet_like": 8}
REAL_INDEX = 1


def cache_dir():
    """Model/plugin cache, overridable with SPOOFBREAK_CACHE."""
    return Path(os.environ.get("SPOOFBREAK_CACHE", Path.home() / ".cache" / "spoofbreak"))


class _ResBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.skip = nn.Conv1d(c_in, c_out, 1, bias=False) if c_in != c_out else nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(h)) + self.skip(x))


class ResTSSDNetLike(nn.Module):
    """Raw-waveform residual CNN in the spirit of Res-TSSDNet, at toy width."""

    def __init__(self, width=16):
        super().__init__()
        c = width
        self.stem = nn.Sequential(nn.Conv1d(1, c, 7, padding=3, bias=False), nn.BatchNorm1d(c), nn.ReLU())
        self.blocks = nn.ModuleList([_ResBlock(c, c), _ResBlock(c, 2 * c), _ResBlock(2 * c, 2 * c)])
        self.head = nn.Sequential(nn.Linear(2 * c, c), nn.ReLU(), nn.Linear(c, 2))

    def forward(self, x):
        h = F.max_pool1d(self.stem(x), 4)
        for block in self.blocks:
            h = F.max_pool1d(block(h), 4)
        return self.head(h.mean(dim=2))


class _InceptionBlock(nn.Module):
    def __init__(self, c_in, c):
        super().__init__()
        self.branches = nn.ModuleList([
            nn.Conv1d(c_in, c, 1, bias=False),
            nn.Conv1d(c_in, c, 3, padding=1, bias=False),
            nn.Conv1d(c_in, c, 3, padding=2, dilation=2, bias=False),
            nn.Conv1d(c_in, c, 3, padding=4, dilation=4, bias=False),
        ])
        self.bn = nn.BatchNorm1d(4 * c)

    def forward(self, x):
        return F.relu(self.bn(torch.cat([b(x) for b in self.branches], dim=1)))


class IncTSSDNetLike(nn.Module):
    """Raw-waveform CNN with parallel dilated branches, after Inc-TSSDNet."""

    def __init__(self, width=8):
        super().__init__()
        c = width
        self.stem = nn.Sequential(nn.Conv1d(1, 2 * c, 7, padding=3, bias=False), nn.BatchNorm1d(2 * c), nn.ReLU())
        self.blocks = nn.ModuleList([_InceptionBlock(2 * c, c), _InceptionBlock(4 * c, c), _InceptionBlock(4 * c, c)])
        self.head = nn.Sequential(nn.Linear(4 * c, 2 * c), nn.ReLU(), nn.Linear(2 * c, 2))

    def forward(self, x):
        h = F.max_pool1d(self.stem(x), 4)
        for block in self.blocks:
            h = F.max_pool1d(block(h), 4)
        return self.head(h.mean(dim=2))


class SpectralCNN(nn.Module):
    """2-D CNN over a log-magnitude STFT; architecturally disjoint from the raw-waveform families."""

    def __init__(self, width=4, n_fft=256, hop=128):
        super().__init__()
        c = width
        self.n_fft, self.hop = n_fft, hop
        self.register_buffer("window", torch.hann_window(n_fft), persistent=False)
        self.convs = nn.Sequential(
            nn.Conv2d(1, c, 3, padding=1), nn.BatchNorm2d(c), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(c, 2 * c, 3, padding=1), nn.BatchNorm2d(2 * c), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(2 * c, 2 * c, 3, padding=1), nn.BatchNorm2d(2 * c), nn.ReLU(),
        )
        self.head = nn.Linear(2 * c, 2)

    def forward(self, x):
        spec = torch.stft(x.squeeze(1), self.n_fft, self.hop, window=self.window.to(x.dtype),
                          center=False, return_complex=True)
        feat = torch.log10(spec.real ** 2 + spec.imag ** 2 + 1e-10).unsqueeze(1)
        return self.head(self.convs(feat).mean(dim=(2, 3)))


def build_module(family, size="base"):
    if family not in BASE_WIDTH:
        raise ConfigError(f"unknown surrogate family {family!r}; expected one of {FAMILIES}", "family")
    if size not in SIZES:
        raise ConfigError(f"unknown size {size!r}; expected one of {sorted(SIZES)}", "size")
    width = max(2, int(round(BASE_WIDTH[family] * SIZES[size])))
    if family == "res_tssdnet_like":
        return ResTSSDNetLike(width)
    if family == "inc_tssdnet_like":
        return IncTSSDNetLike(width)
    return SpectralCNN(width)


def _probs_from_logits(logits, real_index):
    if logits.dim() != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected two-class logits, got shape {tuple(logits.shape)}")
    return torch.softmax(logits, dim=1)[:, real_index]


class SurrogateModel:
    """A detector scoring frames (B, 1, L) as P(real)."""

    def __init__(self, model_id, family, module=None, *, size="base", real_index=REAL_INDEX,
                 frame_len=DEFAULT_FRAME_LEN, command=None, metadata=None):
        self.model_id = model_id
        self.family = family
        self.size = size
        self.module = module
        self.real_index = int(real_index)
        self.frame_len = int(frame_len)
        self.command = list(command) if command else None
        self.metadata = dict(metadata or {})
        self.frozen = False

    def __repr__(self):
        return f"SurrogateModel({self.model_id!r}, family={self.family!r}, size={self.size!r})"

    @property
    def differentiable(self):
        return self.module is not None

    def num_parameters(self):
        return 0 if self.module is None else sum(p.numel() for p in self.module.parameters())

    def freeze(self):
        if self.module is not None:
            self.module.eval()
            for p in self.module.parameters():
                p.requires_grad_(False)
        self.frozen = True
        return self

    def to(self, dtype):
        if self.module is not None:
            self.module.to(dtype)
        return self

    def score(self, x):
        """P(real) for each frame of ``x``; gradients flow to ``x`` for torch models."""
        if x.dim() != 3 or x.shape[1] != 1 or x.shape[2] != self.frame_len:
            raise ShapeError(f"[{self.model_id}] expects (B, 1, {self.frame_len}), got {tuple(x.shape)}")
        if self.module is None:
            return self._score_external(x)
        dtype = next(self.module.parameters()).dtype
        return _probs_from_logits(self.module(x.to(dtype)), self.real_index)

    def score_clip(self, clip):
        """Clip-level P(real): mean over its frames (whole file for external detectors)."""
        if self.module is None:
            return float(self._run_external(clip.samples, clip.sample_rate))
        frames = torch.from_numpy(chunk(clip, self.frame_len)).unsqueeze(1)
        with torch.no_grad():
            return float(self.score(frames).double().mean())

    def _score_external(self, x):
        arr = x.detach().cpu().double().numpy()
        out = [self._run_external(arr[i, 0], self.metadata.get("sample_rate", 16000)) for i in range(arr.shape[0])]
        return torch.tensor(out, dtype=x.dtype)

    def _run_external(self, samples, sample_rate):
        with tempfile.TemporaryDirectory() as tmp:
            wav = os.path.join(tmp, "input.wav")
            write_wav(wav, samples, sample_rate)
            try:
                res = subprocess.run([*self.command, wav], capture_output=True, text=True, check=False)
            except OSError as exc:
                raise LoadError(f"[{self.model_id}] cannot run {self.command}: {exc}") from exc
        if res.returncode != 0:
            raise LoadError(f"[{self.model_id}] exited with {res.returncode}: {res.stderr.strip()}")
        lines = [ln for ln in res.stdout.splitlines() if ln.strip()]
        try:
            value = float(lines[0])
        except (IndexError, ValueError) as exc:
            raise LoadError(f"[{self.model_id}] produced no score: {res.stdout!r}") from exc
        return min(max(value, 0.0), 1.0)

    def digest(self):
        """SHA-256 over parameters and buffers; changes iff any weight changes."""
        h = hashlib.sha256()
        if self.module is not None:
            for k, v in sorted(self.module.state_dict().items()):
                h.update(k.encode())
                h.update(v.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def spec(self, weights_path=None):
        out = {"family": self.family, "size": self.size, "model_id": self.model_id,
               "class_index_map": {"real": self.real_index, "fake": 1 - self.real_index},
               "frame_len": self.frame_len}
        if weights_path is not None:
            out["weights_path"] = str(weights_path)
        if self.command:
            out["command"] = list(self.command)
        return out

    def save(self, path):
        if self.module is None:
            raise LoadError("external detectors have no weights to save")
        meta = {"format_version": 1, "kind": "surrogate", **self.spec(), "metadata": self.metadata}
        return save_archive(path, state_to_arrays(self.module), meta)


def load_surrogate(spec):
    """Build a SurrogateModel from a spec mapping.

    Keys: ``family`` (required), ``size``, ``weights_path``, ``class_index_map``
    (``{"real": i}``), ``frame_len``, ``model_id``, ``seed`` (toy init without
    weights) and ``command`` (external family).
    """
    spec = dict(spec)
    family = spec.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"unknown surrogate family {family!r}; expected one of {FAMILIES}", "family")
    cim = spec.get("class_index_map") or {}
    real_index = int(cim.get("real", REAL_INDEX))
    frame_len = int(spec.get("frame_len", DEFAULT_FRAME_LEN))
    if family == "external":
        command = spec.get("command")
        if not command:
            raise ConfigError("external detector needs a command", "command")
        if isinstance(command, str):
            command = command.split()
        return SurrogateModel(spec.get("model_id", "external"), family, None, real_index=real_index,
                              frame_len=frame_len, command=command, metadata=spec.get("metadata")).freeze()

    weights_path = spec.get("weights_path")
    meta = {}
    if weights_path:
        path = Path(weights_path)
        if not path.is_absolute() and not path.exists():
            path = cache_dir() / path
        arrays, meta = load_archive(path)
        if meta.get("family", family) != family:
            raise LoadError(f"{path} holds a {meta.get('family')} model, not {family}")
        size = spec.get("size", meta.get("size", "base"))
        if "class_index_map" not in spec and "class_index_map" in meta:
            real_index = int(meta["class_index_map"]["real"])
        frame_len = int(spec.get("frame_len", meta.get("frame_len", frame_len)))
        module = build_module(family, size)
        try:
            module.load_state_dict(arrays_to_state(arrays))
        except (RuntimeError, KeyError) as exc:
            raise LoadError(f"weights in {path} do not fit {family}/{size}: {exc}") from exc
    else:
        size = spec.get("size", "base")
        torch.manual_seed(int(spec.get("seed", 0)))
        module = build_module(family, size)
    model_id = spec.get("model_id") or meta.get("model_id") or f"{family}-{size}"
    return SurrogateModel(model_id, family, module, size=size, real_index=real_index,
                          frame_len=frame_len, metadata=meta.get("metadata")).freeze()


class SurrogateEnsemble:
    def __init__(self, members):
        members = list(members)
        if not members:
            raise ConfigError("ensemble needs at least one member", "ensemble.members")
        self.members = members

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def freeze(self):
        for m in self.members:
            m.freeze()
        return self

    def digests(self):
        return [m.digest() for m in self.members]


def ensemble_score(ensemble, batch):
    """Stack member scores into an (M, B) matrix of P(real)."""
    members = ensemble.members if isinstance(ensemble, SurrogateEnsemble) else list(ensemble)
    rows = []
    for m in members:
        try:
            rows.append(m.score(batch))
        except ShapeError as exc:
            raise ShapeError(f"[{m.model_id}] rejected batch: {exc}") from exc
    return torch.stack([r.to(batch.dtype) for r in rows])


def _load_split(manifest, subset, frame_len, sample_rate):
    xs, ys = [], []
    for rec in manifest.select(subset=subset):
        frames = chunk(manifest.load(rec, sample_rate), frame_len)
        xs.append(frames)
        ys += [1 if rec.label == "real" else 0] * len(frames)
    if not xs:
        return np.zeros((0, frame_len), np.float32), np.zeros(0, np.int64)
    return np.concatenate(xs).astype(np.float32), np.asarray(ys, dtype=np.int64)


def frame_accuracy(model, x, y, batch_size=64):
    correct = 0
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            p = model.score(torch.from_numpy(x[i:i + batch_size]).unsqueeze(1))
            correct += int(((p >= 0.5).long().numpy() == y[i:i + batch_size]).sum())
    return correct / max(1, len(x))


def train_toy_surrogate(manifest, config, log=None):
    """Train a toy detector on the manifest's train subset.

    ``config`` keys: family, size, epochs, lr, seed, batch_size, frame_len,
    sample_rate, model_id. Held-out accuracy on the eval subset is recorded in
    ``metadata["heldout_accuracy"]``.
    """
    cfg = {"size": "base", "epochs": 4, "lr": 1e-3, "seed": 0, "batch_size": 8,
           "frame_len": DEFAULT_FRAME_LEN, "sample_rate": 16000, **dict(config)}
    family = cfg["family"]
    if family == "external":
        raise ConfigError("external detectors cannot be trained here", "family")
    for subset in ("train", "eval"):
        labels = {r.label for r in manifest.select(subset=subset)}
        if labels != {"real", "fake"}:
            raise DataError(f"{subset} subset needs both real and fake clips, has {sorted(labels)}")
    x_tr, y_tr = _load_split(manifest, "train", cfg["frame_len"], cfg["sample_rate"])
    x_ev, y_ev = _load_split(manifest, "eval", cfg["frame_len"], cfg["sample_rate"])

    torch.manual_seed(int(cfg["seed"]))
    module = build_module(family, cfg["size"])
    model = SurrogateModel(cfg.get("model_id") or f"{family}-{cfg['size']}", family, module,
                           size=cfg["size"], frame_len=cfg["frame_len"])
    opt = torch.optim.Adam(module.parameters(), lr=float(cfg["lr"]))
    gen = torch.Generator().manual_seed(int(cfg["seed"]))
    bs = int(cfg["batch_size"])
    for epoch in range(int(cfg["epochs"])):
        module.train()
        order = torch.randperm(len(x_tr), generator=gen).numpy()
        total = 0.0
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            if len(idx) < 2:
                continue
            xb = torch.from_numpy(x_tr[idx]).unsqueeze(1)
            yb = torch.from_numpy(y_tr[idx])
            target = yb if REAL_INDEX == 1 else 1 - yb
            loss = F.cross_entropy(module(xb), target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if log:
            log(f"{model.model_id} epoch {epoch + 1}: loss {total / len(order):.4f}")
    model.freeze()
    model.metadata = {
        "heldout_accuracy": frame_accuracy(model, x_ev, y_ev),
        "train_accuracy": frame_accuracy(model, x_tr, y_tr),
        "seed": int(cfg["seed"]),
        "epochs": int(cfg["epochs"]),
    }
    return model
