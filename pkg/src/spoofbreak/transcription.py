"""Transcription and text-embedding backends.

The mock backend is a deterministic stand-in for an ASR model: each 0.25 s
window is named by its two strongest frequency bands. Real models attach as
subprocess plugins. Training never decodes text; it compares continuous
per-frame band features instead, which keeps the generator objective
differentiable.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .audio_io import AudioClip, write_wav
from .errors import BackendError, ConfigError, ShapeError

N_WORD_BANDS = 8
WINDOW_SEC = 0.25
SILENCE_RMS = 1e-3

_ONSETS = ["B", "D", "F", "G", "K", "L", "M", "N"]
_NUCLEI = ["A", "E", "I", "O", "U", "AI", "OU", "EE"]
WORDS =[f"{_ONSETS[i]}{_NUCLEI[j]}{_ONSETS[(i + j) % 8]}" for i in range(8) for j in range(8)]


@dataclass(frozen=True)
class Transcript:
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", " ".join(self.text.upper().split()))

    @property
    def words(self):
        return self.text.split()

    def __bool__(self):
        return bool(self.text)


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    dim: int
    empty: bool = False


def _band_edges(sample_rate, n_bands, lo=100.0):
    return np.geomspace(lo, sample_rate / 2, n_bands + 1)


def _band_matrix(n_fft, sample_rate, n_bands):
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = _band_edges(sample_rate, n_bands)
    m = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        upper = freqs <= edges[b + 1] if b == n_bands - 1 else freqs < edges[b + 1]
        m[b, (freqs >= edges[b]) & upper] = 1.0
    return m


class MockBackend:
    """Deterministic band-signature "ASR" plus a differentiable frame encoder."""

    backend_id = "mock"

    def __init__(self, sample_rate=16000, n_fft=512, hop=160, n_feature_bands=16):
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.hop = hop
        self._feat_bands = torch.tensor(_band_matrix(n_fft, sample_rate, n_feature_bands))

    def transcribe(self, clip):
        x = np.asarray(clip.samples, dtype=np.float64)
        rate = clip.sample_rate
        win = int(round(WINDOW_SEC * rate))
        bands = _band_matrix(win, rate, N_WORD_BANDS)
        hann = np.hanning(win)
        words = []
        for start in range(0, x.size, win):
            seg = x[start:start + win]
            if seg.size < win // 2:
                break
            if np.sqrt(np.mean(seg ** 2)) < SILENCE_RMS:
                continue
            if seg.size < win:
                seg = np.pad(seg, (0, win - seg.size))
            energy = bands @ (np.abs(np.fft.rfft(seg * hann)) ** 2)
            first, second = np.argsort(-energy, kind="stable")[:2]
            words.append(WORDS[first * N_WORD_BANDS + second])
        return Transcript(" ".join(words))

    def encode_frames(self, x):
        """Per-frame compressed band magnitudes.

        Accepts a clip, a 1-D signal or a (B, 1, L) tensor; returns a tensor
        of shape (T, D) or (B, T, D). Differentiable with respect to ``x``.
        """
        if isinstance(x, AudioClip):
            x = torch.from_numpy(x.samples.astype(np.float64))
        elif not torch.is_tensor(x):
            x = torch.as_tensor(np.asarray(x, dtype=np.float64))
        squeeze = x.dim() == 1
        sig = x.reshape(1, -1) if squeeze else x.reshape(x.shape[0], -1)
        if sig.shape[1] < self.n_fft:
            raise ShapeError(f"need at least {self.n_fft} samples, got {sig.shape[1]}")
        window = torch.hann_window(self.n_fft, dtype=sig.dtype)
        spec = torch.stft(sig, self.n_fft, self.hop, window=window, center=False, return_complex=True)
        power = spec.real ** 2 + spec.imag ** 2
        band_power = torch.einsum("df,bft->btd", self._feat_bands.to(sig.dtype), power)
        feats = torch.log1p(100.0 * torch.sqrt(band_power + 1e-12))
        return feats[0] if squeeze else feats


class AsrPluginBackend:
    """Runs ``command <wav_path>``; the transcript is the first stdout line."""

    backend_id = "asr_plugin"

    def __init__(self, command, sample_rate=16000):
        self.command = command.split() if isinstance(command, str) else list(command)
        self.sample_rate = sample_rate
        # no acoustic states come back over the plugin contract
        self._encoder = MockBackend(sample_rate)

    def transcribe(self, clip):
        with tempfile.TemporaryDirectory() as tmp:
            wav = os.path.join(tmp, "clip.wav")
            write_wav(wav, clip.samples, clip.sample_rate)
            try:
                res = subprocess.run([*self.command, wav], capture_output=True, text=True, check=False)
            except OSError as exc:
                raise BackendError(f"cannot run ASR plugin {self.command}: {exc}") from exc
        if res.returncode != 0:
            raise BackendError(f"ASR plugin exited with {res.returncode}: {res.stderr.strip()}")
        lines = res.stdout.splitlines()
        return Transcript(lines[0] if lines else "")

    def encode_frames(self, x):
        return self._encoder.encode_frames(x)


def _hash_feature(feature, dim):
    h = zlib.crc32(feature.encode("utf-8"))
    return h % dim, 1.0 if (h >> 31) & 1 else -1.0


class MockEmbedder:
    """Signed feature hashing over words and character trigrams."""

    def __init__(self, dim=256):
        self.dim = int(dim)

    def __call__(self, text):
        v = np.zeros(self.dim)
        for word in text.upper().split():
            idx, sign = _hash_feature("w:" + word, self.dim)
            v[idx] += sign
            padded = f"<{word}>"
            for i in range(len(padded) - 2):
                idx, sign = _hash_feature("t:" + padded[i:i + 3], self.dim)
                v[idx] += 0.5 * sign
        return v


class PluginEmbedder:
    """Runs ``command`` with the text on stdin; stdout is ``dim f1 ... f_dim``."""

    def __init__(self, command):
        self.command = command.split() if isinstance(command, str) else list(command)
        self._cache = {}

    def __call__(self, text):
        if text in self._cache:
            return self._cache[text].copy()
        try:
            res = subprocess.run(self.command, input=text, capture_output=True, text=True, check=False)
        except OSError as exc:
            raise BackendError(f"cannot run embedder {self.command}: {exc}") from exc
        if res.returncode != 0:
            raise BackendError(f"embedder exited with {res.returncode}: {res.stderr.strip()}")
        tokens = res.stdout.split()
        try:
            dim = int(tokens[0])
            vec = np.array([float(t) for t in tokens[1:1 + dim]])
        except (IndexError, ValueError) as exc:
            raise BackendError(f"malformed embedder output: {res.stdout[:80]!r}") from exc
        if vec.size != dim:
            raise BackendError(f"embedder announced dim {dim} but returned {vec.size} values")
        self._cache[text] = vec
        return vec.copy()


def make_backend(spec=None):
    spec = dict(spec or {})
    kind = spec.get("backend", "mock")
    if kind == "mock":
        return MockBackend(int(spec.get("sample_rate", 16000)))
    if kind == "asr_plugin":
        if not spec.get("asr_command"):
            raise ConfigError("asr_plugin backend needs asr_command", "transcription.asr_command")
        return AsrPluginBackend(spec["asr_command"], int(spec.get("sample_rate", 16000)))
    raise ConfigError(f"unknown transcription backend {kind!r}", "transcription.backend")


def make_embedder(spec=None):
    spec = dict(spec or {})
    kind = spec.get("embedder", "mock")
    if kind == "mock":
        return MockEmbedder(int(spec.get("embed_dim", 256)))
    if kind == "plugin":
        if not spec.get("embed_command"):
            raise ConfigError("plugin embedder needs embed_command", "transcription.embed_command")
        return PluginEmbedder(spec["embed_command"])
    raise ConfigError(f"unknown embedder {kind!r}", "transcription.embedder")


def transcribe(backend, clip):
    return backend.transcribe(clip)


def embed_text(text, embedder=None):
    """Unit-norm embedding; empty (or all-zero) input yields the zero sentinel."""
    embedder = embedder or MockEmbedder()
    text = text.text if isinstance(text, Transcript) else " ".join(str(text).split())
    vec = np.asarray(embedder(text), dtype=np.float64) if text else None
    if vec is None or not np.any(vec):
        dim = getattr(embedder, "dim", 0) if vec is None else vec.size
        return TextEmbedding(np.zeros(dim), dim, empty=True)
    return TextEmbedding(vec / np.linalg.norm(vec), vec.size)


def embedding_cosine(ea, eb):
    """Cosine between embeddings; 1 if both are empty, 0 if exactly one is."""
    if ea.empty and eb.empty:
        return 1.0
    if ea.empty or eb.empty:
        return 0.0
    if ea.dim != eb.dim:
        raise ShapeError(f"embedding dims differ: {ea.dim} vs {eb.dim}")
    if np.array_equal(ea.vector, eb.vector):
        return 1.0
    return float(np.clip(ea.vector @ eb.vector, -1.0, 1.0))


def text_similarity(clip_a, clip_b, backend, embedder=None):
    ta, tb = backend.transcribe(clip_a), backend.transcribe(clip_b)
    return embedding_cosine(embed_text(ta, embedder), embed_text(tb, embedder))


def transcription_loss_metric(clip_a, clip_b, backend, embedder=None):
    """1 - cosine between transcript embeddings, in [0, 2]."""
    return 1.0 - text_similarity(clip_a, clip_b, backend, embedder)


def transcription_loss_train(states_a, states_b, eps=1e-12):
    """1 - cosine between time-averaged frame states, averaged over the batch.

    Accepts (T, D) or (B, T, D) tensors; gradients flow into both arguments.
    """
    a = torch.as_tensor(states_a)
    b = torch.as_tensor(states_b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"feature dims differ: {a.shape[-1]} vs {b.shape[-1]}")
    if a.dim() == 2:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    pa, pb = a.mean(dim=-2), b.mean(dim=-2)
    denom = torch.clamp(pa.norm(dim=-1) * pb.norm(dim=-1), min=eps)
    cos = (pa * pb).sum(dim=-1) / denom
    return (1.0 - cos).mean()
