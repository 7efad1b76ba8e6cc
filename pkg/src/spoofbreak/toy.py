"""Synthetic desk-scale corpus with a separable, vocoder-like fake cue.

Real clips are sums of 3-5 harmonics under a smooth envelope. Fake clips use
the same recipe but re-draw harmonic phases slightly every 20 ms (phase
jitter) and are quantised to 8-bit amplitude resolution.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import DatasetManifest, ManifestRecord, write_wav
from .errors import InvalidArgument

JITTER_FRAME = 320
JITTER_RAD = 1.5
QUANT_LEVELS = 128
F0_RANGE = (350.0, 700.0)


def _envelope(n, rate, rng):
    t = np.arange(n) / rate
    fade = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / (0.1 * n))
    fade = 0.5 - 0.5 * np.cos(np.pi * fade)
    am = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
    return fade * am


def synth_clip(n, rate, rng, fake):
    f0 = rng.uniform(*F0_RANGE)
    n_harm = int(rng.integers(3, 6))
    amps = rng.uniform(0.3, 1.0, n_harm) / np.arange(1, n_harm + 1)
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    t = np.arange(n) / rate
    if fake:
        n_frames = -(-n // JITTER_FRAME)
        jitter = rng.uniform(-JITTER_RAD, JITTER_RAD, (n_frames, n_harm))
        jitter = np.repeat(jitter, JITTER_FRAME, axis=0)[:n]
    else:
        jitter = np.zeros((n, n_harm))
    k = np.arange(1, n_harm + 1)
    x = (amps * np.sin(2 * np.pi * f0 * k * t[:, None] + phases + jitter)).sum(axis=1)
    x *= _envelope(n, rate, rng)
    x *= rng.uniform(0.3, 0.7) / np.max(np.abs(x))
    if fake:
        x = np.round(x * QUANT_LEVELS) / QUANT_LEVELS
    return x


def build_toy_dataset(n_clips, frame_len, seed, out_dir, sample_rate=16000):
    """Write ``n_clips`` WAVs (half real, half fake) plus ``manifest.jsonl``.

    Each class is split 70/15/15 into train/dev/eval. Output is a pure
    function of the arguments.
    """
    if n_clips < 4 or n_clips % 2:
        raise InvalidArgument(f"n_clips must be even and >= 4, got {n_clips}")
    if frame_len <= 0:
        raise InvalidArgument(f"frame_len must be positive, got {frame_len}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    half = n_clips // 2
    n_train = int(round(0.70 * half))
    n_dev = int(round(0.15 * half))
    records = []
    for label in ("real", "fake"):
        for i in range(half):
            subset = "train" if i < n_train else "dev" if i < n_train + n_dev else "eval"
            clip_id = f"toy_{label}_{i:05d}"
            x = synth_clip(frame_len, sample_rate, rng, fake=label == "fake")
            rel = f"wav/{clip_id}.wav"
            write_wav(out_dir / rel, x, sample_rate)
            records.append(ManifestRecord(clip_id, rel, label, subset, "toy"))
    manifest = DatasetManifest(records, str(out_dir))
    manifest.write(out_dir / "manifest.jsonl")
    return manifest
