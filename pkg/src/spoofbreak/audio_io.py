"""Audio loading, chunking and corpus manifests.

Clips are kept as float32 mono arrays. Manifests are stored as newline
delimited JSON with paths relative to the manifest's directory, so a corpus
can be moved or regenerated without changing its bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import soundfile as sf
from scipy.signal import resample_poly

from .errors import DataError, DecodeError, EmptyAudio, InvalidArgument, NotFound, ParseError

DEFAULT_RATE = 16000
LABELS = ("real", "fake")
SUBSETS = ("train", "dev", "eval")


@dataclass
class AudioClip:
    clip_id: str
    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise InvalidArgument(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise EmptyAudio(f"clip {self.clip_id!r} has no samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def resample(samples, rate_in, rate_out):
    """Polyphase resampling; output length is ceil(len * rate_out / rate_in)."""
    if rate_in == rate_out:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(int(rate_out), int(rate_in))
    return resample_poly(np.asarray(samples, dtype=np.float64), ratio.numerator, ratio.denominator)


def load_clip(path, target_rate=DEFAULT_RATE, clip_id=None):
    """Decode a WAV/FLAC file into a mono clip at ``target_rate``.

    Multi-channel audio is averaged. The result is peak-normalized only when
    resampling or decoding produced values outside [-1, 1].
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise NotFound(f"no such audio file: {path}")
    try:
        data, rate = sf.read(path, dtype="float64", always_2d=True)
    except (sf.LibsndfileError, RuntimeError, TypeError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if data.shape[0] == 0:
        raise EmptyAudio(f"{path} contains no samples")
    mono = data.mean(axis=1)
    mono = resample(mono, rate, target_rate)
    peak = float(np.max(np.abs(mono)))
    if peak > 1.0:
        mono = mono / peak
    if clip_id is None:
        clip_id = Path(path).stem
    return AudioClip(clip_id, mono.astype(np.float32), int(target_rate), path)


def quantize_pcm16(samples):
    """Map [-1, 1] floats to int16 with round-half-away-from-zero."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32767.0
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return q.astype(np.int16)


def write_wav(path, samples, sample_rate):
    """Write 16-bit PCM. Values are clipped to [-1, 1] first."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    sf.write(os.fspath(path), quantize_pcm16(samples), int(sample_rate), subtype="PCM_16", format="WAV")


def chunk(clip, frame_len):
    """Split a clip into ``ceil(len / frame_len)`` frames of ``frame_len`` samples.

    Short clips and the trailing partial frame are filled by tiling their own
    content rather than zero padding. Returns an array of shape (n_frames, frame_len).
    """
    if frame_len <= 0:
        raise InvalidArgument(f"frame_len must be positive, got {frame_len}")
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip).reshape(-1)
    n = x.size
    n_frames = max(1, math.ceil(n / frame_len))
    frames = np.empty((n_frames, frame_len), dtype=x.dtype)
    for i in range(n_frames):
        seg = x[i * frame_len:(i + 1) * frame_len]
        frames[i] = seg if seg.size == frame_len else np.resize(seg, frame_len)
    return frames


def reassemble(frames, length):
    """Inverse of :func:`chunk`: concatenate frames and trim to ``length``."""
    return np.asarray(frames).reshape(-1)[:length]


@dataclass(frozen=True)
class ManifestRecord:
    clip_id: str
    path: str
    label: str
    subset: str
    dataset_tag: str = "toy"

    def __post_init__(self):
        if self.label not in LABELS:
            raise InvalidArgument(f"label must be one of {LABELS}, got {self.label!r}")
        if self.subset not in SUBSETS:
            raise InvalidArgument(f"subset must be one of {SUBSETS}, got {self.subset!r}")


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    root_dir: str = "."

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.clip_id in seen:
                raise DataError(f"duplicate clip_id {rec.clip_id!r} in manifest")
            seen.add(rec.clip_id)
        self._index = {rec.clip_id: rec for rec in self.records}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, clip_id):
        return self._index[clip_id]

    def __contains__(self, clip_id):
        return clip_id in self._index

    def select(self, subset=None, label=None):
        return [
            r for r in self.records
            if (subset is None or r.subset == subset) and (label is None or r.label == label)
        ]

    def resolve(self, record):
        p = Path(record.path)
        return str(p if p.is_absolute() else Path(self.root_dir) / p)

    def load(self, record, target_rate=DEFAULT_RATE):
        return load_clip(self.resolve(record), target_rate, clip_id=record.clip_id)

    def to_jsonl(self):
        return "".join(json.dumps(asdict(r), sort_keys=False) + "\n" for r in self.records)

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def read(cls, path, root_dir=None):
        path = Path(path)
        if not path.is_file():
            raise NotFound(f"no such manifest: {path}")
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(ManifestRecord(**obj))
            except (json.JSONDecodeError, TypeError, InvalidArgument) as exc:
                raise ParseError(str(exc), line=lineno) from exc
        return cls(records, str(root_dir if root_dir is not None else path.parent))


_ASVSPOOF_KEYS = {"bonafide": "real", "spoof": "fake"}
_ASVSPOOF_SUBSETS = {"T": "train", "D": "dev", "E": "eval"}


def parse_asvspoof_protocol(text, root_dir, subset=None, dataset_tag="asvspoof2019-la", audio_ext="flac"):
    """Parse an ASVspoof 2019 LA protocol file.

    Columns are ``speaker clip_id env system key``. The subset is taken from
    the clip id prefix (``LA_T_``/``LA_D_``/``LA_E_``) unless given explicitly.
    Audio paths follow the distribution layout ``flac/<clip_id>.flac``.
    """
    records = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 5:
            raise ParseError(f"expected at least 5 fields, got {len(fields)}", line=lineno)
        clip_id, key = fields[1], fields[4]
        if key not in _ASVSPOOF_KEYS:
            raise ParseError(f"unknown key {key!r}", line=lineno)
        if clip_id in seen:
            raise ParseError(f"duplicate clip id {clip_id!r}", line=lineno)
        seen.add(clip_id)
        sub = subset
        if sub is None:
            parts = clip_id.split("_")
            sub = _ASVSPOOF_SUBSETS.get(parts[1] if len(parts) > 2 else "", "train")
        records.append(ManifestRecord(
            clip_id=clip_id,
            path=f"{audio_ext}/{clip_id}.{audio_ext}",
            label=_ASVSPOOF_KEYS[key],
            subset=sub,
            dataset_tag=dataset_tag,
        ))
    return DatasetManifest(records, str(root_dir))
