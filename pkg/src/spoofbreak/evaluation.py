"""Attack evaluation: accuracy before/after, quality metrics, ablations and sample dumps."""

from __future__ import annotations

import csv
import difflib
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import load_clip
from .dsp import psnr, ssim, stft_logmag
from .errors import ConfigError, DataError, NotFound
from .surrogates import SurrogateModel, load_surrogate
from .toy import build_toy_dataset  # noqa: F401  (re-exported)
from .transcription import MockBackend, MockEmbedder, embed_text, embedding_cosine

log = logging.getLogger(__name__)

SCENARIOS = ("white", "gray", "black")
REPORT_COLUMNS = ("victim_id", "dataset_tag", "scenario", "acc_ba", "acc_aa", "drop", "success_rate")
ABLATION_COLUMNS = ("lambda2", "ensemble_size", "psnr", "ssim", "acc_ba", "acc_aa")


@dataclass
class ScenarioSpec:
    scenario: str
    victims: list = field(default_factory=list)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}", "evaluation.scenarios")

    def models(self):
        return [v if isinstance(v, SurrogateModel) else load_surrogate(v) for v in self.victims]


def check_scenario_families(scenarios, ensemble_families):
    """Validate the white/gray/black membership rules against the attack ensemble."""
    fams = set(ensemble_families)
    for spec in scenarios:
        for v in spec.models():
            if spec.scenario == "white" and v.family not in fams:
                raise ConfigError(f"white-box victim {v.model_id} is not an ensemble family", "evaluation.scenarios")
            if spec.scenario == "gray" and (v.family not in fams or v.size == "base"):
                raise ConfigError(f"gray-box victim {v.model_id} must be a size variant of an ensemble family",
                                  "evaluation.scenarios")
            if spec.scenario == "black" and v.family in fams:
                raise ConfigError(f"black-box victim {v.model_id} shares a family with the ensemble",
                                  "evaluation.scenarios")


@dataclass(frozen=True)
class PairRecord:
    clip_id: str
    original_path: str
    attacked_path: str
    label: str


def read_pairs(path):
    """Load a pairing index; relative paths resolve against the index's directory."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such pairing index: {path}")
    base = path.parent
    pairs = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        for key in ("original_path", "attacked_path"):
            p = Path(obj[key])
            obj[key] = str(p if p.is_absolute() else base / p)
        pairs.append(PairRecord(**obj))
    return pairs


def _as_pairs(pairs):
    return read_pairs(pairs) if isinstance(pairs, (str, Path)) else list(pairs)


class _ClipCache:
    def __init__(self, sample_rate=16000):
        self.sample_rate = sample_rate
        self._clips = {}

    def get(self, path, clip_id=None):
        if path not in self._clips:
            self._clips[path] = load_clip(path, self.sample_rate, clip_id=clip_id)
        return self._clips[path]


def _predictions(victim, items, cache, threshold):
    """items: (clip_id, path, label) -> list of (label, predicted_real)."""
    out = []
    for clip_id, path, label in items:
        p = victim.score_clip(cache.get(path, clip_id))
        out.append((label, p >= threshold))
    return out


def _accuracy(preds):
    if not preds:
        raise DataError("no clips to score")
    return sum((label == "real") == is_real for label, is_real in preds) / len(preds)


def detector_accuracy(victim, manifest, threshold=0.5, subset="eval", cache=None):
    """Fraction of ``subset`` clips whose thresholded P(real) matches the label."""
    records = manifest.select(subset=subset)
    if not records:
        raise DataError(f"manifest has no {subset} clips")
    cache = cache or _ClipCache()
    items = [(r.clip_id, manifest.resolve(r), r.label) for r in records]
    return _accuracy(_predictions(victim, items, cache, threshold))


@dataclass
class EvalReport:
    rows: list
    scenario_averages: dict
    quality: dict | None = None

    def to_dict(self):
        return {"rows": self.rows, "scenario_averages": self.scenario_averages, "quality": self.quality}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([row[c] for c in REPORT_COLUMNS])
        return buf.getvalue()

    def write(self, out_dir, stem="report"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.json").write_text(self.to_json())
        (out_dir / f"{stem}.csv").write_text(self.to_csv())
        return out_dir / f"{stem}.json", out_dir / f"{stem}.csv"

    @classmethod
    def read(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(d["rows"], d["scenario_averages"], d.get("quality"))


def _scenario_averages(rows):
    out = {}
    for scen in SCENARIOS:
        sel = [r for r in rows if r["scenario"] == scen]
        if sel:
            out[scen] = {k: float(np.mean([r[k] for r in sel])) for k in ("acc_ba", "acc_aa", "drop", "success_rate")}
    return out


def evaluate_attack(scenarios, manifest, pairing_index, threshold=0.5, subset="eval", quality=None,
                    sample_rate=16000):
    """Score every victim on original and attacked versions of the eval subset.

    Accuracy mixes real and fake clips; for Acc-AA the fakes are swapped for
    their attacked versions while reals stay untouched. ``success_rate`` is the
    fraction of attacked fakes a victim scores as real.
    """
    pairs = {p.clip_id: p for p in _as_pairs(pairing_index)}
    records = manifest.select(subset=subset)
    if not records:
        raise DataError(f"manifest has no {subset} clips")
    for r in records:
        if r.label == "fake":
            if r.clip_id not in pairs:
                raise DataError(f"no attacked version of {r.clip_id} in the pairing index")
            if not Path(pairs[r.clip_id].attacked_path).is_file():
                raise DataError(f"attacked file for {r.clip_id} is missing: {pairs[r.clip_id].attacked_path}")
    cache = _ClipCache(sample_rate)
    tags = sorted({r.dataset_tag for r in records})
    rows = []
    for spec in scenarios:
        for victim in spec.models():
            for tag in tags:
                recs = [r for r in records if r.dataset_tag == tag]
                before = [(r.clip_id, manifest.resolve(r), r.label) for r in recs]
                after = [(r.clip_id, pairs[r.clip_id].attacked_path if r.label == "fake" else manifest.resolve(r),
                          r.label) for r in recs]
                pb = _predictions(victim, before, cache, threshold)
                pa = _predictions(victim, after, cache, threshold)
                acc_ba, acc_aa = _accuracy(pb), _accuracy(pa)
                fake_after = [is_real for label, is_real in pa if label == "fake"]
                rows.append({
                    "victim_id": victim.model_id,
                    "dataset_tag": tag,
                    "scenario": spec.scenario,
                    "acc_ba": acc_ba,
                    "acc_aa": acc_aa,
                    "drop": acc_ba - acc_aa,
                    "success_rate": float(np.mean(fake_after)) if fake_after else 0.0,
                })
    return EvalReport(rows, _scenario_averages(rows), quality)


def quality_report(pairing_index, backend=None, embedder=None, labels=("fake",), n_fft=512, hop=128,
                   sample_rate=16000):
    """Mean waveform PSNR, spectrogram SSIM and transcript similarity over pairs."""
    backend = backend or MockBackend(sample_rate)
    embedder = embedder or MockEmbedder()
    pairs = [p for p in _as_pairs(pairing_index) if labels is None or p.label in labels]
    if not pairs:
        raise DataError("no pairs to measure")
    ps, ss, ts = [], [], []
    for p in pairs:
        a = load_clip(p.original_path, sample_rate, clip_id=p.clip_id)
        b = load_clip(p.attacked_path, sample_rate, clip_id=p.clip_id)
        if len(a) != len(b):
            raise DataError(f"{p.clip_id}: original has {len(a)} samples, attacked has {len(b)}")
        ps.append(psnr(a.samples, b.samples, 1.0))
        ss.append(ssim(stft_logmag(a, n_fft, hop), stft_logmag(b, n_fft, hop)))
        ts.append(embedding_cosine(embed_text(backend.transcribe(a), embedder),
                                   embed_text(backend.transcribe(b), embedder)))
    return {"mean_psnr": float(np.mean(ps)), "mean_ssim": float(np.mean(ss)),
            "mean_text_similarity": float(np.mean(ts)), "n_pairs": len(pairs)}


def ablate(base_config, lambda2_grid, ensemble_sizes, manifest, out_dir, surrogate_pool, victim=None,
           threshold=0.5, subsets=("eval",), backend=None, progress=None):
    """Train, attack and evaluate once per (ensemble size, lambda2) cell.

    ``surrogate_pool`` lists surrogate specs; a cell with size M trains against
    the first M of them. The victim defaults to the first pool member and is
    the same for every cell, so Acc-BA is shared.
    """
    from .training import attack_corpus, train

    lambda2_grid, ensemble_sizes = list(lambda2_grid), list(ensemble_sizes)
    if not lambda2_grid or not ensemble_sizes:
        raise ConfigError("ablation grids must be nonempty", "evaluation.lambda2_grid")
    if max(ensemble_sizes) > len(surrogate_pool):
        raise ConfigError(f"ensemble size {max(ensemble_sizes)} exceeds pool of {len(surrogate_pool)}",
                          "evaluation.ensemble_sizes")
    out_dir = Path(out_dir)
    victim = victim or surrogate_pool[0]
    victim = victim if isinstance(victim, SurrogateModel) else load_surrogate(victim)
    cache = _ClipCache()
    acc_ba = detector_accuracy(victim, manifest, threshold, cache=cache)
    rows = []
    for m in ensemble_sizes:
        for lam in lambda2_grid:
            cell = out_dir / f"m{m}_lambda{lam:g}"
            cfg = replace(base_config, weights=replace(base_config.weights, lambda2=float(lam)),
                          ensemble_spec=list(surrogate_pool[:m]))
            ckpt = train(cfg, manifest, cell)
            pairs = attack_corpus(ckpt, manifest, cell / "attack", subsets=subsets)
            q = quality_report(pairs, backend)
            report = evaluate_attack([ScenarioSpec("white", [victim])], manifest, pairs, threshold)
            row = {"lambda2": float(lam), "ensemble_size": int(m), "psnr": q["mean_psnr"],
                   "ssim": q["mean_ssim"], "acc_ba": acc_ba, "acc_aa": report.rows[0]["acc_aa"]}
            rows.append(row)
            if progress:
                progress(row)
    write_ablation_csv(rows, out_dir / "ablation.csv")
    return rows


def write_ablation_csv(rows, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in ABLATION_COLUMNS])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())
    return path


def mark_differences(before, after):
    """Bracket words that differ between two transcripts; returns (before, after, n_marked)."""
    a, b = before.split(), after.split()
    out_a, out_b = [], []
    marked = 0
    for op, i1, i2, j1, j2 in difflib.SequenceMatcher(a=a, b=b, autojunk=False).get_opcodes():
        if op == "equal":
            out_a += a[i1:i2]
            out_b += b[j1:j2]
        else:
            out_a += [f"[{w}]" for w in a[i1:i2]]
            out_b += [f"[{w}]" for w in b[j1:j2]]
            marked += max(i2 - i1, j2 - j1)
    return " ".join(out_a), " ".join(out_b), marked


def _plot_pair(a, b, path, kind):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 1, figsize=(8, 4.5), sharex=kind == "waveform")
    for ax, clip, title in zip(axes, (a, b), ("original", "attacked")):
        if kind == "waveform":
            t = np.arange(len(clip)) / clip.sample_rate
            ax.plot(t, clip.samples, lw=0.5)
            ax.set_ylim(-1, 1)
            ax.set_ylabel("amplitude")
        else:
            spec = stft_logmag(clip, 512, 128)
            ax.imshow(spec.values, origin="lower", aspect="auto", cmap="magma",
                      extent=(0, spec.values.shape[1] * 128 / clip.sample_rate, 0, clip.sample_rate / 2))
            ax.set_ylabel("Hz")
        ax.set_title(title, fontsize=9)
    axes[-1].set_xlabel("seconds")
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def dump_samples(pairing_index, clip_ids, out_dir, backend=None, sample_rate=16000):
    """Write transcripts, waveform and spectrogram images for each requested clip."""
    backend = backend or MockBackend(sample_rate)
    pairs = {p.clip_id: p for p in _as_pairs(pairing_index)}
    missing = [c for c in clip_ids if c not in pairs]
    if missing:
        raise NotFound(f"clip ids not in pairing index: {missing}")
    out_dir = Path(out_dir)
    bundles = []
    for clip_id in clip_ids:
        p = pairs[clip_id]
        a = load_clip(p.original_path, sample_rate, clip_id=clip_id)
        b = load_clip(p.attacked_path, sample_rate, clip_id=clip_id)
        before, after, marked = mark_differences(backend.transcribe(a).text, backend.transcribe(b).text)
        d = out_dir / clip_id
        d.mkdir(parents=True, exist_ok=True)
        (d / "transcript_before.txt").write_text(before + "\n")
        (d / "transcript_after.txt").write_text(after + "\n")
        _plot_pair(a, b, d / "waveform.png", "waveform")
        _plot_pair(a, b, d / "spectrogram.png", "spectrogram")
        bundles.append({"clip_id": clip_id, "dir": str(d), "marked_words": marked})
    return bundles
