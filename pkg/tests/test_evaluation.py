import csv
import json
import shutil

import numpy as np
import pytest

from spoofbreak.audio_io import DatasetManifest, ManifestRecord, load_clip, write_wav
from spoofbreak.errors import ConfigError, DataError, NotFound
from spoofbreak.evaluation import (
    ABLATION_COLUMNS,
    REPORT_COLUMNS,
    EvalReport,
    PairRecord,
    ScenarioSpec,
    ablate,
    check_scenario_families,
    detector_accuracy,
    dump_samples,
    evaluate_attack,
    mark_differences,
    quality_report,
    read_pairs,
)
from spoofbreak.nets import DiscriminatorConfig, GeneratorConfig
from spoofbreak.surrogates import SurrogateModel
from spoofbreak.toy import build_toy_dataset
from spoofbreak.training import TrainConfig

L = 2048


class PeakVictim(SurrogateModel):
    """Calls a clip real when its peak is below a cut-off."""

    def __init__(self, model_id, cut, family="res_tssdnet_like", size="base"):
        super().__init__(model_id, family, None, size=size)
        self.cut = cut

    def score_clip(self, clip):
        return 1.0 if np.abs(clip.samples).max() < self.cut else 0.0


def write_pairs(path, pairs):
    path.write_text("".join(json.dumps(p) + "\n" for p in pairs))
    return path


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return build_toy_dataset(40, L, 2, tmp_path_factory.mktemp("corpus"))


@pytest.fixture
def identity_pairs(corpus, tmp_path):
    pairs = []
    for r in corpus.select(subset="eval"):
        dst = tmp_path / "att" / f"{r.clip_id}.wav"
        dst.parent.mkdir(exist_ok=True)
        shutil.copyfile(corpus.resolve(r), dst)
        pairs.append({"clip_id": r.clip_id, "original_path": corpus.resolve(r),
                      "attacked_path": f"att/{r.clip_id}.wav", "label": r.label})
    return write_pairs(tmp_path / "pairs.jsonl", pairs)


def test_read_pairs_resolves_relative(identity_pairs, tmp_path):
    pairs = read_pairs(identity_pairs)
    assert all(p.attacked_path.startswith(str(tmp_path)) for p in pairs)
    with pytest.raises(NotFound):
        read_pairs(tmp_path / "nope.jsonl")


def test_detector_accuracy_counts(tmp_path):
    recs = []
    for i in range(10):
        label = "real" if i < 5 else "fake"
        amp = 0.2 if (label == "real") != (i in (0, 9)) else 0.8
        write_wav(tmp_path / f"{i}.wav", np.full(64, amp), 16000)
        recs.append(ManifestRecord(str(i), f"{i}.wav", label, "eval"))
    m = DatasetManifest(recs, str(tmp_path))
    assert detector_accuracy(PeakVictim("v", 0.5), m) == pytest.approx(0.8)
    with pytest.raises(DataError):
        detector_accuracy(PeakVictim("v", 0.5), DatasetManifest(recs[:0], str(tmp_path)))


def test_identity_attack_has_zero_drop(corpus, identity_pairs):
    scen = [ScenarioSpec("white", [PeakVictim("a", 0.5)]), ScenarioSpec("black", [PeakVictim("b", 0.6, "toy_cnn_small")])]
    report = evaluate_attack(scen, corpus, identity_pairs)
    assert len(report.rows) == 2
    for row in report.rows:
        assert row["acc_aa"] == row["acc_ba"] and row["drop"] == 0.0


def test_attack_rows_and_averages(corpus, tmp_path):
    # "attack" = shrink every fake to a small amplitude so the peak victim calls it real
    pairs = []
    for r in corpus.select(subset="eval"):
        clip = load_clip(corpus.resolve(r))
        scale = 0.1 if r.label == "fake" and int(r.clip_id[-2:]) % 2 else 1.0
        write_wav(tmp_path / f"{r.clip_id}.wav", clip.samples * scale, clip.sample_rate)
        pairs.append({"clip_id": r.clip_id, "original_path": corpus.resolve(r),
                      "attacked_path": f"{r.clip_id}.wav", "label": r.label})
    index = write_pairs(tmp_path / "pairs.jsonl", pairs)
    victims = [PeakVictim("w1", 0.2), PeakVictim("w2", 0.25)]
    report = evaluate_attack([ScenarioSpec("white", victims)], corpus, index)
    for row in report.rows:
        assert row["drop"] == row["acc_ba"] - row["acc_aa"]
        assert 0 <= row["acc_aa"] <= 1 and 0 <= row["success_rate"] <= 1
    avg = report.scenario_averages["white"]
    for k in ("acc_ba", "acc_aa", "drop", "success_rate"):
        assert abs(avg[k] - np.mean([r[k] for r in report.rows])) <= 1e-9
    paths = report.write(tmp_path / "rep")
    with open(paths[1], newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 3
    assert EvalReport.read(paths[0]).rows == report.rows


def test_missing_attacked_clip_is_named(corpus, identity_pairs, tmp_path):
    pairs = read_pairs(identity_pairs)
    victim = ScenarioSpec("white", [PeakVictim("a", 0.5)])
    fake = next(p for p in pairs if p.label == "fake")
    with pytest.raises(DataError, match=fake.clip_id):
        evaluate_attack([victim], corpus, [p for p in pairs if p is not fake])
    gone = [PairRecord(p.clip_id, p.original_path, str(tmp_path / "void.wav"), p.label)
            if p is fake else p for p in pairs]
    with pytest.raises(DataError, match=fake.clip_id):
        evaluate_attack([victim], corpus, gone)


def test_scenario_family_rules():
    ens = ["res_tssdnet_like", "inc_tssdnet_like"]
    check_scenario_families([ScenarioSpec("white", [PeakVictim("a", 1)]),
                             ScenarioSpec("gray", [PeakVictim("b", 1, size="large")]),
                             ScenarioSpec("black", [PeakVictim("c", 1, "toy_cnn_small")])], ens)
    with pytest.raises(ConfigError):
        check_scenario_families([ScenarioSpec("black", [PeakVictim("a", 1)])], ens)
    with pytest.raises(ConfigError):
        check_scenario_families([ScenarioSpec("gray", [PeakVictim("a", 1)])], ens)
    with pytest.raises(ConfigError):
        check_scenario_families([ScenarioSpec("white", [PeakVictim("a", 1, "toy_cnn_large")])], ens)
    with pytest.raises(ConfigError):
        ScenarioSpec("grey")


def test_quality_identity_and_permutation(identity_pairs):
    q = quality_report(identity_pairs)
    assert (q["mean_psnr"], q["mean_ssim"], q["mean_text_similarity"]) == (99.0, 1.0, 1.0)
    pairs = read_pairs(identity_pairs)
    a = quality_report(pairs, labels=None)
    b = quality_report(pairs[::-1], labels=None)
    assert a == b and a["n_pairs"] == len(pairs)


def test_quality_uniform_noise(tmp_path, rng):
    pairs = []
    for i in range(4):
        x = rng.uniform(-0.5, 0.5, 80000)
        write_wav(tmp_path / f"o{i}.wav", x, 16000)
        write_wav(tmp_path / f"a{i}.wav", x + rng.uniform(-0.1, 0.1, x.size), 16000)
        pairs.append(PairRecord(str(i), str(tmp_path / f"o{i}.wav"), str(tmp_path / f"a{i}.wav"), "fake"))
    assert quality_report(pairs)["mean_psnr"] == pytest.approx(10 * np.log10(1 / (0.01 / 3)), abs=0.05)


def test_quality_length_mismatch(tmp_path):
    write_wav(tmp_path / "o.wav", np.zeros(4000), 16000)
    write_wav(tmp_path / "a.wav", np.zeros(4001), 16000)
    with pytest.raises(DataError):
        quality_report([PairRecord("x", str(tmp_path / "o.wav"), str(tmp_path / "a.wav"), "fake")])
    with pytest.raises(DataError):
        quality_report([])


def test_mark_differences():
    assert mark_differences("BAB DOD", "BAB DOD") == ("BAB DOD", "BAB DOD", 0)
    a, b, n = mark_differences("BAB DOD KUK", "BAB LIL KUK")
    assert (a, b, n) == ("BAB [DOD] KUK", "BAB [LIL] KUK", 1)


def test_dump_samples(corpus, identity_pairs, tmp_path):
    ids = [r.clip_id for r in corpus.select(subset="eval")][:3]
    bundles = dump_samples(identity_pairs, ids, tmp_path / "dump")
    assert [b["clip_id"] for b in bundles] == ids
    for b in bundles:
        d = tmp_path / "dump" / b["clip_id"]
        assert {p.name for p in d.iterdir()} == {"transcript_before.txt", "transcript_after.txt",
                                                 "waveform.png", "spectrogram.png"}
        assert b["marked_words"] == 0
    first = (tmp_path / "dump" / ids[0] / "spectrogram.png").read_bytes()
    dump_samples(identity_pairs, ids[:1], tmp_path / "dump")
    assert (tmp_path / "dump" / ids[0] / "spectrogram.png").read_bytes() == first
    with pytest.raises(NotFound):
        dump_samples(identity_pairs, ["nope"], tmp_path / "dump")


def test_dump_samples_marks_band_change(tmp_path):
    t = np.arange(16000) / 16000
    write_wav(tmp_path / "o.wav", 0.3 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 3000 * t), 16000)
    write_wav(tmp_path / "a.wav", 0.3 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 6500 * t), 16000)
    pairs = [PairRecord("x", str(tmp_path / "o.wav"), str(tmp_path / "a.wav"), "fake")]
    (b,) = dump_samples(pairs, ["x"], tmp_path / "d")
    assert b["marked_words"] >= 1
    assert "[" in (tmp_path / "d" / "x" / "transcript_after.txt").read_text()


def test_ablate_grid(corpus, tmp_path):
    from spoofbreak.surrogates import load_surrogate

    pool = []
    for i, fam in enumerate(("toy_cnn_small", "res_tssdnet_like", "inc_tssdnet_like")):
        path = load_surrogate({"family": fam, "frame_len": L, "seed": i}).save(tmp_path / f"{fam}.sg")
        pool.append({"family": fam, "weights_path": str(path)})
    cfg = TrainConfig(frame_len=L, batch_size=2, total_steps=1, checkpoint_every=1,
                      generator=GeneratorConfig(width=2, frame_len=L),
                      discriminator=DiscriminatorConfig(width=2, input_len=L, fc_dims=(8,)))
    rows = ablate(cfg, [0.1, 0.0001], [2, 3], corpus, tmp_path / "abl", pool)
    assert len(rows) == 4
    assert [(r["ensemble_size"], r["lambda2"]) for r in rows] == [(2, 0.1), (2, 0.0001), (3, 0.1), (3, 0.0001)]
    assert len({r["acc_ba"] for r in rows}) == 1
    with open(tmp_path / "abl" / "ablation.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == ABLATION_COLUMNS and len(table) == 5
    with pytest.raises(ConfigError):
        ablate(cfg, [], [2], corpus, tmp_path / "x", pool)
    with pytest.raises(ConfigError):
        ablate(cfg, [0.1], [4], corpus, tmp_path / "x", pool)
