import json

import numpy as np
import pytest
import soundfile as sf
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbreak.audio_io import (
    AudioClip,
    DatasetManifest,
    ManifestRecord,
    chunk,
    load_clip,
    parse_asvspoof_protocol,
    quantize_pcm16,
    reassemble,
    resample,
    write_wav,
)
from spoofbreak.errors import DataError, DecodeError, EmptyAudio, InvalidArgument, NotFound, ParseError

PROTOCOL = """\
LA_0079 LA_T_1138215 - - bonafide
LA_0079 LA_T_1271820 - A01 spoof
LA_0070 LA_D_1047731 - A05 spoof
LA_0031 LA_E_2834763 - A11 spoof

LA_0031 LA_E_1000001 - - bonafide
"""


def test_parse_protocol():
    m = parse_asvspoof_protocol(PROTOCOL, "/data/LA")
    assert len(m) == 5
    r = m["LA_T_1138215"]
    assert (r.label, r.subset, r.dataset_tag, r.path) == ("real", "train", "asvspoof2019-la", "flac/LA_T_1138215.flac")
    assert m["LA_T_1271820"].label == "fake"
    assert m["LA_D_1047731"].subset == "dev"
    assert [r.clip_id for r in m.select(subset="eval", label="real")] == ["LA_E_1000001"]
    assert m.resolve(r) == "/data/LA/flac/LA_T_1138215.flac"


def test_parse_protocol_explicit_subset():
    m = parse_asvspoof_protocol(PROTOCOL, "/d", subset="eval")
    assert {r.subset for r in m} == {"eval"}


@pytest.mark.parametrize("text,line", [
    ("LA_0079 LA_T_1 - - bonafide\nLA_0079 LA_T_2 - -\n", 2),
    ("LA_0079 LA_T_1 - - genuine\n", 1),
    ("LA_0079 LA_T_1 - - bonafide\nLA_0079 LA_T_1 - - spoof\n", 2),
])
def test_parse_protocol_errors(text, line):
    with pytest.raises(ParseError) as exc:
        parse_asvspoof_protocol(text, "/d")
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_manifest_roundtrip(tmp_path):
    recs = [ManifestRecord("a", "wav/a.wav", "real", "train"), ManifestRecord("b", "wav/b.wav", "fake", "eval", "x")]
    m = DatasetManifest(recs, str(tmp_path))
    m.write(tmp_path / "manifest.jsonl")
    back = DatasetManifest.read(tmp_path / "manifest.jsonl")
    assert back.records == recs
    assert back.root_dir == str(tmp_path)
    assert json.loads((tmp_path / "manifest.jsonl").read_text().splitlines()[1])["dataset_tag"] == "x"


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        DatasetManifest([ManifestRecord("a", "a", "real", "train"), ManifestRecord("a", "b", "fake", "eval")])
    with pytest.raises(InvalidArgument):
        ManifestRecord("a", "a", "bonafide", "train")
    with pytest.raises(InvalidArgument):
        ManifestRecord("a", "a", "real", "test")
    with pytest.raises(NotFound):
        DatasetManifest.read(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"clip_id": "a", "path": "a", "label": "real", "subset": "train"}\n{oops\n')
    with pytest.raises(ParseError) as exc:
        DatasetManifest.read(bad)
    assert exc.value.line == 2


def test_load_clip_wav_and_flac(tmp_path, rng):
    x = rng.uniform(-0.5, 0.5, 1600)
    write_wav(tmp_path / "a.wav", x, 16000)
    clip = load_clip(tmp_path / "a.wav")
    assert clip.sample_rate == 16000 and clip.samples.dtype == np.float32
    np.testing.assert_allclose(clip.samples, x, atol=1 / 32767)
    sf.write(tmp_path / "b.flac", x, 16000)
    np.testing.assert_allclose(load_clip(tmp_path / "b.flac").samples, x, atol=1 / 32767)
    assert clip.clip_id == "a"


def test_load_clip_resamples_and_downmixes(tmp_path):
    t = np.arange(8000) / 8000
    left = 0.4 * np.sin(2 * np.pi * 440 * t)
    sf.write(tmp_path / "s.wav", np.stack([left, left], axis=1), 8000)
    clip = load_clip(tmp_path / "s.wav", 16000)
    assert len(clip) == 16000
    spec = np.abs(np.fft.rfft(clip.samples))
    assert np.argmax(spec) == 440


def test_load_clip_errors(tmp_path):
    with pytest.raises(NotFound):
        load_clip(tmp_path / "nope.wav")
    (tmp_path / "junk.wav").write_bytes(b"not audio at all")
    with pytest.raises(DecodeError):
        load_clip(tmp_path / "junk.wav")
    sf.write(tmp_path / "empty.wav", np.zeros(0), 16000)
    with pytest.raises(EmptyAudio):
        load_clip(tmp_path / "empty.wav")


def test_clip_validation():
    with pytest.raises(EmptyAudio):
        AudioClip("e", np.zeros(0), 16000)
    with pytest.raises(InvalidArgument):
        AudioClip("e", np.zeros(3), 0)
    assert AudioClip("a", np.zeros(8000), 16000).duration == 0.5


def test_resample_length():
    assert resample(np.zeros(1000), 22050, 16000).size == int(np.ceil(1000 * 16000 / 22050))


def test_quantize_pcm16():
    q = quantize_pcm16(np.array([0.0, 1.0, -1.0, 2.0, 0.5 / 32767, -0.5 / 32767, 1.4 / 32767]))
    assert q.tolist() == [0, 32767, -32767, 32767, 1, -1, 1]


def test_chunk_pads_by_tiling():
    frames = chunk(np.arange(10, dtype=np.float32), 4)
    assert frames.shape == (3, 4)
    assert frames[2].tolist() == [8, 9, 8, 9]
    assert chunk(np.arange(3.0), 7)[0].tolist() == [0, 1, 2, 0, 1, 2, 0]
    with pytest.raises(InvalidArgument):
        chunk(np.zeros(4), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(1, 64))
def test_chunk_reassemble_roundtrip(n, frame_len):
    x = np.arange(n, dtype=np.float32)
    frames = chunk(x, frame_len)
    assert frames.shape == (-(-n // frame_len), frame_len)
    np.testing.assert_array_equal(reassemble(frames, n), x)
