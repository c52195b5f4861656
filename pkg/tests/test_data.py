import io
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torawnet.data import (
    AugmentConfig,
    DataError,
    ProtocolEntry,
    Waveform,
    fix_length,
    gen_synthetic,
    iterate_batches,
    load_split,
    load_wav,
    parse_protocol,
    rawboost_augment,
    save_wav,
    serialize_protocol,
    spoofify,
    synth_bonafide,
    wav_path,
)


def write_raw_wav(path, pcm, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(pcm)


def test_load_zeros(tmp_path):
    write_raw_wav(tmp_path / "z.wav", np.zeros(100, "<i2").tobytes())
    w = load_wav(tmp_path / "z.wav")
    assert len(w) == 100 and np.all(w.samples == 0)


def test_load_scaling(tmp_path):
    write_raw_wav(tmp_path / "m.wav", np.array([-32768, 16384, 32767], "<i2").tobytes())
    np.testing.assert_array_equal(load_wav(tmp_path / "m.wav").samples, [-1.0, 0.5, 32767 / 32768])


@pytest.mark.parametrize(
    "kw,msg",
    [({"channels": 2}, "expected mono"), ({"rate": 8000}, "sample rate"), ({"width": 1}, "16-bit")],
)
def test_load_mismatches(tmp_path, kw, msg):
    write_raw_wav(tmp_path / "bad.wav", np.zeros(8, "<i2").tobytes(), **kw)
    with pytest.raises(DataError, match=msg):
        load_wav(tmp_path / "bad.wav")


def test_load_not_a_wav(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"hello")
    with pytest.raises(DataError):
        load_wav(tmp_path / "x.wav")


def test_save_load_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, 500)
    save_wav(tmp_path / "r.wav", x)
    assert np.max(np.abs(load_wav(tmp_path / "r.wav").samples - x)) <= 0.5 / 32768 + 1e-12


def test_waveform_invariants():
    with pytest.raises(DataError):
        Waveform(np.zeros(3), sample_rate=8000)
    with pytest.raises(DataError):
        Waveform(np.array([0.0, np.inf]))


def test_fix_length_cases():
    w = np.arange(70000.0)
    np.testing.assert_array_equal(fix_length(w), w[:64600])
    short = np.arange(30000.0)
    np.testing.assert_array_equal(fix_length(short), np.concatenate([short, short, short[:4600]]))
    exact = np.arange(64600.0)
    np.testing.assert_array_equal(fix_length(exact), exact)
    with pytest.raises(DataError):
        fix_length(np.zeros(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 5000), st.integers(0, 10000))
def test_fix_length_always_target(n, target, offset):
    out = fix_length(np.arange(float(n)), target, offset)
    assert out.shape == (target,)
    assert out[0] == offset % n


def test_protocol_examples():
    e = parse_protocol(["LA_0079 LA_T_1138215 - - bonafide\n"])[0]
    assert (e.speaker_id, e.utterance_id, e.attack_id, e.label) == ("LA_0079", "LA_T_1138215", "-", "bonafide")
    s = parse_protocol(["spk utt - A08 spoof"], "dev")[0]
    assert s.label == "spoof" and s.attack_id == "A08" and s.subset == "dev"


def test_protocol_errors():
    with pytest.raises(DataError, match="line 2"):
        parse_protocol(["a b - - bonafide", "a c - bonafide"])
    with pytest.raises(DataError, match="unknown key"):
        parse_protocol(["a b - - genuine"])
    with pytest.raises(DataError, match="duplicate"):
        parse_protocol(["a b - - spoof", "a b - - spoof"])


def test_protocol_skips_blank_lines():
    assert len(parse_protocol(io.StringIO("\na b - - spoof\n\n"))) == 1


token = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ_0123456789", min_size=1, max_size=12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(token, token, token, st.sampled_from(["bonafide", "spoof"])),
                unique_by=lambda t: t[1], max_size=20))
def test_protocol_round_trip(rows):
    entries = [ProtocolEntry(s, u, a, lab, "eval") for s, u, a, lab in rows]
    assert parse_protocol(io.StringIO(serialize_protocol(entries)), "eval") == entries


def test_augment_identity_configuration():
    x = np.random.default_rng(1).uniform(-0.5, 0.5, 2000)
    cfg = AugmentConfig(enable=True, n_bands=0, max_alpha=0.0, p_impulse=0.0)
    np.testing.assert_array_equal(rawboost_augment(x, cfg, np.random.default_rng(2)), x)


def test_augment_zero_input():
    cfg = AugmentConfig(enable=True)
    assert np.all(rawboost_augment(np.zeros(1000), cfg, np.random.default_rng(3)) == 0)


def test_augment_deterministic_and_bounded():
    x = np.random.default_rng(4).uniform(-1, 1, 4000)
    cfg = AugmentConfig(enable=True, p_impulse=0.05)
    a = rawboost_augment(x, cfg, np.random.default_rng(5))
    b = rawboost_augment(x, cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert a.shape == x.shape and np.max(np.abs(a)) <= 1.0
    assert not np.array_equal(a, x)


def test_augment_never_non_finite():
    cfg = AugmentConfig(enable=True, p_impulse=0.2, snr_range_db=(-10.0, 40.0))
    x = np.random.default_rng(6).uniform(-1, 1, 400)
    for seed in range(1000):
        y = rawboost_augment(x, cfg, np.random.default_rng(seed))
        assert y.shape == x.shape and np.all(np.isfinite(y))


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(p_impulse=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(snr_range_db=(30.0, 10.0))


def test_spoof_differs_from_twin():
    rng = np.random.default_rng(7)
    x = synth_bonafide(16000, rng)
    y = spoofify(x, np.random.default_rng(8))
    assert np.mean(np.abs(x - y) > 1 / 32768) >= 0.01
    assert np.max(np.abs(x)) <= 0.8 and np.max(np.abs(y)) <= 1.0


def test_corpus_determinism_and_layout(tmp_path):
    p1 = gen_synthetic(10, 7, tmp_path / "a", length=2000)
    gen_synthetic(10, 7, tmp_path / "b", length=2000)
    files_a = sorted(f.relative_to(tmp_path / "a") for f in (tmp_path / "a").rglob("*") if f.is_file())
    files_b = sorted(f.relative_to(tmp_path / "b") for f in (tmp_path / "b").rglob("*") if f.is_file())
    assert files_a == files_b
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert [len(p1[s]) for s in ("train", "dev", "eval")] == [12, 4, 4]
    lines = (tmp_path / "a" / "protocols" / "train.txt").read_text().splitlines()
    assert len(lines) == 12 and all(len(line.split()) == 5 for line in lines)
    for subset, entries in p1.items():
        assert {e.label for e in entries} == {"bonafide", "spoof"}
        assert all(wav_path(tmp_path / "a", subset, e.utterance_id).exists() for e in entries)


def test_corpus_custom_counts(tmp_path):
    p = gen_synthetic(160, 0, tmp_path, length=200, counts=(200, 60, 60))
    assert [len(p[s]) for s in ("train", "dev", "eval")] == [200, 60, 60]
    assert sum(e.label == "bonafide" for e in p["dev"]) == 30
    with pytest.raises(ValueError):
        gen_synthetic(10, 0, tmp_path / "x", counts=(5, 5, 5))
    with pytest.raises(ValueError):
        gen_synthetic(2, 0, tmp_path / "y")  # too few pairs for three balanced subsets


def test_corpus_seed_changes_audio(tmp_path):
    gen_synthetic(3, 1, tmp_path / "a", length=500)
    gen_synthetic(3, 2, tmp_path / "b", length=500)
    a = sorted((tmp_path / "a" / "train" / "wav").iterdir())[0].read_bytes()
    b = sorted((tmp_path / "b" / "train" / "wav").iterdir())[0].read_bytes()
    assert a != b


def test_load_split(tmp_path):
    gen_synthetic(5, 3, tmp_path, length=1000)
    split = load_split(tmp_path, "train", 1500)
    assert split.waveforms.shape == (6, 1500)
    assert set(split.labels.tolist()) == {0, 1}


def test_unwritable_corpus_dir(tmp_path):
    (tmp_path / "file").write_text("x")
    with pytest.raises(DataError):
        gen_synthetic(3, 0, tmp_path / "file" / "sub")


def test_batches_cover_permutation():
    batches = list(iterate_batches(10, 4, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    with pytest.raises(DataError):
        list(iterate_batches(0, 4, None))
