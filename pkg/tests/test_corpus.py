import numpy as np
import pytest

from cascadeid.audio import load_wav
from cascadeid.corpus import (generate_corpus, generate_noise_bank, make_speakers, read_corpus_manifest,
                              read_noise_manifest, synth_babble, synth_voice)
from cascadeid.mixer import CATEGORIES


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_corpus_is_byte_identical_across_runs(toy_data, tmp_path):
    root, utts, _ = toy_data
    again = generate_corpus(tmp_path / "corpus", 8, 20, 4.0, seed=7)
    assert again == utts
    first = _files(root / "corpus")
    assert len([k for k in first if k.endswith(".wav")]) == 160
    assert _files(tmp_path / "corpus") == first


def test_manifest_and_split(toy_data):
    root, utts, _ = toy_data
    assert read_corpus_manifest(root / "corpus" / "manifest.tsv") == utts
    for spk in {u.speaker for u in utts}:
        mine = [u for u in utts if u.speaker == spk]
        assert sum(u.split == "test" for u in mine) == 5


def _long_term_spectrum(root, utts, speaker):
    specs = []
    for u in utts:
        if u.speaker == speaker:
            x = load_wav(root / "corpus" / u.path).samples
            specs.append(np.abs(np.fft.rfft(x * np.hanning(x.size))))
    return np.mean(specs, axis=0)


def test_speakers_have_distinct_dominant_harmonics(toy_data):
    root, utts, _ = toy_data
    n = 64000
    freqs = np.fft.rfftfreq(n, 1 / 16000)
    sets = {}
    for spk in sorted({u.speaker for u in utts}):
        spec = _long_term_spectrum(root, utts, spk)
        peaks = [i for i in range(1, spec.size - 1) if spec[i] >= spec[i - 1] and spec[i] >= spec[i + 1]]
        top = sorted(peaks, key=lambda i: -spec[i])[:5]
        sets[spk] = frozenset(int(round(freqs[i] / 10)) for i in top)
    assert len(set(sets.values())) == len(sets)
    keys = sorted(sets)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            assert sets[keys[i]] != sets[keys[j]]


def test_long_term_spectra_are_linearly_separable(toy_data):
    root, utts, _ = toy_data
    speakers = sorted({u.speaker for u in utts})
    X, y = [], []
    for u in utts:
        x = load_wav(root / "corpus" / u.path).samples
        frames = x[: x.size // 512 * 512].reshape(-1, 512) * np.hanning(512)
        X.append(np.log(np.abs(np.fft.rfft(frames, axis=1)).mean(axis=0) + 1e-6))
        y.append(speakers.index(u.speaker))
    X = np.c_[np.array(X), np.ones(len(X))]
    Y = np.eye(len(speakers))[y]
    W, *_ = np.linalg.lstsq(X, Y, rcond=None)
    acc = np.mean((X @ W).argmax(axis=1) == np.array(y))
    assert acc >= 0.99


def test_fundamentals_are_spread_and_deterministic():
    a = make_speakers(8, 7)
    assert a == make_speakers(8, 7)
    f0 = sorted(s.f0 for s in a)
    assert min(np.diff(f0)) > 15


@pytest.mark.parametrize("n", [0, 1])
def test_too_few_speakers_rejected(n, tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(tmp_path, n, 4, 1.0)


def test_voice_is_seed_deterministic():
    spk = make_speakers(2, 1)[0]
    a = synth_voice(spk, 0.5, np.random.default_rng(3))
    b = synth_voice(spk, 0.5, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.max(np.abs(a)) <= 0.5 + 1e-12


def test_noise_bank_categories_and_determinism(toy_data, tmp_path):
    root, _, bank = toy_data
    entries = generate_noise_bank(tmp_path / "noise", seed=7)
    assert {e.category for e in entries} == set(CATEGORIES)
    assert len(CATEGORIES) == 3
    assert read_noise_manifest(tmp_path / "noise" / "noise_manifest.tsv") == entries
    wavs = lambda r: {k: v for k, v in _files(r).items() if k.endswith(".wav")}
    assert wavs(tmp_path / "noise") == wavs(root / "noise")


def test_babble_sums_at_least_three_talkers():
    x, sources = synth_babble(0.5, np.random.default_rng(0))
    assert len(sources) >= 3
    assert len({s.f0 for s in sources}) == len(sources)
    with pytest.raises(ValueError):
        synth_babble(0.5, np.random.default_rng(0), n_sources=2)
