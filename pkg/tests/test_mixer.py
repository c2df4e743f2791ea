import numpy as np
import pytest

from cascadeid.audio import Waveform
from cascadeid.mixer import (CATEGORIES, SNR_LEVELS, MixRecord, NoiseEntry, fit_length, measured_snr,
                             mix_at_snr, mix_components, noise_gain, read_manifest, split_noise_corpus,
                             write_manifest)


def test_gain_for_unit_powers_at_ten_db():
    # Pc = 1, Pn = 4, 10 dB -> g = sqrt(1 / 40)
    assert noise_gain(1.0, 4.0, 10) == pytest.approx(np.sqrt(1 / 40), rel=1e-12)


def test_mix_is_clean_plus_scaled_noise():
    rng = np.random.default_rng(0)
    clean = Waveform(rng.normal(size=800))
    noise = Waveform(rng.normal(size=800) * 3)
    c, n, g = mix_components(clean, noise, 5, np.random.default_rng(1))
    mixed = mix_at_snr(clean, noise, 5, np.random.default_rng(1))
    np.testing.assert_array_equal(mixed.samples, c + n)
    np.testing.assert_allclose(n, g * noise.samples)


@pytest.mark.parametrize("snr", SNR_LEVELS)
def test_measured_snr_hits_request(snr):
    rng = np.random.default_rng(snr)
    clean = Waveform(rng.normal(size=4000))
    noise = Waveform(rng.uniform(-1, 1, size=1500))
    c, n, _ = mix_components(clean, noise, snr, rng)
    assert abs(measured_snr(c, n) - snr) < 0.01


def test_short_noise_is_looped():
    noise = np.arange(5.0)
    out = fit_length(noise, 12, np.random.default_rng(0))
    assert out.size == 12
    assert set(np.diff(out)) <= {1.0, -4.0}


def test_silent_inputs_are_errors():
    with pytest.raises(ValueError):
        mix_at_snr(Waveform(np.zeros(100)), Waveform(np.ones(100)), 0)
    with pytest.raises(ValueError):
        mix_at_snr(Waveform(np.ones(100)), Waveform(np.zeros(100)), 0)


def _bank(n):
    return [NoiseEntry(f"{c}{i:02d}", f"{c}/{i}.wav", c, "train") for c in CATEGORIES for i in range(n)]


def test_split_is_stratified_and_disjoint():
    train, test = split_noise_corpus(_bank(6), np.random.default_rng(0))
    assert not {e.id for e in train} & {e.id for e in test}
    for c in CATEGORIES:
        assert sum(e.category == c for e in train) == 3
        assert sum(e.category == c for e in test) == 3
    assert all(e.split == "train" for e in train) and all(e.split == "test" for e in test)


def test_split_is_seed_deterministic_and_order_free():
    bank = _bank(4)
    a = split_noise_corpus(bank, np.random.default_rng(5))
    b = split_noise_corpus(bank[::-1], np.random.default_rng(5))
    assert a == b


def test_split_needs_two_per_category():
    with pytest.raises(ValueError):
        split_noise_corpus(_bank(1), np.random.default_rng(0))


def test_unknown_category_rejected():
    with pytest.raises(ValueError):
        NoiseEntry("x", "x.wav", "traffic", "train")


def test_manifest_round_trip(tmp_path):
    recs = [MixRecord("corpus/spk00/utt000.wav", "noise/a.wav", "noise", "5", 17),
            MixRecord("corpus/spk01/utt003.wav", "-", "original", "-", 3)]
    write_manifest(tmp_path / "m.tsv", recs, "config_hash=abc seed=1")
    got, header = read_manifest(tmp_path / "m.tsv")
    assert got == recs and header == "config_hash=abc seed=1"
