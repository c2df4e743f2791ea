"""Synthetic speakers and noise banks standing in for real recordings.

Each speaker is a harmonic stack with its own fundamental and a formant-like
amplitude envelope, so identity lives in the long-term spectrum.  Every file
is generated from a seed derived from (corpus seed, speaker, utterance) and
is therefore reproducible byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import SAMPLE_RATE, Waveform, write_wav
from .mixer import CATEGORIES, NoiseEntry

PEAK = 0.5


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    speaker_id: str
    f0: float
    formants: tuple[float, ...]
    bandwidths: tuple[float, ...]
    vibrato_depth: float
    seed: int

    def harmonic_amplitudes(self, freqs: np.ndarray) -> np.ndarray:
        env = np.zeros_like(freqs)
        for fc, bw in zip(self.formants, self.bandwidths):
            env += np.exp(-0.5 * ((freqs - fc) / bw) ** 2)
        return env + 0.02


@dataclass(frozen=True)
class Utterance:
    path: str
    speaker: str
    split: str

    @property
    def utt_id(self) -> str:
        return Path(self.path).with_suffix("").as_posix()


def _child_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def make_speakers(n_speakers: int, seed: int) -> list[SyntheticSpeakerSpec]:
    if n_speakers < 2:
        raise ValueError("a corpus needs at least two speakers")
    rng = _child_rng(seed, 0)
    # evenly spaced fundamentals keep harmonic sets apart
    f0s = np.linspace(100.0, 260.0, n_speakers) + rng.uniform(-3, 3, n_speakers)
    speakers = []
    for k in range(n_speakers):
        r = _child_rng(seed, 1, k)
        f1 = r.uniform(300, 900)
        f2 = r.uniform(1000, 2400)
        f3 = r.uniform(2500, 3800)
        speakers.append(SyntheticSpeakerSpec(
            f"spk{k:02d}", float(f0s[k]), (f1, f2, f3),
            tuple(r.uniform(80, 250, 3)), float(r.uniform(0.005, 0.02)), seed * 1000 + k))
    return speakers


def _syllable_envelope(n: int, rng: np.random.Generator, sr: int) -> np.ndarray:
    """Smooth on/off amplitude pattern at a syllable-like rate."""
    env = np.zeros(n)
    pos = 0
    while pos < n:
        on = int(rng.uniform(0.12, 0.35) * sr)
        off = int(rng.uniform(0.02, 0.10) * sr)
        seg = min(on, n - pos)
        env[pos : pos + seg] = np.sin(np.pi * (np.arange(seg) + 0.5) / on) ** 0.5
        pos += on + off
    return env


def synth_voice(spk: SyntheticSpeakerSpec, seconds: float, rng: np.random.Generator,
                sr: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(seconds * sr))
    t = np.arange(n) / sr
    rate = rng.uniform(3.0, 6.0)
    f0 = spk.f0 * (1 + spk.vibrato_depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    f0 *= 1 + rng.uniform(-0.01, 0.01)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int((sr / 2 - 200) // spk.f0)
    amps = spk.harmonic_amplitudes(spk.f0 * np.arange(1, n_harm + 1))
    x = np.zeros(n)
    for h in range(1, n_harm + 1):
        x += amps[h - 1] * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    x *= _syllable_envelope(n, rng, sr)
    return x / (np.max(np.abs(x)) + 1e-12) * PEAK * rng.uniform(0.6, 1.0)


def generate_corpus(out_dir, n_speakers: int = 8, utts_per_speaker: int = 20, seconds: float = 4.0,
                    seed: int = 7, test_fraction: float = 0.25) -> list[Utterance]:
    """Write WAVs plus ``manifest.tsv`` (path, speaker, split) under ``out_dir``."""
    if n_speakers < 2:
        raise ValueError("a corpus needs at least two speakers")
    if utts_per_speaker < 2:
        raise ValueError("each speaker needs at least two utterances for a train/test split")
    out = Path(out_dir)
    n_test = min(max(int(round(test_fraction * utts_per_speaker)), 1), utts_per_speaker - 1)
    utts = []
    for k, spk in enumerate(make_speakers(n_speakers, seed)):
        (out / spk.speaker_id).mkdir(parents=True, exist_ok=True)
        for u in range(utts_per_speaker):
            rel = f"{spk.speaker_id}/utt{u:03d}.wav"
            x = synth_voice(spk, seconds, _child_rng(seed, 2, k, u))
            write_wav(out / rel, Waveform(x))
            utts.append(Utterance(rel, spk.speaker_id, "test" if u >= utts_per_speaker - n_test else "train"))
    write_corpus_manifest(out / "manifest.tsv", utts)
    return utts


def write_corpus_manifest(path, utts: Sequence[Utterance]) -> None:
    Path(path).write_text("".join(f"{u.path}\t{u.speaker}\t{u.split}\n" for u in utts))


def read_corpus_manifest(path) -> list[Utterance]:
    utts = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            p, s, split = line.split("\t")
            utts.append(Utterance(p, s, split))
    return utts


# ---------------------------------------------------------------------------
# Noise bank
# ---------------------------------------------------------------------------

def synth_noise(seconds: float, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    """White noise through a random band-pass with spectral tilt."""
    n = int(round(seconds * sr))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / sr)
    lo, hi = rng.uniform(50, 1500), rng.uniform(3000, 7900)
    tilt = rng.uniform(-1.0, 0.5)
    shape = ((f >= lo) & (f <= hi)) * (np.maximum(f, 1) / 1000.0) ** tilt
    x = np.fft.irfft(spec * shape, n)
    return x / np.max(np.abs(x)) * PEAK


def synth_music(seconds: float, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Looped chord progression of equal-tempered notes with overtones."""
    n = int(round(seconds * sr))
    chord_len = int(rng.uniform(0.3, 0.6) * sr)
    n_chords = int(rng.integers(2, 5))
    chords = [440.0 * 2 ** ((rng.integers(-24, 12) + np.array([0, 4, 7, 12][: rng.integers(3, 5)])) / 12)
              for _ in range(n_chords)]
    t = np.arange(chord_len) / sr
    decay = np.exp(-t * rng.uniform(1.0, 4.0))
    loop = []
    for notes in chords:
        seg = np.zeros(chord_len)
        for fnote in notes:
            for h in (1, 2, 3):
                if h * fnote < sr / 2:
                    seg += np.sin(2 * np.pi * h * fnote * t + rng.uniform(0, 2 * np.pi)) / h
        loop.append(seg * decay)
    x = np.resize(np.concatenate(loop), n)
    return x / np.max(np.abs(x)) * PEAK


def synth_babble(seconds: float, rng: np.random.Generator, n_sources: int | None = None,
                 sr: int = SAMPLE_RATE) -> tuple[np.ndarray, list[SyntheticSpeakerSpec]]:
    """Sum of at least three independent speech-like harmonic talkers."""
    n_sources = n_sources if n_sources is not None else int(rng.integers(3, 7))
    if n_sources < 3:
        raise ValueError("babble needs at least three talkers")
    sources = []
    x = np.zeros(int(round(seconds * sr)))
    for i in range(n_sources):
        spk = SyntheticSpeakerSpec(
            f"talker{i}", float(rng.uniform(85, 320)),
            (rng.uniform(300, 900), rng.uniform(1000, 2400), rng.uniform(2500, 3800)),
            tuple(rng.uniform(80, 250, 3)), float(rng.uniform(0.005, 0.03)), int(rng.integers(1 << 31)))
        sources.append(spk)
        x += synth_voice(spk, seconds, rng, sr)
    return x / np.max(np.abs(x)) * PEAK, sources


def generate_noise_bank(out_dir, categories: Sequence[str] = CATEGORIES, n_per_category: int = 6,
                        seconds: float = 6.0, seed: int = 7) -> list[NoiseEntry]:
    """Write noise WAVs plus ``noise_manifest.tsv`` (id, path, category, split)."""
    out = Path(out_dir)
    entries = []
    for ci, cat in enumerate(categories):
        if cat not in CATEGORIES:
            raise ValueError(f"unknown noise category {cat!r}")
        (out / cat).mkdir(parents=True, exist_ok=True)
        for i in range(n_per_category):
            rng = _child_rng(seed, 3, CATEGORIES.index(cat), i)
            if cat == "noise":
                x = synth_noise(seconds, rng)
            elif cat == "music":
                x = synth_music(seconds, rng)
            else:
                x, _ = synth_babble(seconds, rng)
            rel = f"{cat}/{cat}{i:03d}.wav"
            write_wav(out / rel, Waveform(x))
            entries.append(NoiseEntry(f"{cat}{i:03d}", rel, cat, "train"))
    write_noise_manifest(out / "noise_manifest.tsv", entries)
    return entries


def write_noise_manifest(path, entries: Sequence[NoiseEntry]) -> None:
    Path(path).write_text("".join(f"{e.id}\t{e.path}\t{e.category}\t{e.split}\n" for e in entries))


def read_noise_manifest(path) -> list[NoiseEntry]:
    entries = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            i, p, c, s = line.split("\t")
            entries.append(NoiseEntry(i, p, c, s))
    return entries
