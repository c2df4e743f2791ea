"""Additive noise at exact SNR levels, plus the train/test noise partition."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import Waveform, load_wav, sample_segment

CATEGORIES = ("noise", "music", "babble")
SNR_LEVELS = (0, 5, 10, 15, 20)


@dataclass(frozen=True)
class NoiseEntry:
    id: str
    path: str
    category: str
    split: str = "train"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown noise category {self.category!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class MixSpec:
    snr_db: int
    category: str
    seed: int

    def __post_init__(self):
        if self.snr_db not in SNR_LEVELS:
            raise ValueError(f"SNR {self.snr_db} dB is not on the grid {SNR_LEVELS}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown noise category {self.category!r}")


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def fit_length(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop when longer than ``n``, loop then crop when shorter."""
    if noise.size < n:
        reps = -(-n // noise.size) + 1
        noise = np.tile(noise, reps)
    start = int(rng.integers(0, noise.size - n + 1))
    return noise[start : start + n]


def noise_gain(p_clean: float, p_noise: float, snr_db: float) -> float:
    if p_clean <= 0:
        raise ValueError("clean signal is silent; no SNR can be met")
    if p_noise <= 0:
        raise ValueError("noise signal is silent; no SNR can be met")
    return float(np.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10))))


def mix_components(clean: Waveform, noise: Waveform, snr_db: float,
                   rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``(clean, scaled_noise, gain)`` whose power ratio is ``snr_db``."""
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise sample rates differ")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = fit_length(noise.samples, clean.samples.size, rng)
    g = noise_gain(power(clean.samples), power(n), snr_db)
    return clean.samples, g * n, g


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
               rng: np.random.Generator | None = None) -> Waveform:
    """``clean + g * noise`` with g chosen from full-segment mean powers.

    No clipping or renormalisation is applied afterwards.
    """
    c, n, _ = mix_components(clean, noise, snr_db, rng)
    return Waveform(c + n, clean.sample_rate)


def measured_snr(clean: np.ndarray, scaled_noise: np.ndarray) -> float:
    return 10 * np.log10(power(clean) / power(scaled_noise))


def split_noise_corpus(entries: Iterable[NoiseEntry], rng: np.random.Generator,
                       train_ratio: float = 0.5) -> tuple[list[NoiseEntry], list[NoiseEntry]]:
    """Stratified, disjoint train/test partition of a noise bank."""
    by_cat: dict[str, list[NoiseEntry]] = {}
    for e in entries:
        by_cat.setdefault(e.category, []).append(e)
    train, test = [], []
    for cat in sorted(by_cat):
        items = sorted(by_cat[cat], key=lambda e: e.id)
        if len(items) < 2:
            raise ValueError(f"category {cat!r} needs at least 2 entries to split, has {len(items)}")
        order = rng.permutation(len(items))
        n_train = min(max(int(round(train_ratio * len(items))), 1), len(items) - 1)
        for rank, i in enumerate(order):
            e = items[i]
            split = "train" if rank < n_train else "test"
            (train if split == "train" else test).append(
                NoiseEntry(e.id, e.path, e.category, split))
    return train, test


# ---------------------------------------------------------------------------
# Mixing manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixRecord:
    """Everything needed to rebuild one mixture bit-exactly.

    ``noise == "-"`` marks a clean ("original") condition.
    """
    clean: str
    noise: str
    category: str
    snr_db: str
    seed: int

    def to_line(self) -> str:
        return "\t".join([self.clean, self.noise, self.category, self.snr_db, str(self.seed)])

    @classmethod
    def from_line(cls, line: str) -> "MixRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 5:
            raise ValueError(f"malformed mixing record: {line!r}")
        return cls(parts[0], parts[1], parts[2], parts[3], int(parts[4]))


def realize(record: MixRecord, root, seconds: float, cache: dict | None = None) -> tuple[Waveform, Waveform]:
    """Rebuild ``(noisy, clean)`` segments for a mixing record."""
    root = Path(root)

    def _load(rel):
        if cache is not None and rel in cache:
            return cache[rel]
        w = load_wav(root / rel)
        if cache is not None:
            cache[rel] = w
        return w

    rng = np.random.default_rng(record.seed)
    clean = sample_segment(_load(record.clean), seconds, rng)
    if record.noise == "-":
        return clean, clean
    noisy = mix_at_snr(clean, _load(record.noise), float(record.snr_db), rng)
    return noisy, clean


def write_manifest(path, records: Sequence[MixRecord], header: str = "") -> None:
    lines = [f"# {header}"] if header else []
    lines += [r.to_line() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[list[MixRecord], str]:
    header = ""
    records = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            header = line[1:].strip()
        elif line.strip():
            records.append(MixRecord.from_line(line))
    return records, header
