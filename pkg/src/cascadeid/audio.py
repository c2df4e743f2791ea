"""Waveform I/O, magnitude spectrograms and fixed-length segment sampling."""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise ValueError("waveform is empty")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    segment_seconds: float = 3.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.fft_size < self.window_samples:
            raise ValueError("fft_size must cover the analysis window")
        if self.hop_samples > self.window_samples or self.hop_samples < 1:
            raise ValueError("hop must be between 1 sample and the window length")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def n_frames(self) -> int:
        """Frames produced for one segment once the padding rule is applied."""
        return self.segment_samples // self.hop_samples


@dataclass
class Spectrogram:
    values: np.ndarray  # (T, F, 1), magnitudes
    hop_samples: int
    window_samples: int
    sample_rate: int
    raw_frames: int = field(default=0)

    @property
    def shape(self):
        return self.values.shape


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV at 16 kHz, scaled by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: unsupported or corrupt WAV ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    if len(raw) != nframes * 2:
        raise AudioFormatError(f"{path}: truncated, header declares {nframes} frames")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return (n_samples - window) // hop + 1


def stft_magnitude(w: Waveform, cfg: SpectrogramConfig = SpectrogramConfig(), pad: bool = True) -> Spectrogram:
    """Hamming-windowed magnitude STFT, no normalisation, shape (T, F, 1).

    With ``pad`` the signal is reflect-padded so that ``N`` samples give
    exactly ``N // hop`` frames (300 for a 3 s segment at the defaults).
    """
    win, hop = cfg.window_samples, cfg.hop_samples
    x = w.samples
    if x.size < win:
        raise ValueError(f"waveform of {x.size} samples is shorter than one {win}-sample window")
    raw = frame_count(x.size, win, hop)
    if pad:
        target = max(x.size // hop, 1)
        extra = (target - 1) * hop + win - x.size
        if extra > 0:
            x = np.pad(x, (extra // 2, extra - extra // 2), mode="reflect")
    frames = sliding_window_view(x, win)[::hop]
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n=cfg.fft_size, axis=-1))
    return Spectrogram(spec[:, :, None].astype(np.float32), hop, win, w.sample_rate, raw)


def sample_segment(w: Waveform, seconds: float = 3.0, rng: np.random.Generator | None = None) -> Waveform:
    """Uniformly random crop of ``seconds``; shorter inputs are looped first."""
    n = int(round(seconds * w.sample_rate))
    x = w.samples
    if x.size < n:
        x = np.resize(x, n)
    if x.size == n:
        return Waveform(x.copy(), w.sample_rate)
    rng = rng if rng is not None else np.random.default_rng()
    start = int(rng.integers(0, x.size - n + 1))
    return Waveform(x[start : start + n].copy(), w.sample_rate)
