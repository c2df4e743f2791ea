"""Adam, the per-epoch learning-rate decay and the four training regimes.

Regimes:

* ``pretrain-sid`` - cross-entropy of SID-Net on the noisy spectrogram.
* ``pretrain-se``  - MSE between the enhanced and the clean spectrogram.
* ``joint``        - cross-entropy through SE-Net and SID-Net, all trainable.
* ``frozen-sid``   - the same cascade loss with SID-Net held fixed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor as tn
from .audio import SpectrogramConfig, Waveform, load_wav, stft_magnitude
from .corpus import Utterance
from .mixer import MixRecord, NoiseEntry, SNR_LEVELS, realize
from .models import ModelBundle
from .tensor import Tensor

log = logging.getLogger(__name__)

REGIMES = ("pretrain-sid", "pretrain-se", "joint", "frozen-sid")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    decay: float = 0.9
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    regime: str = "joint"
    ms_placement: str = "none"
    pretrain_se_epochs: int = 5
    pretrain_sid_epochs: int = 10
    segments_per_utt: int = 1

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.ms_placement not in ("none", "se", "sid", "both"):
            raise ValueError(f"unknown MS placement {self.ms_placement!r}")

    def lr(self, epoch: int) -> float:
        return lr_at(epoch, self.lr0, self.decay)


def lr_at(epoch: int, lr0: float = 1e-3, decay: float = 0.9) -> float:
    return lr0 * decay ** epoch


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update of every parameter that holds a gradient."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.sum(~np.isfinite(p.grad)))
            raise FloatingPointError(f"non-finite gradient in {name}: {bad} of {p.grad.size} entries "
                                     f"(step {state.step + 1})")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    noisy: np.ndarray  # (N, T, F, 1)
    labels: np.ndarray
    clean: np.ndarray


class SegmentSource:
    """Turns mixing records into spectrogram arrays, caching decoded WAVs."""

    def __init__(self, root, frontend: SpectrogramConfig, speakers: Sequence[str]):
        self.root = Path(root)
        self.frontend = frontend
        self.speaker_index = {s: i for i, s in enumerate(speakers)}
        self._cache: dict[str, Waveform] = {}

    def label(self, clean_path: str) -> int:
        return self.speaker_index[Path(clean_path).parent.name]

    def spectrograms(self, rec: MixRecord) -> tuple[np.ndarray, np.ndarray]:
        try:
            noisy, clean = realize(rec, self.root, self.frontend.segment_seconds, self._cache)
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"missing audio for mixing record: {exc}") from exc
        return stft_magnitude(noisy, self.frontend).values, stft_magnitude(clean, self.frontend).values

    def batch(self, records: Sequence[MixRecord]) -> Batch:
        pairs = [self.spectrograms(r) for r in records]
        return Batch(np.stack([p[0] for p in pairs]), np.array([self.label(r.clean) for r in records]),
                     np.stack([p[1] for p in pairs]))


def draw_records(utts: Sequence[Utterance], noise: Sequence[NoiseEntry], categories: Sequence[str],
                 snrs: Sequence[int], rng: np.random.Generator, corpus_prefix: str = "corpus",
                 noise_prefix: str = "noise", split: str = "train", repeats: int = 1) -> list[MixRecord]:
    """One random (category, SNR, noise file, seed) per utterance and repeat.

    Only noise entries from ``split`` are eligible.
    """
    for s in snrs:
        if s not in SNR_LEVELS:
            raise ValueError(f"SNR {s} dB is not on the grid {SNR_LEVELS}")
    pool = {c: [e for e in noise if e.category == c and e.split == split] for c in categories}
    for c, entries in pool.items():
        if not entries:
            raise ValueError(f"no {split}-split noise in category {c!r}")
    records = []
    for _ in range(repeats):
        for u in utts:
            cat = categories[int(rng.integers(len(categories)))]
            snr = snrs[int(rng.integers(len(snrs)))]
            entry = pool[cat][int(rng.integers(len(pool[cat])))]
            records.append(MixRecord(f"{corpus_prefix}/{u.path}", f"{noise_prefix}/{entry.path}", cat, str(snr),
                                     int(rng.integers(2**31 - 1))))
    return records


def build_batches(utts: Sequence[Utterance], noise: Sequence[NoiseEntry], source: SegmentSource,
                  cfg: TrainConfig, rng: np.random.Generator, categories: Sequence[str],
                  snrs: Sequence[int] = SNR_LEVELS) -> Iterator[Batch]:
    """One epoch of shuffled training batches, deterministic under ``rng``."""
    records = draw_records(utts, noise, categories, snrs, rng, repeats=cfg.segments_per_utt)
    order = rng.permutation(len(records))
    for i in range(0, len(order), cfg.batch_size):
        yield source.batch([records[j] for j in order[i : i + cfg.batch_size]])


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _trainable(bundle: ModelBundle, regime: str) -> dict[str, Tensor]:
    if regime in ("pretrain-se", "joint", "frozen-sid") and bundle.se is None:
        raise ValueError(f"regime {regime!r} needs SE-Net parameters; variant {bundle.variant} has none")
    if regime == "pretrain-sid":
        return bundle.named_parameters("sid")
    if regime in ("pretrain-se", "frozen-sid"):
        return bundle.named_parameters("se")
    return bundle.named_parameters()


def regime_loss(bundle: ModelBundle, regime: str, batch: Batch) -> Tensor:
    x = Tensor(batch.noisy)
    if regime == "pretrain-sid":
        return tn.softmax_cross_entropy(bundle.sid.forward_logits(x), batch.labels)
    if regime == "pretrain-se":
        return tn.mse_loss(bundle.se(x), Tensor(batch.clean))
    return tn.softmax_cross_entropy(bundle.logits(x), batch.labels)


class MetricsLog:
    """Plain-text ``step epoch lr loss`` lines, appended as training runs."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.lines: list[str] = []

    def write(self, phase: str, step: int, epoch: int, lr: float, loss: float):
        line = f"{phase} step={step} epoch={epoch} lr={lr!r} loss={loss!r}"
        self.lines.append(line)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")


def train(regime: str, bundle: ModelBundle, batches_for_epoch, cfg: TrainConfig, epochs: int,
          metrics: MetricsLog | None = None) -> list[float]:
    """Run one regime for ``epochs`` epochs with a fresh optimizer state.

    ``batches_for_epoch(epoch)`` yields :class:`Batch` objects.  Parameters
    outside the regime's trainable set are excluded from the graph, so
    they receive no gradient at all.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    params = _trainable(bundle, regime)
    everything = bundle.named_parameters()
    flags = {k: p.requires_grad for k, p in everything.items()}
    for k, p in everything.items():
        p.requires_grad = k in params
        p.grad = None
    state = OptimizerState()
    losses = []
    try:
        for epoch in range(epochs):
            lr = cfg.lr(epoch)
            for batch in batches_for_epoch(epoch):
                for p in params.values():
                    p.grad = None
                loss = regime_loss(bundle, regime, batch)
                tn.backward(loss)
                adam_step(params, state, lr)
                losses.append(loss.item())
                if metrics is not None:
                    metrics.write(regime, state.step, epoch, lr, loss.item())
            log.info("%s %s epoch %d lr %.3g loss %.4f", bundle.variant, regime, epoch, lr, losses[-1])
    finally:
        for k, p in everything.items():
            p.requires_grad = flags[k]
            p.grad = None
    return losses


def phases(bundle: ModelBundle, cfg: TrainConfig) -> list[tuple[str, int]]:
    """Ordered (regime, epochs) schedule for a variant.

    The SID-only baseline gets as many SID epochs as the cascades' SID
    pre-training plus fine-tuning.
    """
    final = bundle.spec.final_regime
    if final == "pretrain-sid":
        return [("pretrain-sid", cfg.pretrain_sid_epochs + cfg.epochs)]
    return [("pretrain-se", cfg.pretrain_se_epochs), ("pretrain-sid", cfg.pretrain_sid_epochs), (final, cfg.epochs)]


def train_variant(bundle: ModelBundle, utts: Sequence[Utterance], noise: Sequence[NoiseEntry],
                  source: SegmentSource, cfg: TrainConfig, categories: Sequence[str],
                  snrs: Sequence[int] = SNR_LEVELS, metrics: MetricsLog | None = None) -> dict[str, list[float]]:
    history = {}
    for pi, (regime, epochs) in enumerate(phases(bundle, cfg)):
        if epochs <= 0:
            continue
        rng = np.random.default_rng([cfg.seed, pi])

        def epoch_batches(epoch, rng=rng):
            return build_batches(utts, noise, source, cfg, rng, categories, snrs)

        history[regime] = train(regime, bundle, epoch_batches, cfg, epochs, metrics)
    return history
