"""Identification and verification metrics, score fusion and trial lists."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray  # True for target trials
    trials: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")
        if self.scores.size == 0:
            raise ValueError("empty score set")
        if self.trials and len(self.trials) != self.scores.size:
            raise ValueError("trial list and scores differ in length")

    def _require_both(self):
        if self.labels.all() or not self.labels.any():
            raise ValueError("need at least one target and one non-target trial")


@dataclass(frozen=True)
class TrialPair:
    enrol: str
    test: str
    is_target: bool


def topk_accuracy(logits, labels, k: int = 1) -> float:
    """Fraction of rows whose label ranks within the top ``k`` logits.

    Equal logits are ordered by index, lower first.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("need a non-empty (n, K) logit array")
    n, K = logits.shape
    if not 1 <= k <= K:
        raise ValueError(f"k={k} outside [1, {K}]")
    true = logits[np.arange(n), labels][:, None]
    idx = np.arange(K)[None, :]
    rank = (logits > true).sum(axis=1) + ((logits == true) & (idx < labels[:, None])).sum(axis=1)
    return float(np.mean(rank < k))


def _operating_points(s: ScoreSet):
    """Integer miss / false-alarm counts at each threshold, ascending.

    A trial is accepted when its score is >= the threshold; the last
    threshold (+inf) rejects everything.
    """
    s._require_both()
    order = np.argsort(s.scores, kind="mergesort")
    sc = s.scores[order]
    lab = s.labels[order]
    n_tar = int(lab.sum())
    n_non = lab.size - n_tar
    # first index of each distinct score
    starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
    tar_below = np.r_[0, np.cumsum(lab)]
    non_below = np.r_[0, np.cumsum(~lab)]
    idx = np.r_[starts, lab.size]
    misses = tar_below[idx]
    fas = n_non - non_below[idx]
    return misses, fas, n_tar, n_non


def _crossing(frr: Sequence[float], far: Sequence[float]) -> float:
    for i in range(len(frr)):
        if frr[i] >= far[i]:
            if i == 0:
                return float(frr[0])
            d0 = far[i - 1] - frr[i - 1]
            d1 = far[i] - frr[i]
            lam = d0 / (d0 - d1)
            return float(frr[i - 1] + lam * (frr[i] - frr[i - 1]))
    return float(frr[-1])


def compute_eer(s: ScoreSet) -> float:
    """Equal error rate, interpolating linearly between adjacent thresholds."""
    misses, fas, n_tar, n_non = _operating_points(s)
    frr = [int(m) / n_tar for m in misses]
    far = [int(f) / n_non for f in fas]
    return _crossing(frr, far)


def min_dcf(s: ScoreSet, p_target: float, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    """Minimum detection cost, normalised by the best trivial system."""
    if not 0 < p_target < 1:
        raise ValueError(f"p_target must lie in (0, 1), got {p_target}")
    misses, fas, n_tar, n_non = _operating_points(s)
    best = min(c_miss * p_target * (int(m) / n_tar) + c_fa * (1 - p_target) * (int(f) / n_non)
               for m, f in zip(misses, fas))
    return best / min(c_miss * p_target, c_fa * (1 - p_target))


def average_min_dcf(s: ScoreSet, priors=(0.01, 0.001)) -> float:
    return sum(min_dcf(s, p) for p in priors) / len(priors)


def fuse_scores(alpha: float, a: ScoreSet, b: ScoreSet) -> ScoreSet:
    """``alpha * a + (1 - alpha) * b`` trial by trial."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if a.scores.shape != b.scores.shape or not np.array_equal(a.labels, b.labels) or a.trials != b.trials:
        raise ValueError("score sets are not aligned trial by trial")
    return ScoreSet(alpha * a.scores + (1 - alpha) * b.scores, a.labels.copy(), list(a.trials))


def fuse_logits(alpha: float, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("logit arrays are not aligned")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * a + (1 - alpha) * b


def enumerate_pairs(utts: Sequence[tuple[str, str]]) -> tuple[list[TrialPair], list[TrialPair]]:
    """All ordered pairs of distinct utterances, split into target / non-target."""
    tar, non = [], []
    for i, (u, su) in enumerate(utts):
        for j, (v, sv) in enumerate(utts):
            if i != j:
                (tar if su == sv else non).append(TrialPair(u, v, su == sv))
    return tar, non


def build_trials(utts: Sequence[tuple[str, str]], rng: np.random.Generator, n_pairs: int) -> list[TrialPair]:
    """Balanced target/non-target trial list from ``(utt_id, speaker)`` pairs."""
    if len({s for _, s in utts}) < 2:
        raise ValueError("trial lists need at least two speakers")
    tar, non = enumerate_pairs(utts)
    if not tar:
        raise ValueError("no speaker has two utterances; no target trials possible")
    n_tar = n_pairs // 2
    n_non = n_pairs - n_tar
    pick_t = rng.choice(len(tar), size=n_tar, replace=n_tar > len(tar))
    pick_n = rng.choice(len(non), size=n_non, replace=n_non > len(non))
    trials = [tar[i] for i in pick_t] + [non[i] for i in pick_n]
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def write_scores(path, s: ScoreSet) -> None:
    lines = [f"{e}\t{t}\t{float(score)!r}\t{int(lab)}" for (e, t), score, lab in zip(s.trials, s.scores, s.labels)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scores(path) -> ScoreSet:
    trials, scores, labels = [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            e, t, sc, lab = line.rstrip("\n").split("\t")
            trials.append((e, t))
            scores.append(float(sc))
            labels.append(lab == "1")
    return ScoreSet(np.array(scores), np.array(labels), trials)
