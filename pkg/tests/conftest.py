import numpy as np
import pytest

from cascadeid import tensor as tn


@pytest.fixture
def f64():
    with tn.default_dtype(np.float64):
        yield


def weighted_sum(out, weights):
    """Scalar probe ``sum(out * weights)`` for gradient checks."""
    return tn.total(tn.mul(out, tn.Tensor(weights)))


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """8 speakers x 20 utterances x 4 s plus a split noise bank, generated once."""
    from cascadeid.corpus import generate_corpus, generate_noise_bank
    from cascadeid.mixer import split_noise_corpus

    root = tmp_path_factory.mktemp("toy")
    utts = generate_corpus(root / "corpus", 8, 20, 4.0, seed=7)
    bank = generate_noise_bank(root / "noise", seed=7)
    train, test = split_noise_corpus(bank, np.random.default_rng(7))
    return root, utts, train + test


TINY_CONFIG = """\
seed: 3
variants: [SID, SE-MS+SID, SE+SID-MS]
corpus: {n_speakers: 4, utts_per_speaker: 6, seconds: 1.0, noise_per_category: 2, noise_seconds: 1.5}
frontend: {window_ms: 16, hop_ms: 16, fft_size: 256, segment_seconds: 0.512}
se: {width: 4}
sid: {widths: [4, 4, 4, 4, 4, 4, 4, 4], strides: [2, 2, 1, 1, 1, 1, 1, 1], embedding_dim: 16}
train: {pretrain_se_epochs: 1, pretrain_sid_epochs: 1, epochs: 1, snrs: [0, 10]}
eval: {snrs: [0, 10], segments_per_utt: 2, n_trials: 40, alphas: [0.0, 0.5, 1.0]}
"""

PIPELINE = ("prepare", "mix", "train", "evaluate", "score", "fuse", "report")


def write_tiny_config(directory, extra: str = ""):
    path = directory / "tiny.yaml"
    path.write_text(TINY_CONFIG + extra)
    return path


def run_pipeline(config) -> None:
    from cascadeid.cli import main

    for step in PIPELINE:
        assert main([step, "--config", str(config)]) == 0, step


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """One complete CLI run of the tiny config; returns its output directory."""
    d = tmp_path_factory.mktemp("tiny_a")
    run_pipeline(write_tiny_config(d))
    return d


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
