import numpy as np
import pytest
from scipy.stats import chisquare

from cascadeid import checkpoint
from cascadeid import tensor as tn
from cascadeid.corpus import Utterance
from cascadeid.mixer import SNR_LEVELS, NoiseEntry
from cascadeid.models import VARIANTS, ModelBundle
from cascadeid.senet import SENetConfig
from cascadeid.sidnet import SIDNetConfig
from cascadeid.tensor import Tensor
from cascadeid.training import (Batch, MetricsLog, OptimizerState, TrainConfig, adam_step, draw_records, lr_at,
                                phases, regime_loss, train)


def test_adam_minimises_a_parabola():
    # a plain-float reference run of the same update ends near 7e-6
    w = Tensor([1.0], requires_grad=True)
    state = OptimizerState()
    for _ in range(200):
        w.grad = None
        tn.backward(tn.total(tn.mul(w, w)))
        adam_step({"w": w}, state, 0.1)
    assert abs(w.item()) < 1e-2


def test_first_adam_step_has_size_lr():
    w = Tensor([1.0, -2.0], requires_grad=True)
    w.grad = np.array([0.3, -40.0], dtype=np.float32)
    adam_step({"w": w}, OptimizerState(), 0.01)
    np.testing.assert_allclose(w.data, [0.99, -1.99], rtol=1e-5)


def test_zero_gradient_leaves_parameters_unchanged():
    w = Tensor([1.0, 2.0], requires_grad=True)
    w.grad = np.zeros(2, dtype=np.float32)
    adam_step({"w": w}, OptimizerState(), 0.1)
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_non_finite_gradient_is_reported_by_name():
    w = Tensor([1.0], requires_grad=True)
    w.grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(FloatingPointError, match="sid.fc.W"):
        adam_step({"sid.fc.W": w}, OptimizerState(), 0.1)


def test_learning_rate_schedule():
    assert lr_at(0) == 1e-3
    assert lr_at(2) == pytest.approx(8.1e-4)
    assert TrainConfig(lr0=0.01, decay=0.5).lr(3) == pytest.approx(0.00125)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(regime="finetune")
    with pytest.raises(ValueError):
        TrainConfig(ms_placement="middle")


def _utts(n_spk=4, n=50):
    return [Utterance(f"spk{s:02d}/utt{u:03d}.wav", f"spk{s:02d}", "train") for s in range(n_spk) for u in range(n)]


def _bank():
    return [NoiseEntry(f"{c}{i}", f"{c}/{i}.wav", c, "train" if i < 2 else "test")
            for c in ("noise", "music", "babble") for i in range(4)]


def test_snr_draws_are_uniform_over_grid():
    recs = draw_records(_utts(10, 200), _bank(), ["noise", "music", "babble"], list(SNR_LEVELS),
                        np.random.default_rng(0))
    counts = [sum(r.snr_db == str(s) for r in recs) for s in SNR_LEVELS]
    assert chisquare(counts).pvalue > 1e-3
    cats = [sum(r.category == c for r in recs) for c in ("noise", "music", "babble")]
    assert chisquare(cats).pvalue > 1e-3


def test_draws_respect_noise_split_and_grid():
    recs = draw_records(_utts(), _bank(), ["music"], [0, 10], np.random.default_rng(1), split="test")
    assert all(r.noise.split("/")[-1] in ("2.wav", "3.wav") for r in recs)
    with pytest.raises(ValueError):
        draw_records(_utts(), _bank(), ["music"], [3], np.random.default_rng(1))


def micro_bundle(variant, seed=0):
    se = SENetConfig.with_width(2)
    sid = SIDNetConfig.scaled((2,) * 8, (2, 1, 1, 1, 1, 1, 1, 1), input_shape=(16, 16), embedding_dim=4,
                              num_speakers=3)
    return ModelBundle(variant, se, sid, seed)


def fake_batches(seed=0, n=2):
    rng = np.random.default_rng(seed)
    return [Batch(np.abs(rng.normal(size=(4, 16, 16, 1))).astype(np.float32), rng.integers(0, 3, 4),
                  np.abs(rng.normal(size=(4, 16, 16, 1))).astype(np.float32)) for _ in range(n)]


@pytest.mark.parametrize("regime,changes,frozen", [
    ("pretrain-sid", "sid", "se"), ("pretrain-se", "se", "sid"), ("frozen-sid", "se", "sid"),
])
def test_regimes_update_only_their_parameters(regime, changes, frozen):
    b = micro_bundle("SE+SID")
    before = {p: b.digest(p) for p in ("se", "sid")}
    batches = fake_batches()
    train(regime, b, lambda e: iter(batches), TrainConfig(), 1)
    assert b.digest(changes) != before[changes]
    assert b.digest(frozen) == before[frozen]


def test_joint_updates_everything():
    b = micro_bundle("SE-MS+SID")
    before = {p: b.digest(p) for p in ("se", "sid")}
    batches = fake_batches()
    train("joint", b, lambda e: iter(batches), TrainConfig(), 1)
    assert all(b.digest(p) != before[p] for p in before)


def test_frozen_sid_parameters_receive_no_gradient():
    b = micro_bundle("frozen-sid")
    for k, p in b.named_parameters().items():
        p.requires_grad = k.startswith("se.")
    tn.backward(regime_loss(b, "frozen-sid", fake_batches()[0]))
    assert all(p.grad is None for p in b.named_parameters("sid").values())
    assert all(p.grad is not None for p in b.named_parameters("se").values())


def test_phase_schedules():
    cfg = TrainConfig(epochs=3, pretrain_se_epochs=1, pretrain_sid_epochs=2)
    assert phases(micro_bundle("SID"), cfg) == [("pretrain-sid", 5)]
    assert phases(micro_bundle("SE+SID-MS"), cfg) == [("pretrain-se", 1), ("pretrain-sid", 2), ("joint", 3)]
    assert phases(micro_bundle("frozen-sid"), cfg)[-1] == ("frozen-sid", 3)


def test_se_regimes_need_an_se_network():
    with pytest.raises(ValueError):
        train("joint", micro_bundle("SID"), lambda e: iter(fake_batches()), TrainConfig(), 1)


def test_metrics_log_lines(tmp_path):
    log = MetricsLog(tmp_path / "m.log")
    batches = fake_batches()
    train("pretrain-sid", micro_bundle("SID"), lambda e: iter(batches), TrainConfig(), 2, log)
    lines = (tmp_path / "m.log").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("pretrain-sid step=1 epoch=0 lr=0.001 loss=")
    fields = dict(kv.split("=") for kv in lines[-1].split()[1:])
    assert fields["step"] == "4" and fields["epoch"] == "1"
    assert float(fields["lr"]) == pytest.approx(9e-4)
    assert np.isfinite(float(fields["loss"]))


def test_training_is_seed_deterministic():
    digests = []
    for _ in range(2):
        b = micro_bundle("SE+SID", seed=5)
        batches = fake_batches(1)
        train("joint", b, lambda e: iter(batches), TrainConfig(), 1)
        digests.append(b.digest())
    assert digests[0] == digests[1]


def test_state_round_trips_through_checkpoint(tmp_path):
    a = micro_bundle("SE-MS+SID", seed=1)
    checkpoint.save(tmp_path / "a.ckpt", a.state_dict(), {"variant": "SE-MS+SID"})
    b = micro_bundle("SE-MS+SID", seed=2)
    assert a.digest() != b.digest()
    b.load_state_dict(checkpoint.load(tmp_path / "a.ckpt")[0])
    assert a.digest() == b.digest()
    with pytest.raises(ValueError, match="does not fit"):
        micro_bundle("SID").load_state_dict(a.state_dict())


def test_every_variant_builds():
    for v in VARIANTS:
        b = micro_bundle(v)
        with tn.no_grad():
            assert b.logits(Tensor(np.ones((2, 16, 16, 1)))).shape == (2, 3)


def test_joint_loss_decreases_over_first_steps(toy_data):
    from cascadeid.config import load_config
    from cascadeid.training import SegmentSource, regime_loss
    from pathlib import Path

    root, utts, noise = toy_data
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "toy.yaml")
    fe = cfg.frontend.spectrogram()
    speakers = sorted({u.speaker for u in utts})
    bundle = ModelBundle("SE+SID", cfg.se.build(), cfg.sid.build((fe.n_frames, fe.n_bins), len(speakers)), 0)
    source = SegmentSource(root, fe, speakers)
    one_each = list({u.speaker: u for u in utts if u.split == "train"}.values())
    recs = draw_records(one_each, noise, ["noise"], [10], np.random.default_rng(0))
    batch = source.batch(recs)
    params = bundle.named_parameters()
    state = OptimizerState()
    losses = []
    for _ in range(6):
        for t in params.values():
            t.grad = None
        loss = regime_loss(bundle, "joint", batch)
        losses.append(loss.item())
        tn.backward(loss)
        adam_step(params, state, 1e-3)
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
