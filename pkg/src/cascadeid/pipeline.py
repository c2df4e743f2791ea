"""Experiment steps behind the CLI subcommands.

Layout under the output directory::

    mix/test_<category>_<snr>.tsv   mixing records per evaluation condition
    mix/trials.tsv                  verification trial list
    checkpoints/<variant>.ckpt      trained parameters
    logs/<variant>.log              per-step training metrics
    logits/<variant>.ckpt           identification logits per condition
    scores/<variant>/<cond>.tsv     verification scores per condition
    results/*.csv                   tables; first line carries the config hash
"""
from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ExperimentConfig
from .corpus import (generate_corpus, generate_noise_bank, read_corpus_manifest, read_noise_manifest,
                     write_noise_manifest)
from .metrics import (ScoreSet, TrialPair, average_min_dcf, build_trials, compute_eer, fuse_logits,
                      fuse_scores, read_scores, topk_accuracy, write_scores)
from .mixer import MixRecord, read_manifest, split_noise_corpus, write_manifest
from .models import ModelBundle, predict, variant_spec
from .sidnet import cosine_similarity
from .training import MetricsLog, SegmentSource, draw_records, train_variant

log = logging.getLogger(__name__)

COLUMNS = ["noise_type", "snr", "variant", "top1", "top5", "eer", "dcf"]
FUSE_COLUMNS = ["alpha", "noise_type", "snr", "top1", "top5", "eer", "dcf"]


class PipelineError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _stamp(cfg: ExperimentConfig) -> str:
    return f"config_hash={cfg.digest()} seed={cfg.seed}"


def _cond_name(cat: str, snr: str) -> str:
    return "original" if cat == "original" else f"{cat}_{snr}"


def _require(path: Path, code: str, what: str) -> Path:
    if not path.exists():
        raise PipelineError(code, f"{what} not found: {path}")
    return path


def _corpus(cfg: ExperimentConfig):
    d = cfg.data_dir
    utts = read_corpus_manifest(_require(d / "corpus" / "manifest.tsv", "MISSING_MANIFEST", "corpus manifest"))
    noise = read_noise_manifest(_require(d / "noise" / "noise_manifest.tsv", "MISSING_MANIFEST", "noise manifest"))
    return utts, noise


def _speakers(utts) -> list[str]:
    return sorted({u.speaker for u in utts})


def build_bundle(cfg: ExperimentConfig, variant: str, n_speakers: int) -> ModelBundle:
    fe = cfg.frontend.spectrogram()
    sid_cfg = cfg.sid.build((fe.n_frames, fe.n_bins), n_speakers)
    return ModelBundle(variant, cfg.se.build(), sid_cfg, cfg.seed)


def _write_csv(path: Path, cfg: ExperimentConfig, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# {_stamp(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_results(path: Path) -> tuple[str, list[dict]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise PipelineError("BAD_RESULTS", f"{path} lacks a provenance header")
    return lines[0][2:], list(csv.DictReader(lines[1:]))


def _pct(x: float) -> str:
    return f"{100 * x:.2f}"


# ---------------------------------------------------------------------------
# prepare / mix
# ---------------------------------------------------------------------------

def cmd_prepare(cfg: ExperimentConfig) -> None:
    c = cfg.corpus
    d = cfg.data_dir
    generate_corpus(d / "corpus", c.n_speakers, c.utts_per_speaker, c.seconds, cfg.seed, c.test_fraction)
    bank = generate_noise_bank(d / "noise", n_per_category=c.noise_per_category, seconds=c.noise_seconds,
                               seed=cfg.seed)
    train, test = split_noise_corpus(bank, np.random.default_rng([cfg.seed, 11]), c.noise_train_ratio)
    write_noise_manifest(d / "noise" / "noise_manifest.tsv", train + test)
    log.info("prepared %d speakers, %d noise files", c.n_speakers, len(bank))


def segment_ids(records: list[MixRecord]) -> list[str]:
    seen: dict[str, int] = {}
    ids = []
    for r in records:
        k = seen.get(r.clean, 0)
        seen[r.clean] = k + 1
        ids.append(f"{Path(r.clean).with_suffix('').as_posix()}#{k}")
    return ids


def cmd_mix(cfg: ExperimentConfig) -> None:
    utts, noise = _corpus(cfg)
    test = [u for u in utts if u.split == "test"]
    out = cfg.output_dir / "mix"
    out.mkdir(parents=True, exist_ok=True)
    reps = cfg.eval.segments_per_utt
    for i, (cat, snr) in enumerate(cfg.eval.conditions()):
        rng = np.random.default_rng([cfg.seed, 21, i])
        if cat == "original":
            records = [MixRecord(f"corpus/{u.path}", "-", "original", "-", int(rng.integers(2**31 - 1)))
                       for _ in range(reps) for u in test]
        else:
            records = draw_records(test, noise, [cat], [int(snr)], rng, split="test", repeats=reps)
        write_manifest(out / f"test_{_cond_name(cat, snr)}.tsv", records, _stamp(cfg))
    # trial IDs follow record order, which is the same in every condition
    ids = segment_ids(records)
    spk = [Path(r.clean).parent.name for r in records]
    trials = build_trials(list(zip(ids, spk)), np.random.default_rng([cfg.seed, 22]), cfg.eval.n_trials)
    (out / "trials.tsv").write_text("".join(f"{t.enrol}\t{t.test}\t{int(t.is_target)}\n" for t in trials))


def _read_trials(path: Path) -> list[TrialPair]:
    trials = []
    for line in _require(path, "MISSING_MANIFEST", "trial list").read_text().splitlines():
        e, t, lab = line.split("\t")
        trials.append(TrialPair(e, t, lab == "1"))
    return trials


# ---------------------------------------------------------------------------
# train / evaluate / score
# ---------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, variant: str) -> Path:
    spec = variant_spec(variant)
    utts, noise = _corpus(cfg)
    speakers = _speakers(utts)
    bundle = build_bundle(cfg, variant, len(speakers))
    source = SegmentSource(cfg.data_dir, cfg.frontend.spectrogram(), speakers)
    tcfg = cfg.train.build(cfg.seed, spec.final_regime, spec.ms_placement)
    logs = cfg.output_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    log_path = logs / f"{variant}.log"
    log_path.write_text(f"# {_stamp(cfg)} variant={variant}\n")
    try:
        train_variant(bundle, [u for u in utts if u.split == "train"], noise, source, tcfg,
                      cfg.train.categories, cfg.train.snrs, MetricsLog(log_path))
    except (ValueError, FileNotFoundError) as exc:
        raise PipelineError("DATA_ERROR", str(exc)) from exc
    ckpt = cfg.output_dir / "checkpoints" / f"{variant}.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(ckpt, bundle.state_dict(), {"variant": variant, "config_hash": cfg.digest(), "seed": cfg.seed,
                                                "speakers": speakers})
    return ckpt


def load_bundle(cfg: ExperimentConfig, variant: str) -> tuple[ModelBundle, list[str]]:
    path = _require(cfg.output_dir / "checkpoints" / f"{variant}.ckpt", "MISSING_CHECKPOINT", "checkpoint")
    arrays, meta = checkpoint.load(path)
    if meta.get("variant") != variant:
        raise PipelineError("VARIANT_MISMATCH", f"{path} holds variant {meta.get('variant')!r}, not {variant!r}")
    if meta.get("config_hash") != cfg.digest():
        raise PipelineError("CONFIG_MISMATCH", f"{path} was trained under config {meta.get('config_hash')}")
    bundle = build_bundle(cfg, variant, len(meta["speakers"]))
    try:
        bundle.load_state_dict(arrays)
    except ValueError as exc:
        raise PipelineError("VARIANT_MISMATCH", str(exc)) from exc
    return bundle, meta["speakers"]


def _condition_batches(cfg: ExperimentConfig, speakers):
    source = SegmentSource(cfg.data_dir, cfg.frontend.spectrogram(), speakers)
    for cat, snr in cfg.eval.conditions():
        name = _cond_name(cat, snr)
        path = _require(cfg.output_dir / "mix" / f"test_{name}.tsv", "MISSING_MANIFEST", "mixing manifest")
        records, header = read_manifest(path)
        if header != _stamp(cfg):
            raise PipelineError("CONFIG_MISMATCH", f"{path} was mixed under '{header}'")
        try:
            batch = source.batch(records)
        except FileNotFoundError as exc:
            raise PipelineError("DATA_ERROR", str(exc)) from exc
        yield cat, snr, name, records, batch


def cmd_evaluate(cfg: ExperimentConfig, variant: str) -> Path:
    bundle, speakers = load_bundle(cfg, variant)
    k5 = min(5, len(speakers))
    rows, arrays = [], {}
    for cat, snr, name, _, batch in _condition_batches(cfg, speakers):
        logits = predict(bundle.logits, batch.noisy)
        arrays[f"{name}/logits"] = logits
        arrays[f"{name}/labels"] = batch.labels.astype(np.float32)
        rows.append([cat, snr, variant, _pct(topk_accuracy(logits, batch.labels, 1)),
                     _pct(topk_accuracy(logits, batch.labels, k5)), "", ""])
    out = cfg.output_dir / "logits" / f"{variant}.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out, arrays, {"variant": variant, "config_hash": cfg.digest(), "seed": cfg.seed})
    path = cfg.output_dir / "results" / f"identification_{variant}.csv"
    _write_csv(path, cfg, COLUMNS, rows)
    return path


def score_trials(embeddings: np.ndarray, ids: list[str], trials: list[TrialPair]) -> ScoreSet:
    index = {s: i for i, s in enumerate(ids)}
    try:
        scores = [cosine_similarity(embeddings[index[t.enrol]], embeddings[index[t.test]]) for t in trials]
    except KeyError as exc:
        raise PipelineError("DATA_ERROR", f"trial references unknown segment {exc}") from exc
    return ScoreSet(np.array(scores), np.array([t.is_target for t in trials]), [(t.enrol, t.test) for t in trials])


def _verification_row(s: ScoreSet) -> list[str]:
    return [_pct(compute_eer(s)), f"{average_min_dcf(s):.4f}"]


def cmd_score(cfg: ExperimentConfig, variant: str) -> Path:
    bundle, speakers = load_bundle(cfg, variant)
    trials = _read_trials(cfg.output_dir / "mix" / "trials.tsv")
    rows = []
    out = cfg.output_dir / "scores" / variant
    out.mkdir(parents=True, exist_ok=True)
    for cat, snr, name, records, batch in _condition_batches(cfg, speakers):
        emb = predict(bundle.embedding, batch.noisy)
        s = score_trials(emb, segment_ids(records), trials)
        write_scores(out / f"{name}.tsv", s)
        rows.append([cat, snr, variant, "", ""] + _verification_row(s))
    path = cfg.output_dir / "results" / f"verification_{variant}.csv"
    _write_csv(path, cfg, COLUMNS, rows)
    return path


# ---------------------------------------------------------------------------
# fuse / report
# ---------------------------------------------------------------------------

def _load_logits(cfg: ExperimentConfig, variant: str) -> dict[str, np.ndarray]:
    path = _require(cfg.output_dir / "logits" / f"{variant}.ckpt", "MISSING_CHECKPOINT", "logits (run evaluate)")
    arrays, meta = checkpoint.load(path)
    if meta.get("config_hash") != cfg.digest():
        raise PipelineError("CONFIG_MISMATCH", f"{path} was produced under config {meta.get('config_hash')}")
    return arrays


def cmd_fuse(cfg: ExperimentConfig) -> Path:
    va, vb = cfg.eval.fuse
    la, lb = _load_logits(cfg, va), _load_logits(cfg, vb)
    rows = []
    conds = cfg.eval.conditions()
    scores = {}
    for cat, snr in conds:
        name = _cond_name(cat, snr)
        pa = _require(cfg.output_dir / "scores" / va / f"{name}.tsv", "MISSING_CHECKPOINT", "scores (run score)")
        pb = _require(cfg.output_dir / "scores" / vb / f"{name}.tsv", "MISSING_CHECKPOINT", "scores (run score)")
        scores[name] = (read_scores(pa), read_scores(pb))
    for alpha in cfg.eval.alphas:
        for cat, snr in conds:
            name = _cond_name(cat, snr)
            labels = la[f"{name}/labels"].astype(np.int64)
            fused = fuse_logits(alpha, la[f"{name}/logits"], lb[f"{name}/logits"])
            k5 = min(5, fused.shape[1])
            try:
                s = fuse_scores(alpha, *scores[name])
            except ValueError as exc:
                raise PipelineError("DATA_ERROR", f"{name}: {exc}") from exc
            rows.append([f"{alpha:.1f}", cat, snr, _pct(topk_accuracy(fused, labels, 1)),
                         _pct(topk_accuracy(fused, labels, k5))] + _verification_row(s))
    path = cfg.output_dir / "results" / "fusion.csv"
    _write_csv(path, cfg, FUSE_COLUMNS, rows)
    return path


def cmd_report(cfg: ExperimentConfig) -> Path:
    results = cfg.output_dir / "results"
    files = sorted(p for p in results.glob("*.csv") if p.name not in ("summary.csv", "fusion.csv"))
    if not files:
        raise PipelineError("MISSING_MANIFEST", f"no result tables under {results}")
    merged: dict[tuple[str, str, str], dict] = {}
    for p in files:
        header, rows = read_results(p)
        if header != _stamp(cfg):
            raise PipelineError("CONFIG_MISMATCH", f"{p.name} was produced under '{header}', expected '{_stamp(cfg)}'")
        for r in rows:
            cell = merged.setdefault((r["noise_type"], r["snr"], r["variant"]), {})
            for k in ("top1", "top5", "eer", "dcf"):
                if r[k]:
                    cell[k] = r[k]
    order = {v: i for i, v in enumerate(cfg.variants)}
    cond_order = {c: i for i, c in enumerate(cfg.eval.conditions())}
    keys = sorted(merged, key=lambda k: (cond_order.get((k[0], k[1]), 1 << 20), order.get(k[2], 1 << 20), k))
    rows = [[*k] + [merged[k].get(c, "") for c in ("top1", "top5", "eer", "dcf")] for k in keys]
    fusion = results / "fusion.csv"
    if fusion.exists():
        header, _ = read_results(fusion)
        if header != _stamp(cfg):
            raise PipelineError("CONFIG_MISMATCH", f"fusion.csv was produced under '{header}'")
    path = results / "summary.csv"
    _write_csv(path, cfg, COLUMNS, rows)
    return path
