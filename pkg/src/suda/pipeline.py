"""End-to-end steps behind the command line: corpus -> features -> model -> EER.

Every step is a plain function over in-memory objects plus thin helpers that
read and write the on-disk artifacts, so tests can drive either level.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import frontend, protocol, scoring, synth
from .config import RunConfig
from .errors import FormatError, ManifestError
from .estimator import SudaVerifier
from .network import load_checkpoint, save_checkpoint
from .protocol import NONTARGET_CONDITIONS, Utterance
from .scoring import EerResult
from .training import TrainLog

logger = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"


def variant_name(masks_enabled: bool) -> str:
    return "suda" if masks_enabled else "modsuv"


@dataclass(frozen=True)
class Layout:
    """Artifact locations derived from the config's two directories."""

    corpus: Path
    work: Path

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Layout":
        return cls(Path(cfg.corpus_dir), Path(cfg.work_dir))

    @property
    def manifest(self) -> Path:
        return self.corpus / "manifest.tsv"

    @property
    def features(self) -> Path:
        return self.work / "feat"

    def checkpoint(self, variant: str) -> Path:
        return self.work / f"{variant}.ckpt"

    def trainlog(self, variant: str) -> Path:
        return self.work / f"{variant}.trainlog.tsv"

    def embeddings(self, variant: str) -> Path:
        return self.work / f"{variant}.emb"

    def trials(self, split: str, condition: str) -> Path:
        return self.work / f"trials_{split}_{condition}.tsv"

    def scores(self, variant: str, condition: str) -> Path:
        return self.work / f"scores_{variant}_{condition}.tsv"

    def report(self, variant: str) -> Path:
        return self.work / f"report_{variant}.txt"

    @property
    def ablation(self) -> Path:
        return self.work / "ablation.txt"


def require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# -- corpus and features ------------------------------------------------------------
def synthesize_corpus(cfg: RunConfig) -> list[Utterance]:
    return synth.generate_corpus(cfg.corpus_dir, cfg.n_speakers, cfg.n_phrases, cfg.seed,
                                 ratios=cfg.split_ratios, phrase_seconds=cfg.phrase_seconds)


def extract_corpus(manifest_path, feat_dir) -> list[Utterance]:
    """Write one FEAT1 file per manifest row, wav paths relative to the manifest."""
    manifest_path = require_file(manifest_path, "manifest")
    rows = protocol.read_manifest(manifest_path)
    root = manifest_path.parent
    feat_dir = Path(feat_dir)
    feat_dir.mkdir(parents=True, exist_ok=True)
    for row in rows:
        wav = require_file(root / row.path, f"waveform for {row.utt_id}")
        samples, rate = frontend.read_wav(wav)
        frontend.write_feat(feat_dir / f"{row.utt_id}.feat", frontend.extract_features(samples, rate))
    return rows


def load_features(rows: Sequence[Utterance], feat_dir) -> dict[str, np.ndarray]:
    feat_dir = Path(feat_dir)
    return {r.utt_id: frontend.read_feat(require_file(feat_dir / f"{r.utt_id}.feat", f"features for {r.utt_id}"))
            for r in rows}


def select_split(rows: Sequence[Utterance], split: str) -> list[Utterance]:
    chosen = [r for r in rows if r.split == split]
    if not chosen:
        raise ManifestError(f"manifest has no utterances in split {split!r}")
    return chosen


# -- embeddings ---------------------------------------------------------------------
Embeddings = dict  # utt_id -> (speaker embedding, utterance embedding)


def embed_utterances(model: SudaVerifier, rows: Sequence[Utterance], feats: dict) -> Embeddings:
    X = [feats[r.utt_id] for r in rows]
    emb = model.transform(X)
    d = emb.shape[1] // 2
    return {r.utt_id: (emb[i, :d], emb[i, d:]) for i, r in enumerate(rows)}


def embeddings_to_bytes(embs: Embeddings) -> bytes:
    """``EMB1`` magic, u32 count, u32 dim, then per utterance a length-prefixed
    id followed by the speaker and utterance vectors as little-endian f8."""
    dims = {len(s) for s, _ in embs.values()} | {len(u) for _, u in embs.values()}
    if len(dims) > 1:
        raise FormatError(f"embeddings have mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    out = [EMB_MAGIC, struct.pack("<II", len(embs), dim)]
    for utt_id in sorted(embs):
        s, u = embs[utt_id]
        name = utt_id.encode("utf-8")
        out.append(struct.pack("<I", len(name)) + name)
        out.append(np.asarray(s, dtype="<f8").tobytes() + np.asarray(u, dtype="<f8").tobytes())
    return b"".join(out)


def embeddings_from_bytes(blob: bytes, source: str = "<embeddings>") -> Embeddings:
    if blob[:4] != EMB_MAGIC or len(blob) < 12:
        raise FormatError(f"{source}: missing EMB1 header")
    count, dim = struct.unpack("<II", blob[4:12])
    pos, embs = 12, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack("<I", blob[pos:pos + 4])
            utt_id = blob[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            vec = np.frombuffer(blob, dtype="<f8", count=2 * dim, offset=pos).astype(np.float64)
            pos += 16 * dim
            embs[utt_id] = (vec[:dim], vec[dim:])
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{source}: truncated embedding file ({exc})") from None
    if pos != len(blob):
        raise FormatError(f"{source}: {len(blob) - pos} trailing bytes")
    return embs


def write_embeddings(path, embs: Embeddings) -> None:
    Path(path).write_bytes(embeddings_to_bytes(embs))


def read_embeddings(path) -> Embeddings:
    path = require_file(path, "embedding file")
    return embeddings_from_bytes(path.read_bytes(), str(path))


# -- training -----------------------------------------------------------------------
def make_estimator(cfg: RunConfig, masks_enabled: bool | None = None, seed: int | None = None,
                   epochs: int | None = None) -> SudaVerifier:
    return SudaVerifier(
        shared_hidden=cfg.shared_hidden, branch_hidden=cfg.branch_hidden, conv_channels=cfg.conv_channels,
        masks_enabled=cfg.masks_enabled if masks_enabled is None else masks_enabled,
        optimizer=cfg.optimizer, learning_rate=cfg.learning_rate, momentum=cfg.momentum,
        batch_size=cfg.batch_size, epochs=cfg.epochs if epochs is None else epochs,
        patience=cfg.lr_patience, margin=cfg.margin, seed=cfg.seed if seed is None else seed)


def fit_model(cfg: RunConfig, rows: Sequence[Utterance], feats: dict, masks_enabled: bool | None = None,
              seed: int | None = None, epochs: int | None = None, dev_split: str | None = "development",
              alpha: float | None = None) -> SudaVerifier:
    """Train on the background split; snapshot development EER after each epoch.

    The per-epoch snapshot is the mean EER over whichever of TW, IC and IW
    the development split can form. Pass
    ``dev_split=None`` to skip it.
    """
    train_rows = select_split(rows, "background")
    est = make_estimator(cfg, masks_enabled, seed, epochs)
    dev_rows = [r for r in rows if r.split == dev_split] if dev_split else []
    alpha = cfg.alpha if alpha is None else alpha

    def dev_eer(epoch, model):
        embs = embed_utterances(model, dev_rows, feats)
        eers = []
        for c in NONTARGET_CONDITIONS:
            trials = make_trials(dev_rows, c)
            if any(t.category == c for t in trials):  # e.g. IC needs two dev speakers
                eers.append(scoring.eval_condition(score(trials, dev_rows, embs, alpha), c).eer)
        return float(np.mean(eers)) if eers else None

    X = [feats[r.utt_id] for r in train_rows]
    y = np.array([[r.speaker, r.phrase] for r in train_rows])
    est.fit(X, y, epoch_callback=dev_eer if dev_rows else None)
    return est


def provenance(cfg: RunConfig, est: SudaVerifier) -> dict:
    return {"optimizer": est.optimizer, "learning_rate": est.learning_rate, "momentum": est.momentum,
            "lr_patience": est.patience, "batch_size": est.batch_size, "epochs": est.epochs,
            "margin": est.margin, "seed": est.seed,
            "speakers": ",".join(map(str, est.speaker_classes_)),
            "phrases": ",".join(map(str, est.phrase_classes_))}


def save_model(path, cfg: RunConfig, est: SudaVerifier) -> None:
    save_checkpoint(path, est.params_, est.config_, provenance(cfg, est))


def load_model(path) -> SudaVerifier:
    path = require_file(path, "checkpoint")
    params, config, extra = load_checkpoint(path)
    try:
        speakers = str(extra["speakers"]).split(",")
        phrases = str(extra["phrases"]).split(",")
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint lacks run.{exc.args[0]}") from None
    if len(speakers) != config.n_speakers or len(phrases) != config.n_phrases:
        raise FormatError(f"{path}: label lists do not match the classifier sizes")
    return SudaVerifier.from_params(params, config, speakers, phrases)


def write_trainlog(path, cfg: RunConfig, est: SudaVerifier) -> None:
    log: TrainLog = est.train_log_
    text = log.to_tsv(provenance(cfg, est) | {"masks_enabled": est.masks_enabled})
    epochs = "".join(f"# epoch={e['epoch']} mean_loss={e['mean_loss']!r} lr={e['lr']!r} dev_eer={e['dev_eer']!r}\n"
                     for e in log.epochs)
    Path(path).write_text(epochs + text, encoding="utf-8")


# -- trials, scoring, evaluation ----------------------------------------------------
def make_trials(rows: Sequence[Utterance], condition: str) -> list[protocol.Trial]:
    enroll, tests = protocol.split_enrollment(rows)
    return protocol.generate_trials(protocol.enrollment_groups(enroll), tests, condition)


def enroll_models(rows: Sequence[Utterance], embs: Embeddings) -> dict:
    enroll, _ = protocol.split_enrollment(rows)
    models = {}
    for key, group in protocol.enrollment_groups(enroll).items():
        missing = [u.utt_id for u in group if u.utt_id not in embs]
        if missing:
            raise ManifestError(f"no embedding for enrollment utterance {missing[0]}")
        models[key] = tuple(protocol.enroll_model([embs[u.utt_id][b] for u in group]) for b in (0, 1))
    return models


def score(trials: Sequence[protocol.Trial], rows: Sequence[Utterance], embs: Embeddings,
          alpha: float) -> list[scoring.ScoreRecord]:
    needed = {t.model for t in trials}
    model_rows = [r for r in rows if (r.speaker, r.phrase) in needed]
    models = enroll_models(model_rows, embs)
    for t in trials:
        if t.test.utt_id not in embs:
            raise ManifestError(f"no embedding for test utterance {t.test.utt_id}")
    return scoring.score_trials(trials, models, embs, alpha)


def evaluate_embeddings(rows: Sequence[Utterance], embs: Embeddings, alpha: float) -> dict[str, EerResult]:
    return {c: scoring.eval_condition(score(make_trials(rows, c), rows, embs, alpha), c)
            for c in NONTARGET_CONDITIONS}


def evaluate(model: SudaVerifier, rows: Sequence[Utterance], feats: dict, alpha: float) -> dict[str, EerResult]:
    """TW/IC/IW EER of ``model`` on the given (single-split) rows."""
    return evaluate_embeddings(rows, embed_utterances(model, rows, feats), alpha)


def report_from_scores(records: Sequence[scoring.ScoreRecord]) -> dict[str, EerResult]:
    present = {r.category for r in records}
    conditions = [c for c in NONTARGET_CONDITIONS if c in present]
    if not conditions:
        raise FormatError("score file holds no TW, IC or IW trials")
    return {c: scoring.eval_condition(records, c) for c in conditions}


# -- ablation -----------------------------------------------------------------------
@dataclass
class AblationRow:
    seed: int
    suda: dict[str, EerResult]
    modsuv: dict[str, EerResult]


def ablate(cfg: RunConfig, rows: Sequence[Utterance], feats: dict, seeds=None,
           trained: dict | None = None) -> list[AblationRow]:
    """Train SUDA and mod-SUV from the same initialization per seed and
    evaluate both on ``cfg.eval_split``.

    ``trained`` may hold already-fitted estimators keyed by
    ``(variant, seed)``; they are reused, and newly trained ones are added.
    """
    eval_rows = select_split(rows, cfg.eval_split)
    trained = {} if trained is None else trained
    table = []
    for seed in (cfg.ablate_seeds if seeds is None else seeds):
        results = {}
        for masks in (True, False):
            key = (variant_name(masks), seed)
            if key not in trained:
                logger.info("ablation: training %s seed %d", *key)
                trained[key] = fit_model(cfg, rows, feats, masks_enabled=masks, seed=seed, dev_split=None)
            results[key[0]] = evaluate(trained[key], eval_rows, feats, cfg.alpha)
        table.append(AblationRow(seed, results["suda"], results["modsuv"]))
    return table


def ablation_means(table: Sequence[AblationRow]) -> dict[str, dict[str, float]]:
    return {v: {c: float(np.mean([getattr(row, v)[c].eer for row in table])) for c in NONTARGET_CONDITIONS}
            for v in ("suda", "modsuv")}


def format_ablation(table: Sequence[AblationRow], alpha: float) -> str:
    lines = [f"alpha={alpha!r}", f"seeds={','.join(str(r.seed) for r in table)}", "",
             "condition\tseed\tsuda_eer\tmodsuv_eer"]
    for c in NONTARGET_CONDITIONS:
        for row in table:
            lines.append(f"{c}\t{row.seed}\t{row.suda[c].eer:.6f}\t{row.modsuv[c].eer:.6f}")
    means = ablation_means(table)
    for c in NONTARGET_CONDITIONS:
        lines.append(f"{c}\tmean\t{means['suda'][c]:.6f}\t{means['modsuv'][c]:.6f}")
    return "\n".join(lines) + "\n"
