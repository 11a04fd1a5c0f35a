"""Cosine trial scoring, speaker/utterance score fusion and EER."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBatchError, FormatError
from .protocol import CATEGORIES, NONTARGET_CONDITIONS

DEFAULT_ALPHA = 0.5


def cosine_score(model_emb, test_emb) -> float:
    a = np.asarray(model_emb, dtype=np.float64)
    b = np.asarray(test_emb, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine score of a zero vector")
    return float(np.dot(a, b) / (na * nb))


def fuse(s_spk, s_utt, alpha: float = DEFAULT_ALPHA):
    """Convex combination ``alpha * s_spk + (1 - alpha) * s_utt``.

    ``alpha=1`` is pure speaker verification, ``alpha=0`` pure utterance
    verification.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * s_spk + (1.0 - alpha) * s_utt


@dataclass(frozen=True)
class ScoreRecord:
    model: str
    test_utt: str
    category: str
    s_spk: float
    s_utt: float
    fused: float


@dataclass(frozen=True)
class EerResult:
    eer: float  # percent
    threshold: float
    n_target: int
    n_nontarget: int


def _candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.sort(np.concatenate([distinct, mids]))


def compute_eer(targets, nontargets) -> EerResult:
    """Equal error rate over the empirical FAR/FRR step functions.

    Thresholds swept: every distinct score and every midpoint between
    consecutive distinct scores. FRR(t) counts targets below t, FAR(t)
    counts non-targets at or above t. The reported EER is (FAR + FRR) / 2 at
    the threshold minimizing |FAR - FRR|, lowest threshold on ties.
    """
    tar = np.asarray(targets, dtype=np.float64).ravel()
    non = np.asarray(nontargets, dtype=np.float64).ravel()
    if tar.size == 0 or non.size == 0:
        raise EmptyBatchError("EER needs at least one target and one non-target score")
    n_t, n_n = tar.size, non.size
    thresholds = _candidate_thresholds(np.concatenate([tar, non]))
    misses = np.searchsorted(np.sort(tar), thresholds, side="left")
    false_alarms = n_n - np.searchsorted(np.sort(non), thresholds, side="left")
    # |FAR - FRR| compared exactly in integers: |fa * n_t - miss * n_n|
    gap = np.abs(false_alarms.astype(np.int64) * n_t - misses.astype(np.int64) * n_n)
    best = int(np.argmin(gap))
    eer = 100.0 * (false_alarms[best] / n_n + misses[best] / n_t) / 2.0
    return EerResult(float(eer), float(thresholds[best]), n_t, n_n)


def eval_condition(records: Sequence[ScoreRecord], condition: str) -> EerResult:
    """EER with TC fused scores as targets and one non-target category."""
    if condition not in NONTARGET_CONDITIONS:
        raise ValueError(f"condition must be one of {NONTARGET_CONDITIONS}, got {condition!r}")
    targets = [r.fused for r in records if r.category == "TC"]
    nontargets = [r.fused for r in records if r.category == condition]
    if not targets:
        raise EmptyBatchError("no TC trials among the scores")
    if not nontargets:
        raise EmptyBatchError(f"no {condition} trials among the scores")
    return compute_eer(targets, nontargets)


def score_trials(trials, model_embs: dict, test_embs: dict, alpha: float = DEFAULT_ALPHA) -> list[ScoreRecord]:
    """Score trials against enrolled models.

    ``model_embs`` maps ``(speaker, phrase)`` to ``(emb_s, emb_u)``;
    ``test_embs`` maps utterance id to ``(emb_s, emb_u)``.
    """
    records = []
    for trial in trials:
        m_s, m_u = model_embs[trial.model]
        t_s, t_u = test_embs[trial.test.utt_id]
        s_spk = cosine_score(m_s, t_s)
        s_utt = cosine_score(m_u, t_u)
        records.append(ScoreRecord(trial.model_id, trial.test.utt_id, trial.category,
                                   s_spk, s_utt, fuse(s_spk, s_utt, alpha)))
    return records


# -- score files -------------------------------------------------------------------
def format_scores(records: Iterable[ScoreRecord]) -> str:
    return "".join(f"{r.model}\t{r.test_utt}\t{r.category}\t{r.s_spk:.6f}\t{r.s_utt:.6f}\t{r.fused:.6f}\n"
                   for r in records)


def parse_scores(text: str, source: str = "<scores>") -> list[ScoreRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6 or fields[2] not in CATEGORIES:
            raise FormatError(f"{source}:{lineno}: malformed score line {line!r}")
        try:
            s_spk, s_utt, fused = (float(v) for v in fields[3:])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric score in {line!r}") from None
        records.append(ScoreRecord(fields[0], fields[1], fields[2], s_spk, s_utt, fused))
    return records


def read_scores(path) -> list[ScoreRecord]:
    return parse_scores(Path(path).read_text(encoding="utf-8"), str(path))


def format_report(results: dict[str, EerResult]) -> str:
    """Key-value report, one block per condition."""
    lines = []
    for condition, res in results.items():
        lines += [f"condition={condition}", f"eer_percent={res.eer:.6f}",
                  f"threshold={res.threshold:.6f}", f"n_target={res.n_target}",
                  f"n_nontarget={res.n_nontarget}", ""]
    return "\n".join(lines)
