"""Corpus manifest, enrollment split and the TC/TW/IC/IW trial taxonomy."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBatchError, FormatError, ManifestError

ENROLL_SESSIONS = (1, 4, 7)
N_SESSIONS = 9
SPLITS = ("background", "development", "evaluation")
CATEGORIES = ("TC", "TW", "IC", "IW")
NONTARGET_CONDITIONS = ("TW", "IC", "IW")


@dataclass(frozen=True, order=True)
class Utterance:
    """One manifest row."""

    utt_id: str
    speaker: str
    phrase: str
    session: int
    split: str
    path: str = ""

    def __post_init__(self):
        if not 1 <= self.session <= N_SESSIONS:
            raise ManifestError(f"{self.utt_id}: session {self.session} outside 1..{N_SESSIONS}")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.utt_id}: unknown split {self.split!r}")
        if "_" in self.phrase:
            raise ManifestError(f"{self.utt_id}: phrase id {self.phrase!r} must not contain '_'")


@dataclass(frozen=True, order=True)
class Trial:
    model: tuple[str, str]
    test: Utterance
    category: str

    @property
    def model_id(self) -> str:
        return model_id(*self.model)


def model_id(speaker: str, phrase: str) -> str:
    return f"{speaker}_{phrase}"


def parse_model_id(text: str) -> tuple[str, str]:
    speaker, sep, phrase = text.rpartition("_")
    if not sep:
        raise FormatError(f"model id {text!r} is not speaker_phrase")
    return speaker, phrase


def categorize(model: tuple[str, str], test: Utterance) -> str:
    """TC/TW/IC/IW from speaker and phrase agreement."""
    same_speaker = model[0] == test.speaker
    same_phrase = model[1] == test.phrase
    if same_speaker:
        return "TC" if same_phrase else "TW"
    return "IC" if same_phrase else "IW"


# -- manifest I/O --------------------------------------------------------------------
def format_manifest(utterances: Iterable[Utterance]) -> str:
    return "".join(f"{u.utt_id}\t{u.speaker}\t{u.phrase}\t{u.session}\t{u.split}\t{u.path}\n"
                   for u in utterances)


def parse_manifest(text: str, source: str = "<manifest>") -> list[Utterance]:
    out = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise ManifestError(f"{source}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
        utt_id, speaker, phrase, session, split, path = fields
        try:
            session_no = int(session)
        except ValueError:
            raise ManifestError(f"{source}:{lineno}: session {session!r} is not an integer") from None
        utt = Utterance(utt_id, speaker, phrase, session_no, split, path)
        key = (split, speaker, phrase, session_no)
        if key in seen or utt_id in seen:
            raise ManifestError(f"{source}:{lineno}: duplicate utterance {utt_id}")
        seen.update([key, utt_id])
        out.append(utt)
    return out


def read_manifest(path) -> list[Utterance]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"), str(path))


def write_manifest(path, utterances: Iterable[Utterance]) -> None:
    Path(path).write_text(format_manifest(utterances), encoding="utf-8")


# -- enrollment / trials --------------------------------------------------------------
def split_enrollment(manifest: Sequence[Utterance]) -> tuple[list[Utterance], list[Utterance]]:
    """Sessions 1, 4 and 7 enroll each (speaker, phrase); the rest are tests.

    Raises
    ------
    ManifestError
        Naming the first (speaker, phrase, session) whose enrollment
        session is missing.
    """
    present = {(u.speaker, u.phrase, u.session) for u in manifest}
    for speaker, phrase in sorted({(u.speaker, u.phrase) for u in manifest}):
        for session in ENROLL_SESSIONS:
            if (speaker, phrase, session) not in present:
                raise ManifestError(
                    f"missing enrollment session: speaker={speaker} phrase={phrase} session={session}")
    enroll = [u for u in manifest if u.session in ENROLL_SESSIONS]
    tests = [u for u in manifest if u.session not in ENROLL_SESSIONS]
    return enroll, tests


def enrollment_groups(enroll: Sequence[Utterance]) -> dict[tuple[str, str], list[Utterance]]:
    groups: dict[tuple[str, str], list[Utterance]] = {}
    for u in sorted(enroll, key=lambda u: (u.speaker, u.phrase, u.session)):
        groups.setdefault((u.speaker, u.phrase), []).append(u)
    return groups


def generate_trials(models: Iterable[tuple[str, str]], tests: Sequence[Utterance],
                    condition: str) -> list[Trial]:
    """All TC trials plus all trials of one non-target category.

    Ordered by model id, then test utterance id.
    """
    if condition not in NONTARGET_CONDITIONS:
        raise ValueError(f"condition must be one of {NONTARGET_CONDITIONS}, got {condition!r}")
    keep = {"TC", condition}
    trials = []
    for model in sorted(set(models), key=lambda m: model_id(*m)):
        for test in sorted(tests, key=lambda u: u.utt_id):
            if test.session in ENROLL_SESSIONS:
                raise ManifestError(f"{test.utt_id} is an enrollment session, not a test")
            category = categorize(model, test)
            if category in keep:
                trials.append(Trial(model, test, category))
    return trials


def enroll_model(embeddings) -> np.ndarray:
    """Length-normalized mean of the three enrollment-session embeddings."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] != len(ENROLL_SESSIONS):
        raise ValueError(f"expected {len(ENROLL_SESSIONS)} enrollment embeddings, got shape {emb.shape}")
    mean = emb.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise EmptyBatchError("degenerate enrollment: mean embedding has zero norm")
    return mean / norm


def format_trials(trials: Iterable[Trial]) -> str:
    return "".join(f"{t.model_id}\t{t.test.utt_id}\t{t.category}\n" for t in trials)


def parse_trials(text: str, manifest: Sequence[Utterance], source: str = "<trials>") -> list[Trial]:
    by_id = {u.utt_id: u for u in manifest}
    trials = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3 or fields[2] not in CATEGORIES:
            raise FormatError(f"{source}:{lineno}: malformed trial line {line!r}")
        if fields[1] not in by_id:
            raise FormatError(f"{source}:{lineno}: unknown test utterance {fields[1]}")
        model = parse_model_id(fields[0])
        test = by_id[fields[1]]
        if categorize(model, test) != fields[2]:
            raise FormatError(f"{source}:{lineno}: category {fields[2]} contradicts labels")
        trials.append(Trial(model, test, fields[2]))
    return trials
