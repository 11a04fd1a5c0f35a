"""Deterministic source-filter speech corpus (speaker x phrase x 9 sessions).

Speakers differ in F0, formant scale and spectral tilt; phrases are
sequences of vowel segments. Each utterance draws its randomness from a
generator seeded by ``(seed, speaker, phrase, session)`` only, so any subset
can be regenerated independently and in any order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .frontend import SAMPLE_RATE, write_wav
from .protocol import N_SESSIONS, SPLITS, Utterance, write_manifest

DEFAULT_SEED = 2020
F0_RANGE = (90.0, 280.0)
FORMANT_SHIFT_RANGE = (0.85, 1.15)
TILT_RANGE = (-12.0, -3.0)  # dB per octave
SEGMENT_MS_RANGE = (120.0, 300.0)
SHORT_PHRASE_SECONDS = (1.0, 2.0)
LONG_PHRASE_SECONDS = (3.0, 4.0)
SNR_DB = 30.0
F0_JITTER = 0.02
GAIN_JITTER_DB = 3.0
FORMANT_BANDWIDTHS = (80.0, 100.0, 140.0)

# Average adult formants (Hz) for ten English vowels.
VOWELS = (
    (270.0, 2290.0, 3010.0),
    (390.0, 1990.0, 2550.0),
    (530.0, 1840.0, 2480.0),
    (660.0, 1720.0, 2410.0),
    (520.0, 1190.0, 2390.0),
    (730.0, 1090.0, 2440.0),
    (570.0, 840.0, 2410.0),
    (440.0, 1020.0, 2240.0),
    (300.0, 870.0, 2240.0),
    (490.0, 1350.0, 1690.0),
)

_SPEAKER_STREAM, _PHRASE_STREAM, _UTTERANCE_STREAM = 1, 2, 3


@dataclass(frozen=True)
class SpeakerSpec:
    index: int
    f0: float
    formant_shift: float
    tilt_db: float

    @property
    def speaker_id(self) -> str:
        return f"spk{self.index:03d}"


@dataclass(frozen=True)
class PhraseSpec:
    index: int
    segments: tuple[tuple[tuple[float, float, float], float], ...]  # (formants, ms)

    @property
    def phrase_id(self) -> str:
        return f"ph{self.index:02d}"

    @property
    def duration_ms(self) -> float:
        return sum(ms for _, ms in self.segments)


def _radical_inverse(index: int, base: int) -> float:
    value, scale = 0.0, 1.0 / base
    while index > 0:
        index, digit = divmod(index, base)
        value += digit * scale
        scale /= base
    return value


def speaker_spec(seed: int, index: int) -> SpeakerSpec:
    """Speaker traits from a seed-rotated Halton point (bases 2, 3, 5).

    Consecutive speaker ids stay well spread over the trait ranges, so small
    splits do not end up with near-identical voices.
    """
    offsets = np.random.default_rng([seed, _SPEAKER_STREAM]).uniform(size=3)
    u = [(_radical_inverse(index + 1, base) + off) % 1.0 for base, off in zip((2, 3, 5), offsets)]
    lerp = lambda bounds, t: float(bounds[0] + (bounds[1] - bounds[0]) * t)
    return SpeakerSpec(index, lerp(F0_RANGE, u[0]), lerp(FORMANT_SHIFT_RANGE, u[1]), lerp(TILT_RANGE, u[2]))


def phrase_spec(seed: int, index: int, seconds: tuple[float, float] = SHORT_PHRASE_SECONDS) -> PhraseSpec:
    """Vowel segments whose total duration lands in ``seconds``."""
    rng = np.random.default_rng([seed, _PHRASE_STREAM, index])
    lo, hi = seconds[0] * 1000.0, seconds[1] * 1000.0
    target = rng.uniform(lo, hi - SEGMENT_MS_RANGE[1])
    segments = []
    total = 0.0
    previous = -1
    while total < target:
        vowel = int(rng.integers(len(VOWELS)))
        if vowel == previous:
            continue
        ms = float(np.round(rng.uniform(*SEGMENT_MS_RANGE)))
        segments.append((VOWELS[vowel], ms))
        total += ms
        previous = vowel
    return PhraseSpec(index, tuple(segments))


def _resonator(freq: float, bandwidth: float, sr: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2.0 * np.pi * freq / sr
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a  # unity gain at DC


def synthesize(speaker: SpeakerSpec, phrase: PhraseSpec, session: int, seed: int = DEFAULT_SEED,
               sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Render one utterance as float64 samples in [-1, 1]."""
    rng = np.random.default_rng([seed, _UTTERANCE_STREAM, speaker.index, phrase.index, session])
    n_total = int(round(phrase.duration_ms * sample_rate / 1000.0))

    f0 = speaker.f0 * (1.0 + rng.uniform(-F0_JITTER, F0_JITTER))
    period = sample_rate / f0
    # slight declination over the utterance, starting at a random glottal phase
    phase = rng.uniform(0.0, 1.0) + np.cumsum(np.linspace(1.05, 0.95, n_total) / period)
    source = np.diff(np.floor(phase), prepend=np.floor(phase[0])).astype(np.float64)
    source += 0.02 * rng.standard_normal(n_total)  # aspiration

    out = np.empty(n_total)
    states = [np.zeros(2) for _ in FORMANT_BANDWIDTHS]
    start = 0
    for k, (formants, ms) in enumerate(phrase.segments):
        stop = n_total if k == len(phrase.segments) - 1 else start + int(round(ms * sample_rate / 1000.0))
        y = source[start:stop]
        for j, (freq, bw) in enumerate(zip(formants, FORMANT_BANDWIDTHS)):
            freq = min(freq * speaker.formant_shift, 0.45 * sample_rate)
            b, a = _resonator(freq, bw, sample_rate)
            y, states[j] = lfilter(b, a, y, zi=states[j])
        out[start:stop] = y
        start = stop

    spectrum = np.fft.rfft(out)
    freqs = np.fft.rfftfreq(n_total, d=1.0 / sample_rate)
    octaves = np.log2(np.maximum(freqs, 100.0) / 100.0)
    out = np.fft.irfft(spectrum * 10.0 ** (speaker.tilt_db * octaves / 20.0), n=n_total)

    out *= 0.1 / np.sqrt(np.mean(out ** 2))
    out *= 10.0 ** (rng.uniform(-GAIN_JITTER_DB, GAIN_JITTER_DB) / 20.0)
    noise_rms = np.sqrt(np.mean(out ** 2) / 10.0 ** (SNR_DB / 10.0))
    out += noise_rms * rng.standard_normal(n_total)
    return np.clip(out, -1.0, 1.0)


def split_counts(n_speakers: int, ratios=(0.5, 0.25, 0.25)) -> tuple[int, int, int]:
    """Speakers per (background, development, evaluation) split."""
    if len(ratios) != 3 or min(ratios) < 0 or not np.isclose(sum(ratios), 1.0):
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_bg = int(round(n_speakers * ratios[0]))
    n_dev = int(round(n_speakers * ratios[1]))
    return n_bg, n_dev, n_speakers - n_bg - n_dev


def corpus_utterances(n_speakers: int, n_phrases: int, ratios=(0.5, 0.25, 0.25)) -> list[Utterance]:
    """Manifest rows (paths relative to the corpus root), in generation order."""
    if n_speakers < 2 or n_phrases < 2:
        raise ValueError("need at least 2 speakers and 2 phrases")
    counts = split_counts(n_speakers, ratios)
    split_of = [SPLITS[i] for i, c in enumerate(counts) for _ in range(c)]
    rows = []
    for spk in range(n_speakers):
        for ph in range(n_phrases):
            for session in range(1, N_SESSIONS + 1):
                utt_id = f"spk{spk:03d}-ph{ph:02d}-s{session}"
                rows.append(Utterance(utt_id, f"spk{spk:03d}", f"ph{ph:02d}", session,
                                      split_of[spk], f"wav/{utt_id}.wav"))
    return rows


def generate_corpus(out_dir, n_speakers: int = 16, n_phrases: int = 4, seed: int = DEFAULT_SEED,
                    ratios=(0.5, 0.25, 0.25), phrase_seconds=SHORT_PHRASE_SECONDS) -> list[Utterance]:
    """Write every waveform plus ``manifest.tsv`` under ``out_dir``.

    Raises
    ------
    OSError
        With the offending path if a file cannot be written.
    """
    root = Path(out_dir)
    rows = corpus_utterances(n_speakers, n_phrases, ratios)
    speakers = [speaker_spec(seed, i) for i in range(n_speakers)]
    phrases = [phrase_spec(seed, i, phrase_seconds) for i in range(n_phrases)]
    try:
        (root / "wav").mkdir(parents=True, exist_ok=True)
        for row in rows:
            spk = int(row.speaker[3:])
            ph = int(row.phrase[2:])
            samples = synthesize(speakers[spk], phrases[ph], row.session, seed)
            write_wav(root / row.path, samples)
        write_manifest(root / "manifest.tsv", rows)
    except OSError as exc:
        raise OSError(f"failed writing corpus under {root}: {exc}") from exc
    return rows


def manifest_hash(root) -> str:
    """SHA-256 over the manifest and every referenced waveform, in manifest order."""
    root = Path(root)
    digest = hashlib.sha256()
    manifest = (root / "manifest.tsv").read_bytes()
    digest.update(manifest)
    for line in manifest.decode("utf-8").splitlines():
        digest.update((root / line.split("\t")[5]).read_bytes())
    return digest.hexdigest()


def nearest_centroid_accuracy(vectors, labels, train_mask, standardize: bool = True) -> float:
    """Accuracy of a nearest-class-mean classifier fit on ``train_mask`` rows.

    With ``standardize`` each dimension is z-scored using the fit rows, so
    the session gain riding on c0 does not swamp the other coefficients.
    """
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels)
    train = np.asarray(train_mask, dtype=bool)
    if standardize:
        scale = x[train].std(axis=0)
        x = (x - x[train].mean(axis=0)) / np.where(scale > 0, scale, 1.0)
    classes = np.unique(y[train])
    centroids = np.stack([x[train & (y == c)].mean(axis=0) for c in classes])
    test = ~train
    dist = ((x[test, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[np.argmin(dist, axis=1)] == y[test]))
