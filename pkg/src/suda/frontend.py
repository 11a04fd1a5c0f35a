"""Acoustic frontend: waveform -> 60-d CMVN-normalized MFCC + deltas.

Pinned DSP choices: 20 ms frames every 10 ms, per-frame pre-emphasis 0.97,
Hamming window, 512-point FFT power spectrum, 26 triangular mel filters over
0..Nyquist, log floor 1e-10, orthonormal DCT-II keeping c0..c19, regression
deltas over +-2 frames with edge replication, utterance-level CMVN with a
variance floor of 1e-10.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import FormatError, UtteranceTooShortError

SAMPLE_RATE = 16000
N_FFT = 512
N_MELS = 26
N_CEPS = 20
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-10
DELTA_WINDOW = 2
FEAT_MAGIC = b"FT01"


def frame_length(sample_rate: int = SAMPLE_RATE, ms: float = 20.0) -> int:
    return int(round(sample_rate * ms / 1000.0))


def num_frames(n_samples: int, sample_rate: int = SAMPLE_RATE, frame_ms: float = 20.0,
               shift_ms: float = 10.0) -> int:
    """Frame count ``floor((N - frame_len) / shift) + 1``; 0 if below one frame."""
    flen = frame_length(sample_rate, frame_ms)
    shift = frame_length(sample_rate, shift_ms)
    if n_samples < flen:
        return 0
    return (n_samples - flen) // shift + 1


def frame_signal(samples, sample_rate: int = SAMPLE_RATE, frame_ms: float = 20.0,
                 shift_ms: float = 10.0, preemphasis: float = PREEMPHASIS) -> np.ndarray:
    """Slice a waveform into pre-emphasized, Hamming-windowed frames.

    Returns
    -------
    ndarray of shape (NF, frame_len)

    Raises
    ------
    UtteranceTooShortError
        If the signal is shorter than one frame.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono 1-D waveform, got shape {x.shape}")
    flen = frame_length(sample_rate, frame_ms)
    shift = frame_length(sample_rate, shift_ms)
    n = num_frames(len(x), sample_rate, frame_ms, shift_ms)
    if n == 0:
        raise UtteranceTooShortError(f"{len(x)} samples is shorter than one {flen}-sample frame")
    idx = np.arange(flen)[None, :] + shift * np.arange(n)[:, None]
    frames = x[idx]
    # pre-emphasis is applied inside each frame so frames depend only on their own samples
    emph = np.empty_like(frames)
    emph[:, 1:] = frames[:, 1:] - preemphasis * frames[:, :-1]
    emph[:, 0] = frames[:, 0] - preemphasis * frames[:, 0]
    return emph * np.hamming(flen)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    edges = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
                   n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters, linear in mel, sampled at the rfft bin frequencies.

    Returns ``(n_mels, n_fft // 2 + 1)`` weights.
    """
    edges = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    bin_mel = hz_to_mel(np.fft.rfftfreq(n_fft, d=1.0 / sample_rate))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_mel[None, :] - lower) / (center - lower)
    falling = (upper - bin_mel[None, :]) / (upper - center)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def log_mel_energies(frames: np.ndarray, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
                     n_mels: int = N_MELS) -> np.ndarray:
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    energies = power @ mel_filterbank(sample_rate, n_fft, n_mels).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def mfcc(frames: np.ndarray, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
         n_mels: int = N_MELS, n_ceps: int = N_CEPS) -> np.ndarray:
    """Base cepstra c0..c{n_ceps-1} of windowed frames, shape ``(NF, n_ceps)``."""
    logmel = log_mel_energies(np.atleast_2d(frames), sample_rate, n_fft, n_mels)
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :n_ceps]


def deltas(x: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas along time with edge-replicated padding."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    padded = np.pad(x, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    out = np.zeros_like(x)
    for k in range(1, window + 1):
        out += k * (padded[window + k:window + k + n] - padded[window - k:window - k + n])
    return out / denom


def add_deltas(x: np.ndarray) -> np.ndarray:
    """Stack ``[x, delta(x), delta(delta(x))]`` along the feature axis."""
    d1 = deltas(x)
    return np.hstack([np.asarray(x, dtype=np.float64), d1, deltas(d1)])


def cmvn(x: np.ndarray) -> np.ndarray:
    """Utterance-level per-column mean and variance normalization."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0)
    centered[:, np.ptp(x, axis=0) == 0] = 0.0  # exact zeros despite rounding in the mean
    var = (centered ** 2).mean(axis=0)
    return centered / np.sqrt(np.maximum(var, VAR_FLOOR))


def extract_features(samples, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Full pipeline: framing -> MFCC -> deltas -> CMVN, shape ``(NF, 60)``."""
    frames = frame_signal(samples, sample_rate)
    return cmvn(add_deltas(mfcc(frames, sample_rate)))


class MfccExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping waveforms to normalized feature matrices.

    ``transform`` takes a sequence of 1-D waveforms and returns a list of
    ``(NF_i, 60)`` arrays (utterances differ in length).
    """

    def __init__(self, sample_rate: int = SAMPLE_RATE):
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [extract_features(w, self.sample_rate) for w in X]


# -- file formats -----------------------------------------------------------------
def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    wavfile.write(str(path), sample_rate, pcm)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read mono 16-bit PCM as float64 in [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype != np.int16 or data.ndim != 1:
        raise FormatError(f"{path}: expected mono 16-bit PCM, got {data.dtype} with shape {data.shape}")
    return data.astype(np.float64) / 32768.0, int(rate)


def feat_to_bytes(features: np.ndarray) -> bytes:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise FormatError(f"features must be 2-D, got shape {feats.shape}")
    header = FEAT_MAGIC + struct.pack("<II", feats.shape[0], feats.shape[1])
    return header + np.ascontiguousarray(feats, dtype="<f4").tobytes()


def feat_from_bytes(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < 12 or blob[:4] != FEAT_MAGIC:
        raise FormatError(f"{source}: missing FT01 header")
    n_frames, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * n_frames * dim
    if len(blob) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for {n_frames}x{dim}, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(n_frames, dim).astype(np.float64)


def write_feat(path, features: np.ndarray) -> None:
    Path(path).write_bytes(feat_to_bytes(features))


def read_feat(path) -> np.ndarray:
    return feat_from_bytes(Path(path).read_bytes(), str(path))
