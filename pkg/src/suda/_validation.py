"""Input checks shared by the estimator and the pipeline."""
from __future__ import annotations

import numpy as np

from .errors import ShapeError, UtteranceTooShortError
from .network import MIN_FRAMES


def check_feature_list(X, input_dim: int = 60, min_frames: int = MIN_FRAMES) -> list[np.ndarray]:
    """Coerce ``X`` to a list of finite float64 ``(NF_i, input_dim)`` matrices.

    A single 3-D array is accepted as a batch of equal-length utterances.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ShapeError("expected a sequence of feature matrices, got one 2-D array; wrap it in a list")
    out = []
    for i, feats in enumerate(X):
        arr = np.asarray(feats, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != input_dim:
            raise ShapeError(f"utterance {i}: expected shape (NF, {input_dim}), got {arr.shape}")
        if arr.shape[0] < min_frames:
            raise UtteranceTooShortError(f"utterance {i}: {arr.shape[0]} frames, need at least {min_frames}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"utterance {i}: features contain NaN or inf")
        out.append(arr)
    if not out:
        raise ValueError("no utterances given")
    return out


def check_label_pairs(y, n_samples: int) -> np.ndarray:
    """Validate ``y`` as ``(n_samples, 2)`` rows of (speaker, phrase) labels."""
    arr = np.asarray(y)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"y must have shape (n_samples, 2) holding (speaker, phrase), got {arr.shape}")
    if arr.shape[0] != n_samples:
        raise ShapeError(f"X has {n_samples} utterances but y has {arr.shape[0]} rows")
    return arr


def check_branch(branch: str) -> str:
    aliases = {"spk": "spk", "speaker": "spk", "utt": "utt", "utterance": "utt"}
    if branch not in aliases:
        raise ValueError(f"branch must be 'speaker' or 'utterance', got {branch!r}")
    return aliases[branch]
