"""Joint objective: two triplet losses plus two classification NLL losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyBatchError
from .network import BranchActivations

DEFAULT_MARGIN = 0.2


@dataclass(frozen=True)
class TripletBatch:
    """Row indices into an embedding matrix, aligned per triple."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return len(self.anchors)


def mine_triplets(labels: Sequence, seed) -> TripletBatch:
    """Pick one random positive and one random negative for every anchor.

    Anchors whose label has no other member, or that have no differently
    labelled partner, are skipped. ``seed`` is anything accepted by
    :func:`numpy.random.default_rng` (including a Generator).
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    anchors, positives, negatives = [], [], []
    idx = np.arange(len(labels))
    for a in idx:
        same = idx[(labels == labels[a]) & (idx != a)]
        diff = idx[labels != labels[a]]
        if len(same) == 0 or len(diff) == 0:
            continue
        anchors.append(a)
        positives.append(same[rng.integers(len(same))])
        negatives.append(diff[rng.integers(len(diff))])
    as_idx = lambda v: np.asarray(v, dtype=np.intp)
    return TripletBatch(as_idx(anchors), as_idx(positives), as_idx(negatives))


def _sq_dist(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return ad.tsum(d * d, axis=-1)


def triplet_loss(embeddings: Tensor, batch: TripletBatch, margin: float = DEFAULT_MARGIN) -> Tensor:
    """Mean hinge ``max(0, |a-p|^2 - |a-n|^2 + margin)`` over the mined triples."""
    if len(batch) == 0:
        raise EmptyBatchError("triplet loss over an empty batch")
    a = embeddings[batch.anchors]
    p = embeddings[batch.positives]
    n = embeddings[batch.negatives]
    return ad.tmean(ad.relu(_sq_dist(a, p) - _sq_dist(a, n) + margin))


def nll_loss(log_probs: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood; ``log_probs`` is ``(n_classes,)`` or ``(B, n_classes)``."""
    targets = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    lp = log_probs if log_probs.ndim == 2 else ad.reshape(log_probs, (1, -1))
    if len(targets) != lp.shape[0]:
        raise ValueError(f"{len(targets)} targets for {lp.shape[0]} rows")
    n_classes = lp.shape[1]
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise IndexError(f"target out of range for {n_classes} classes: {targets}")
    picked = lp[np.arange(len(targets)), targets]
    return -ad.tmean(picked)


@dataclass
class LossBundle:
    L_Tspk: Tensor
    L_Tutt: Tensor
    L_spk: Tensor
    L_utt: Tensor
    L_total: Tensor

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name).item()
                for name in ("L_Tspk", "L_Tutt", "L_spk", "L_utt", "L_total")}


def _branch_triplet(embeddings: Tensor, labels, rng, margin: float) -> Tensor:
    batch = mine_triplets(labels, rng)
    if len(batch) == 0:
        return Tensor(0.0)
    return triplet_loss(embeddings, batch, margin)


def total_loss(acts: BranchActivations | Sequence[BranchActivations], speaker_labels,
               phrase_labels, seed=None, margin: float = DEFAULT_MARGIN) -> LossBundle:
    """``L_Tspk + L_Tutt + L_spk + L_utt`` over a batch.

    ``acts`` is a batched activation record or a list of them (one per
    equal-length group); labels follow the concatenated row order. Speaker
    triplets are mined first, then phrase triplets, from one generator.
    """
    groups = [acts] if isinstance(acts, BranchActivations) else list(acts)
    if not groups:
        raise EmptyBatchError("no activations to score")

    def rows(t: Tensor) -> Tensor:
        return t if t.ndim == 2 else ad.reshape(t, (1, -1))

    def stack(name: str) -> Tensor:
        parts = [rows(getattr(g, name)) for g in groups]
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)

    emb_s, emb_u = stack("emb_s"), stack("emb_u")
    logp_s, logp_u = stack("logits_s"), stack("logits_u")
    rng = np.random.default_rng(seed)
    l_tspk = _branch_triplet(emb_s, speaker_labels, rng, margin)
    l_tutt = _branch_triplet(emb_u, phrase_labels, rng, margin)
    l_spk = nll_loss(logp_s, speaker_labels)
    l_utt = nll_loss(logp_u, phrase_labels)
    total = ((l_tspk + l_tutt) + l_spk) + l_utt
    return LossBundle(l_tspk, l_tutt, l_spk, l_utt, total)
