"""Mini-batch training of the dual-branch network on the joint loss."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import DEFAULT_MARGIN, total_loss
from .network import SudaConfig, forward

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("L_Tspk", "L_Tutt", "L_spk", "L_utt", "L_total")


class SGD:
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self._velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self._t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.betas
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self._m[name], self._v[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad ** 2
            m_hat = m / (1.0 - b1 ** self._t)
            v_hat = v / (1.0 - b2 ** self._t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def make_optimizer(kind: str, params, lr: float, momentum: float = 0.9):
    if kind == "sgd":
        return SGD(params, lr=lr, momentum=momentum)
    if kind == "adam":
        return Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}")


@dataclass
class TrainLog:
    """Per-step loss components and per-epoch summaries."""

    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def loss_column(self, name: str = "L_total") -> list[float]:
        return [row[name] for row in self.steps]

    def to_tsv(self, provenance: dict | None = None) -> str:
        """Tab-separated step rows, optionally preceded by ``# key=value`` lines."""
        header = ("epoch", "step", "lr") + LOSS_COLUMNS
        lines = [f"# {k}={v}" for k, v in (provenance or {}).items()]
        lines.append("\t".join(header))
        for row in self.steps:
            lines.append("\t".join([str(row["epoch"]), str(row["step"]), repr(row["lr"])]
                                   + [repr(row[c]) for c in LOSS_COLUMNS]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "TrainLog":
        lines = [ln for ln in text.strip().splitlines() if not ln.startswith("#")]
        header = lines[0].split("\t")
        log = cls()
        for line in lines[1:]:
            values = dict(zip(header, line.split("\t")))
            row = {"epoch": int(values["epoch"]), "step": int(values["step"]), "lr": float(values["lr"])}
            row.update({c: float(values[c]) for c in LOSS_COLUMNS})
            log.steps.append(row)
        return log


def group_by_length(features: Sequence[np.ndarray], indices) -> list[np.ndarray]:
    """Split ``indices`` into runs of equal frame count, shortest first.

    Within a group the original order is kept, so results are deterministic.
    """
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(len(features[i]), []).append(int(i))
    return [np.asarray(groups[n]) for n in sorted(groups)]


def batch_loss(features, speaker_idx, phrase_idx, batch, params, config: SudaConfig, seed,
               margin: float = DEFAULT_MARGIN):
    """Joint loss over one mini-batch processed as equal-length groups."""
    acts, order = [], []
    for members in group_by_length(features, batch):
        x = np.stack([features[i] for i in members])
        acts.append(forward(x, params, config))
        order.extend(members)
    order = np.asarray(order)
    return total_loss(acts, speaker_idx[order], phrase_idx[order], seed=seed, margin=margin)


def train(features: Sequence[np.ndarray], speaker_idx, phrase_idx, params: dict[str, Tensor],
          config: SudaConfig, *, optimizer: str = "sgd", learning_rate: float = 1e-3,
          momentum: float = 0.9, batch_size: int = 128, epochs: int = 30,
          margin: float = DEFAULT_MARGIN, seed: int = 2020, patience: int = 5,
          epoch_callback: Callable[[int, dict], float | None] | None = None) -> TrainLog:
    """Optimize ``params`` in place and return the training log.

    The learning rate halves whenever the epoch-mean total loss has not
    improved for ``patience`` consecutive epochs. ``epoch_callback(epoch,
    params)`` may return a development EER to record for that epoch.
    """
    speaker_idx = np.asarray(speaker_idx, dtype=np.intp)
    phrase_idx = np.asarray(phrase_idx, dtype=np.intp)
    n = len(features)
    if n == 0:
        raise ValueError("no training utterances")
    opt = make_optimizer(optimizer, params, learning_rate, momentum)
    rng = np.random.default_rng([seed, 1])
    log = TrainLog()
    best, stale, step = np.inf, 0, 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            bundle = batch_loss(features, speaker_idx, phrase_idx, batch, params, config,
                                seed=[seed, 2, step], margin=margin)
            for p in params.values():
                p.zero_grad()
            bundle.L_total.backward()
            opt.step()
            row = {"epoch": epoch, "step": step, "lr": opt.lr}
            row.update(bundle.values())
            log.steps.append(row)
            epoch_losses.append(row["L_total"])
            step += 1
        mean_loss = float(np.mean(epoch_losses))
        summary = {"epoch": epoch, "mean_loss": mean_loss, "lr": opt.lr, "dev_eer": None}
        if epoch_callback is not None:
            summary["dev_eer"] = epoch_callback(epoch, params)
        log.epochs.append(summary)
        logger.info("epoch %d loss %.4f lr %.2e dev_eer %s", epoch, mean_loss, opt.lr, summary["dev_eer"])
        if mean_loss < best:
            best, stale = mean_loss, 0
        else:
            stale += 1
            if stale >= patience:
                opt.lr /= 2.0
                stale = 0
    return log


def embed_many(features: Sequence[np.ndarray], params, config: SudaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Speaker and utterance embeddings for every utterance, ``(n, D)`` each."""
    n = len(features)
    emb_s = np.empty((n, config.embedding_dim))
    emb_u = np.empty((n, config.embedding_dim))
    with ad.no_grad():
        for members in group_by_length(features, range(n)):
            acts = forward(np.stack([features[i] for i in members]), params, config)
            emb_s[members] = acts.emb_s.data
            emb_u[members] = acts.emb_u.data
    return emb_s, emb_u
