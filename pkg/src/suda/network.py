"""Dual-branch masked verification network.

Pipeline for one utterance (or a batch of equal-length utterances)::

    features (NF, 60)
      -> shared LSTM                            (NF, shared_hidden)
      -> speaker LSTM | utterance LSTM          (NF, branch_hidden) each
      -> conv k=5 -> PReLU -> conv k=1          fm_s | fm_u: (C, NF - 4)
      -> cross-branch masks                     mask_s = 1 - sigmoid(fm_u)
                                                mask_u = 1 - sigmoid(fm_s)
      -> masked maps -> average over time       emb_s | emb_u: (C,)
      -> linear + log-softmax                   speaker | phrase log-probs

With ``masks_enabled=False`` the masking block is skipped (mod-SUV baseline).
"""
from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, ShapeError, UtteranceTooShortError

CONV_KERNEL = 5
CONV_PAD = 0
CONV_STRIDE = 1
MIN_FRAMES = CONV_KERNEL
BRANCHES = ("spk", "utt")
CHECKPOINT_MAGIC = b"SUDA1\n"


@dataclass(frozen=True)
class SudaConfig:
    """Architecture hyperparameters.

    ``conv_channels`` is also the embedding size since pooling keeps the
    channel axis.
    """

    n_speakers: int
    n_phrases: int
    input_dim: int = 60
    shared_hidden: int = 256
    branch_hidden: int = 256
    conv_channels: int = 512
    masks_enabled: bool = True

    def __post_init__(self):
        for name in ("n_speakers", "n_phrases", "input_dim", "shared_hidden",
                     "branch_hidden", "conv_channels"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def embedding_dim(self) -> int:
        return self.conv_channels

    conv_kernel = CONV_KERNEL
    conv_pad = CONV_PAD
    conv_stride = CONV_STRIDE

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def param_shapes(config: SudaConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    hs, hb, c = config.shared_hidden, config.branch_hidden, config.conv_channels
    shapes["shared.w_ih"] = (config.input_dim, 4 * hs)
    shapes["shared.w_hh"] = (hs, 4 * hs)
    shapes["shared.b"] = (4 * hs,)
    n_out = {"spk": config.n_speakers, "utt": config.n_phrases}
    for br in BRANCHES:
        shapes[f"{br}.lstm.w_ih"] = (hs, 4 * hb)
        shapes[f"{br}.lstm.w_hh"] = (hb, 4 * hb)
        shapes[f"{br}.lstm.b"] = (4 * hb,)
        shapes[f"{br}.conv1.w"] = (c, hb, CONV_KERNEL)
        shapes[f"{br}.conv1.b"] = (c,)
        shapes[f"{br}.prelu.a"] = (c,)
        shapes[f"{br}.conv2.w"] = (c, c, 1)
        shapes[f"{br}.conv2.b"] = (c,)
        shapes[f"{br}.fc.w"] = (c, n_out[br])
        shapes[f"{br}.fc.b"] = (n_out[br],)
    return shapes


def parameter_count(config: SudaConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def init_params(config: SudaConfig, seed: int = 2020) -> dict[str, Tensor]:
    """Seeded initialization.

    Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0 except the LSTM
    forget gate (+1); PReLU slopes 0.25.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        kind = name.rsplit(".", 1)[1]
        if kind == "a":
            data = np.full(shape, 0.25)
        elif kind == "b":
            data = np.zeros(shape)
            if "lstm" in name or name.startswith("shared"):
                hidden = shape[0] // 4
                data[hidden:2 * hidden] = 1.0
        else:
            fan_in = shape[0] if len(shape) == 2 else shape[1] * shape[2]
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


@dataclass
class BranchActivations:
    """Intermediate tensors of one forward pass; batch axis leads when present."""

    fm_s: Tensor
    fm_u: Tensor
    mask_s: Tensor | None
    mask_u: Tensor | None
    masked_s: Tensor
    masked_u: Tensor
    emb_s: Tensor
    emb_u: Tensor
    logits_s: Tensor
    logits_u: Tensor


def compute_masks(fm_s: Tensor, fm_u: Tensor) -> tuple[Tensor, Tensor]:
    """Cross-branch attention masks ``(1 - sigmoid(fm_u), 1 - sigmoid(fm_s))``.

    Each branch is gated by the other branch's feature map; the masks are
    parameter-free and carry gradient back into the opposite branch.
    """
    if fm_s.shape != fm_u.shape:
        raise ShapeError(f"feature maps differ in shape: {fm_s.shape} vs {fm_u.shape}")
    # 1 - sigmoid(x) evaluated as sigmoid(-x): same function, no cancellation
    mask_s = ad.sigmoid(-fm_u)
    mask_u = ad.sigmoid(-fm_s)
    return mask_s, mask_u


def apply_masks(fm: Tensor, mask: Tensor) -> Tensor:
    if fm.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match feature map {fm.shape}")
    return fm * mask


def _feature_map(h: Tensor, params: dict[str, Tensor], branch: str) -> Tensor:
    # LSTM output is time-major; convolutions want channels first
    x = ad.transpose(h, (0, 2, 1))
    x = ad.conv1d(x, params[f"{branch}.conv1.w"], params[f"{branch}.conv1.b"])
    x = ad.prelu(x, params[f"{branch}.prelu.a"])
    return ad.conv1d(x, params[f"{branch}.conv2.w"], params[f"{branch}.conv2.b"])


def _head(emb: Tensor, params: dict[str, Tensor], branch: str) -> Tensor:
    logits = ad.add_bias(ad.matmul(emb, params[f"{branch}.fc.w"]), params[f"{branch}.fc.b"])
    return ad.log_softmax(logits)


FeatureMapHook = Callable[[str, Tensor], Tensor]


def forward(features, params: dict[str, Tensor], config: SudaConfig,
            fm_hook: FeatureMapHook | None = None) -> BranchActivations:
    """Run the network on ``(NF, D)`` or ``(B, NF, D)`` features.

    ``fm_hook(branch, fm)`` may replace a feature map before masking; it is a
    probe for tests and ablation checks.
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[2] != config.input_dim:
        raise ShapeError(f"expected (B, NF, {config.input_dim}) features, got {x.shape}")
    if x.shape[1] < MIN_FRAMES:
        raise UtteranceTooShortError(f"need at least {MIN_FRAMES} frames, got {x.shape[1]}")

    shared = ad.lstm_forward(x, params["shared.w_ih"], params["shared.w_hh"], params["shared.b"])
    fms = {}
    for br in BRANCHES:
        h = ad.lstm_forward(shared, params[f"{br}.lstm.w_ih"], params[f"{br}.lstm.w_hh"],
                            params[f"{br}.lstm.b"])
        fm = _feature_map(h, params, br)
        fms[br] = fm_hook(br, fm) if fm_hook is not None else fm
    fm_s, fm_u = fms["spk"], fms["utt"]

    if config.masks_enabled:
        mask_s, mask_u = compute_masks(fm_s, fm_u)
        masked_s, masked_u = apply_masks(fm_s, mask_s), apply_masks(fm_u, mask_u)
    else:
        mask_s = mask_u = None
        masked_s, masked_u = fm_s, fm_u

    emb_s = ad.mean_over_time(masked_s)
    emb_u = ad.mean_over_time(masked_u)
    acts = BranchActivations(
        fm_s=fm_s, fm_u=fm_u, mask_s=mask_s, mask_u=mask_u,
        masked_s=masked_s, masked_u=masked_u, emb_s=emb_s, emb_u=emb_u,
        logits_s=_head(emb_s, params, "spk"), logits_u=_head(emb_u, params, "utt"),
    )
    if single:
        for field in dataclasses.fields(acts):
            value = getattr(acts, field.name)
            if value is not None:
                setattr(acts, field.name, value[0])
    return acts


def forward_mod_suv(features, params: dict[str, Tensor], config: SudaConfig,
                    fm_hook: FeatureMapHook | None = None) -> BranchActivations:
    """Forward pass with the masking block removed."""
    return forward(features, params, dataclasses.replace(config, masks_enabled=False), fm_hook)


def embed(features, params: dict[str, Tensor], config: SudaConfig, branch: str = "spk") -> np.ndarray:
    """Pooled embedding of one branch (``"spk"`` or ``"utt"``), no tape."""
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
    with ad.no_grad():
        acts = forward(features, params, config)
    return (acts.emb_s if branch == "spk" else acts.emb_u).data.copy()


# -- checkpoint I/O -------------------------------------------------------------
def _encode_meta(meta: dict) -> bytes:
    lines = []
    for key, value in meta.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise FormatError(f"cannot serialize metadata entry {key!r}")
        lines.append(f"{key}={text}")
    return ("\n".join(lines)).encode("utf-8")


def _parse_value(text: str):
    if text in ("True", "False"):
        return text == "True"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def checkpoint_bytes(params: dict[str, Tensor], config: SudaConfig, extra: dict | None = None) -> bytes:
    """Serialize parameters plus config (and optional provenance keys)."""
    meta = {f"config.{k}": v for k, v in config.to_dict().items()}
    meta.update({f"run.{k}": v for k, v in (extra or {}).items()})
    blob = _encode_meta(meta)
    out = [CHECKPOINT_MAGIC, struct.pack("<I", len(blob)), blob]
    names = list(param_shapes(config))
    out.append(struct.pack("<I", len(names)))
    for name in names:
        data = params[name].data
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)) + encoded)
        out.append(struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    return b"".join(out)


def checkpoint_from_bytes(blob: bytes, source: str = "<bytes>"):
    """Inverse of :func:`checkpoint_bytes`; returns ``(params, config, extra)``."""
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"{source}: truncated checkpoint")
        chunk = bytes(view[pos:pos + n])
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: not a SUDA1 checkpoint")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = {}
    for line in take(meta_len).decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key] = _parse_value(value)
    config_fields = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
    extra = {k[len("run."):]: v for k, v in meta.items() if k.startswith("run.")}
    try:
        config = SudaConfig(**config_fields)
    except TypeError as exc:
        raise FormatError(f"{source}: bad config block ({exc})") from exc
    expected = param_shapes(config)
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        if expected.get(name) != tuple(shape):
            raise FormatError(f"{source}: parameter {name} has unexpected shape {shape}")
        values = np.frombuffer(take(8 * math.prod(shape)), dtype="<f8").reshape(shape)
        params[name] = Tensor(values, requires_grad=True)
    if set(params) != set(expected) or pos != len(view):
        raise FormatError(f"{source}: parameter set does not match config")
    return params, config, extra


def save_checkpoint(path, params, config, extra=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, config, extra))


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes(), str(path))
