"""Run configuration: a flat set of typed keys read from ``key = value`` files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .losses import DEFAULT_MARGIN
from .network import SudaConfig
from .training import OPTIMIZERS


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on.

    Defaults reproduce the reference setup: SGD with momentum 0.9 at 1e-3,
    batch 128, seed 2020, hidden 256 and 512 convolution channels. The
    ``n_speakers``/``n_phrases`` keys size the synthetic corpus; the
    classifier heads are sized from the training split at fit time.
    """

    n_speakers: int = 16
    n_phrases: int = 4
    phrase_seconds: tuple = (1.0, 2.0)
    split_ratios: tuple = (0.5, 0.25, 0.25)
    shared_hidden: int = 256
    branch_hidden: int = 256
    conv_channels: int = 512
    masks_enabled: bool = True
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lr_patience: int = 5
    batch_size: int = 128
    epochs: int = 30
    margin: float = DEFAULT_MARGIN
    seed: int = 2020
    alpha: float = 0.5
    eval_split: str = "evaluation"
    ablate_seeds: tuple = (2020, 2021, 2022)
    corpus_dir: str = "corpus"
    work_dir: str = "work"

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            kind = _KINDS[f.name]
            if kind is tuple:
                ok = isinstance(value, tuple) and len(value) > 0
            elif kind is float:
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            elif kind is int:
                ok = isinstance(value, int) and not isinstance(value, bool)
            else:
                ok = isinstance(value, kind)
            if not ok:
                raise ConfigError(f"{f.name}: expected {kind.__name__}, got {value!r}")
        positive = ("n_speakers", "n_phrases", "shared_hidden", "branch_hidden", "conv_channels",
                    "lr_patience", "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.n_speakers < 2 or self.n_phrases < 2:
            raise ConfigError("n_speakers and n_phrases must each be >= 2")
        if self.epochs < 0:
            raise ConfigError(f"epochs: must be >= 0, got {self.epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer: unknown {self.optimizer!r}, choose from {sorted(OPTIMIZERS)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha: must lie in [0, 1], got {self.alpha}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate: must be > 0, got {self.learning_rate}")
        if len(self.phrase_seconds) != 2 or not 0 < self.phrase_seconds[0] <= self.phrase_seconds[1]:
            raise ConfigError(f"phrase_seconds: need 0 < min <= max, got {self.phrase_seconds}")
        if len(self.split_ratios) != 3 or min(self.split_ratios) < 0 or abs(sum(self.split_ratios) - 1) > 1e-9:
            raise ConfigError(f"split_ratios: need three non-negative values summing to 1, got {self.split_ratios}")
        if self.eval_split not in ("development", "evaluation"):
            raise ConfigError(f"eval_split: must be development or evaluation, got {self.eval_split!r}")

    def network_config(self, n_speakers: int, n_phrases: int, masks_enabled: bool | None = None) -> SudaConfig:
        return SudaConfig(n_speakers=n_speakers, n_phrases=n_phrases, shared_hidden=self.shared_hidden,
                          branch_hidden=self.branch_hidden, conv_channels=self.conv_channels,
                          masks_enabled=self.masks_enabled if masks_enabled is None else masks_enabled)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_KINDS = {"phrase_seconds": tuple, "split_ratios": tuple, "ablate_seeds": tuple}
_ELEMENT = {"phrase_seconds": float, "split_ratios": float, "ablate_seeds": int}
for _f in fields(RunConfig):
    _KINDS.setdefault(_f.name, type(_f.default))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(name: str, kind, text: str):
    if kind is bool:
        lowered = text.lower()
        if lowered not in ("true", "false"):
            raise ConfigError(f"{name}: expected true or false, got {text!r}")
        return lowered == "true"
    if kind is str:
        return text
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {text!r}") from None


def serialize(config: RunConfig) -> str:
    return "".join(f"{name} = {_format_value(value)}\n" for name, value in config.to_dict().items())


def parse(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    """Read ``key = value`` lines over ``base`` (defaults if omitted).

    Blank lines and ``#`` comments are skipped; unknown or repeated keys are
    errors so typos cannot pass silently.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in _KINDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
        kind = _KINDS[key]
        try:
            if kind is tuple:
                values[key] = tuple(_parse_scalar(key, _ELEMENT[key], v.strip()) for v in value.split(","))
            else:
                values[key] = _parse_scalar(key, kind, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    try:
        return dataclasses.replace(base or RunConfig(), **values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse(text, str(path))


def save(path, config: RunConfig) -> None:
    Path(path).write_text(serialize(config), encoding="utf-8")
