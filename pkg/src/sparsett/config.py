"""Run configuration stored as a flat ``section.key = value`` text file."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .optim import MilestoneSchedule
from .synth import SUITE_NAMES

SEED_ENV = "SPARSETT_SEED"


@dataclass(frozen=True)
class OptimConfig:
    type: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    milestones: tuple = (10, 15)     # epochs
    gamma: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self) -> None:
        if self.type != "adamw":
            raise ConfigError(f"unsupported optimizer {self.type!r}")
        MilestoneSchedule(self.lr, self.milestones, self.gamma)

    def schedule(self) -> MilestoneSchedule:
        return MilestoneSchedule(self.lr, tuple(self.milestones), self.gamma)


@dataclass(frozen=True)
class DataConfig:
    suites: tuple = ("easy-linear", "scale-2x")
    suite_seeds: tuple = (0, 1, 2, 3)
    frames: int = 120
    canvas: int = 256
    pairs_per_epoch: int = 200
    batch_size: int = 4
    epochs: int = 20
    fixed_pairs: int = 0        # > 0 draws this many pairs once and cycles over them
    max_gap: int = 100
    alpha: float = 0.3
    translation: float = 0.2
    augment_template: bool = True

    def __post_init__(self) -> None:
        for s in self.suites:
            if s not in SUITE_NAMES:
                raise ConfigError(f"unknown suite {s!r}")
        if self.batch_size < 1 or self.pairs_per_epoch < 1 or self.epochs < 1:
            raise ConfigError("batch_size, pairs_per_epoch and epochs must be >= 1")

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.pairs_per_epoch // self.batch_size)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def replace(self, **flat) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"model.sparseness": 4})``."""
        return parse_config(serialize_config(self) + "".join(f"{k} = {_fmt(k, v)}\n" for k, v in flat.items()))


SECTIONS = ("model", "optim", "loss", "data")


def _fmt(key: str, value) -> str:
    if key == "model.sparseness" and value == 0:
        return "full"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if key == "model.sparseness" and raw.lower() == "full":
            return 0
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(int(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            key = f"{section}.{f.name}"
            lines.append(f"{key} = {_fmt(key, getattr(obj, f.name))}")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, env: bool = False) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); unknown keys are
    rejected.  With ``env`` the SPARSETT_SEED variable overrides ``seed``."""
    defaults = RunConfig()
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    seed = defaults.seed
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            seed = _coerce(key, raw, 0)
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        obj = getattr(defaults, section)
        names = {f.name for f in dataclasses.fields(obj)}
        if name not in names:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[section][name] = _coerce(key, raw, getattr(obj, name))
    if env and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    try:
        return RunConfig(
            model=ModelConfig(**values["model"]),
            optim=OptimConfig(**values["optim"]),
            loss=LossWeights(**values["loss"]),
            data=DataConfig(**values["data"]),
            seed=seed,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike, env: bool = True) -> RunConfig:
    return parse_config(Path(path).read_text(), env=env)


def save_config(cfg: RunConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(serialize_config(cfg))


def toy_config(**flat) -> RunConfig:
    """Desk-scale settings used by the acceptance suite."""
    base = RunConfig(
        model=ModelConfig(channels=64, encoder_layers=2, decoder_layers=2, sparseness=32, heads=4,
                          ffn_hidden=128, conv_blocks=4, fc_hidden=64, dropout=0.0,
                          template_size=63, search_size=129, stem_channels=(16, 32, 64), dtype="float32"),
        optim=OptimConfig(lr=1e-3, weight_decay=1e-4, milestones=(20, 32)),
        data=DataConfig(pairs_per_epoch=200, batch_size=4, epochs=40, fixed_pairs=200),
    )
    return base.replace(**flat) if flat else base
