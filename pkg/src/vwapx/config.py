"""Run configuration: one JSON document covering data, generator, training and evaluation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .synth import GeneratorConfig
from .trainer import MODES, TrainConfig

# training fields owned by the top level of the run config
_TOP_LEVEL = ("mode", "seed")


def _train_defaults() -> dict:
    d = TrainConfig().to_dict()
    for k in _TOP_LEVEL:
        d.pop(k)
    return d


@dataclass
class RunConfig:
    """Everything a CLI command needs.

    ``data_dir`` holds tapes (written by ``synth``/``ingest``, read by
    ``train``/``eval``); the first ``train_days`` tapes train and the next
    ``test_days`` evaluate. Relative paths resolve against the working
    directory. ``checkpoint`` defaults to ``<out>/model.ckpt``.
    """

    mode: str = "tul"
    seed: int = 0
    out: str = "runs/default"
    data_dir: str = "data"
    checkpoint: str | None = None
    n_days: int = 80
    train_days: int = 60
    test_days: int = 20
    greedy: bool = False
    bin_width_bps: float = 2.0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: dict = field(default_factory=_train_defaults)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig.from_dict(self.generator)
        bad = set(self.train) & set(_TOP_LEVEL)
        if bad:
            raise ValueError(f"set {sorted(bad)} at the top level, not under 'train'")
        # validate and fill defaults through TrainConfig
        self.train = {**_train_defaults(), **self.train}
        self.train_config()
        if self.n_days < 1 or self.train_days < 1 or self.test_days < 0:
            raise ValueError("n_days and train_days must be positive, test_days nonnegative")
        if not self.bin_width_bps > 0:
            raise ValueError("bin_width_bps must be positive")

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "mode": self.mode, "seed": self.seed})

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "model.ckpt"

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["generator"] = self.generator.to_dict()
        d["train"] = dict(self.train)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "train" in d:
            known_train = {f.name for f in dataclasses.fields(TrainConfig)} - set(_TOP_LEVEL)
            unknown = set(d["train"]) - known_train - set(_TOP_LEVEL)
            if unknown:
                raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ValueError(f"{path}: expected a JSON object")
        return cls.from_dict(d)

    def override(self, **flags) -> "RunConfig":
        """Copy with the non-None flag values applied (flags win over the file)."""
        d = self.to_dict()
        d.update({k: v for k, v in flags.items() if v is not None})
        return RunConfig.from_dict(d)
