"""Experiment configuration read from a sectioned INI file.

Each section maps onto one dataclass; keys are the dataclass field names.
Unknown sections and keys are rejected together in a single error so a
typo-riddled file is fixed in one pass.
"""

from __future__ import annotations

import configparser
import os
import typing
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import List, Optional, Tuple

from .attack import AttackConfig, RegionSearchConfig
from .data import FAMILIES
from .defense import ATTACK_KINDS, DefenseSpec
from .hardening import HardeningConfig

OUTPUT_ENV = "SHAPEADV_OUTPUT"


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending entry."""

    def __init__(self, problems: List[str], source: str = "<config>"):
        self.problems = list(problems)
        super().__init__(f"{source}: " + "; ".join(self.problems))


@dataclass
class DatasetConfig:
    families: Tuple[str, ...] = FAMILIES
    m: int = 1024
    jitter: float = 0.01
    variation: float = 1.0
    train_per_class: int = 30
    test_per_class: int = 10
    seed: int = 0

    def validate(self):
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ValueError(f"unknown families {bad}")
        if self.m < 64 or self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("need m >= 64 and positive per-class counts")
        return self


@dataclass
class TrainingConfig:
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 16
    momentum: float = 0.9
    decay_every: int = 10
    seed: int = 0
    adversarial: bool = False
    at_budget: float = 1.0
    at_steps: int = 5

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        return self


@dataclass
class EvaluationConfig:
    attacks: Tuple[str, ...] = ("hit_adv", "ifgm")
    ifgm_budget: float = 1.0
    ifgm_steps: int = 10
    limit: Optional[int] = None

    def validate(self):
        bad = [a for a in self.attacks if a not in ATTACK_KINDS]
        if bad:
            raise ValueError(f"unknown attacks {bad}")
        if self.ifgm_budget < 0 or self.ifgm_steps < 1:
            raise ValueError("ifgm_budget must be >= 0 and ifgm_steps >= 1")
        return self


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    region: Optional[RegionSearchConfig] = None
    hardening: HardeningConfig = field(default_factory=HardeningConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    defenses: List[DefenseSpec] = field(default_factory=lambda: [DefenseSpec("none")])
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.region is None:
            self.region = RegionSearchConfig.for_points(self.dataset.m)

    @property
    def out(self) -> str:
        return self.output_dir or os.environ.get(OUTPUT_ENV) or "shapeadv_out"


_SECTIONS = {
    "dataset": DatasetConfig,
    "training": TrainingConfig,
    "attack": AttackConfig,
    "region": RegionSearchConfig,
    "hardening": HardeningConfig,
    "evaluation": EvaluationConfig,
}


def _convert(raw: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw.strip().lower() in ("", "none"):
            return None
        return _convert(raw, next(a for a in args if a is not type(None)))
    if origin in (tuple, list):
        items = tuple(s.strip() for s in raw.replace("\n", ",").split(",") if s.strip())
        return items
    if tp is bool:
        low = raw.strip().lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw.strip()


def _build(cls, items, where, problems):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, raw in items:
        if key not in names:
            problems.append(f"unknown key '{key}' in [{where}]")
            continue
        try:
            kwargs[key] = _convert(raw, hints[key])
        except ValueError as exc:
            problems.append(f"bad value for '{key}' in [{where}]: {exc}")
    try:
        obj = cls(**kwargs)
        if hasattr(obj, "validate"):
            obj.validate()
        return obj
    except (TypeError, ValueError) as exc:
        problems.append(f"[{where}]: {exc}")
        return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError([str(exc).splitlines()[0]], source) from exc
    problems: List[str] = []
    built = {}
    defenses = []
    output_dir = None
    for section in parser.sections():
        items = list(parser.items(section))
        if section in _SECTIONS:
            built[section] = _build(_SECTIONS[section], items, section, problems)
        elif section.startswith("defense:"):
            kind = section.split(":", 1)[1].strip()
            spec = _build(DefenseSpec, [("kind", kind)] + items, section, problems)
            if spec is not None:
                defenses.append(spec)
        elif section == "output":
            for key, raw in items:
                if key == "dir":
                    output_dir = raw.strip() or None
                else:
                    problems.append(f"unknown key '{key}' in [output]")
        else:
            problems.append(f"unknown section [{section}]")
    if problems:
        raise ConfigError(problems, source)
    cfg = ExperimentConfig(**{k: v for k, v in built.items()}, output_dir=output_dir)
    if defenses:
        cfg.defenses = defenses
    return cfg


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    """Read ``path``, or the bundled mini-config when ``path`` is None."""
    if path is None:
        text = resources.files("shapeadv").joinpath("configs/mini.cfg").read_text()
        return parse_config(text, "mini.cfg")
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read(), path)


def bundled_config_text() -> str:
    return resources.files("shapeadv").joinpath("configs/mini.cfg").read_text()
