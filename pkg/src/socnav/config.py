"""Experiment configuration files.

One flat, human-readable `key = value` file defines an experiment: scenario,
training hyperparameters, and network architecture, with keys mirroring the
corresponding dataclass field names. Paths and seeds stay on the command line
so config files are reusable and diffable. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigurationError
from .model import ValueNetConfig
from .sim import ScenarioConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    net: ValueNetConfig = field(default_factory=ValueNetConfig)

    def sections(self):
        return (("scenario", self.scenario), ("train", self.train),
                ("net", self.net))


def _field_map(cfg: RunConfig) -> dict[str, tuple[object, object]]:
    """key -> (section object, dataclass field); keys are globally unique."""
    out: dict[str, tuple[object, object]] = {}
    for _, section in cfg.sections():
        for f in fields(section):
            if f.name in out:
                raise ConfigurationError(f"duplicate config key {f.name}")
            out[f.name] = (section, f)
    return out


def _parse_value(raw: str, annotation: str, key: str):
    raw = raw.strip()
    if annotation == "bool":
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if annotation == "int":
            return int(raw)
        if annotation == "float":
            return float(raw)
        if annotation.startswith("tuple[int"):
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if annotation.startswith("tuple[float"):
            return tuple(float(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{key}: {exc}") from exc
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse `key = value` lines ('#' comments); unknown keys are errors."""
    cfg = base if base is not None else RunConfig()
    mapping = _field_map(cfg)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in mapping:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        section, f = mapping[key]
        annotation = f.type if isinstance(f.type, str) else getattr(
            f.type, "__name__", str(f.type))
        setattr(section, f.name, _parse_value(raw, annotation, key))
    # re-validate invariants the dataclasses enforce on construction
    type(cfg.scenario)(**vars(cfg.scenario))
    type(cfg.train)(**vars(cfg.train))
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = []
    for title, section in cfg.sections():
        lines.append(f"# {title}")
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_config(text)
