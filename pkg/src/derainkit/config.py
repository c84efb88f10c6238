"""Run configuration: plain-text key=value files with typed validation.

A config file holds dotted keys (`mask.patch_size=9`, `rl.gamma=0.95`,
`synth.count=60`, `scorer.path=...`) plus the global `seed`, which drives
every stochastic subsystem. Unknown keys are rejected; values are
validated by the owning dataclass as soon as they are parsed. Serializing
a config echoes every effective value, defaults included, so
parse(serialize(cfg)) reproduces cfg exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace

from .agent import TrainConfig
from .rainmask import MaskConfig


class ConfigError(ValueError):
    """Unknown key, bad value type, or violated invariant in a config."""


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic rain-streak overlay parameters.

    Streaks are additive bright segments: `count` segments of roughly
    `length` pixels and `width` pixels across, tilted `angle` degrees from
    vertical (jittered), brightening by up to `intensity`.
    """

    count: int = 60
    length: float = 12.0
    width: int = 1
    intensity: float = 0.25
    angle: float = 10.0
    angle_jitter: float = 6.0
    length_jitter: float = 0.3
    intensity_jitter: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.count < 0 or self.width < 1 or self.length <= 0:
            raise ValueError("count >= 0, width >= 1, length > 0 required")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in (0, 1], got {self.intensity}")
        if self.angle_jitter < 0 or not 0 <= self.length_jitter < 1 or not 0 <= self.intensity_jitter < 1:
            raise ValueError("jitters must be nonnegative (fractional jitters < 1)")


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline, one global seed."""

    seed: int = 0
    scorer_path: str = ""  # empty = packaged default model
    mask: MaskConfig = field(default_factory=MaskConfig)
    rl: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_SECTIONS = {"mask": MaskConfig, "rl": TrainConfig, "synth": SynthConfig}


def _registry() -> dict[str, tuple[str, str, type]]:
    """key -> (section attr, field name, value type)."""
    reg: dict[str, tuple[str, str, type]] = {
        "seed": ("", "seed", int),
        "scorer.path": ("", "scorer_path", str),
    }
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name == "seed":
                continue  # driven by the global seed
            reg[f"{section}.{f.name}"] = (section, f.name, _field_type(f))
    return reg


def _field_type(f) -> type:
    mapping = {"int": int, "float": float, "str": str}
    if isinstance(f.type, type):
        return f.type
    return mapping[f.type]


def _convert(raw: str, typ: type, key: str):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse key=value lines ('#' comments) on top of `base` (or defaults)."""
    reg = _registry()
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in reg:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        _section, _name, typ = reg[key]
        values[key] = _convert(raw, typ, key)
    return _apply(base or RunConfig(), values)


def _apply(base: RunConfig, values: dict[str, object]) -> RunConfig:
    reg = _registry()
    top: dict[str, object] = {}
    per_section: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for key, value in values.items():
        section, name, _typ = reg[key]
        if section:
            per_section[section][name] = value
        else:
            top[name] = value

    seed = int(top.get("seed", base.seed))
    try:
        mask = replace(base.mask, seed=seed, **per_section["mask"])
        rl = replace(base.rl, seed=seed, **per_section["rl"])
        synth = replace(base.synth, seed=seed, **per_section["synth"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        seed=seed,
        scorer_path=str(top.get("scorer_path", base.scorer_path)),
        mask=mask,
        rl=rl,
        synth=synth,
    )


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply CLI `key=value` overrides on top of a parsed config."""
    reg = _registry()
    values: dict[str, object] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in reg:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(raw, reg[key][2], key)
    return _apply(cfg, values)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return _apply(cfg, {"seed": seed})


def config_text(cfg: RunConfig) -> str:
    """Serialize every effective value (round-trips through parse_config)."""
    lines = [f"seed={cfg.seed}", f"scorer.path={cfg.scorer_path}"]
    for section, sub in (("mask", cfg.mask), ("rl", cfg.rl), ("synth", cfg.synth)):
        for f in dataclasses.fields(sub):
            if f.name == "seed":
                continue
            value = getattr(sub, f.name)
            lines.append(f"{section}.{f.name}={value!r}" if isinstance(value, float) else f"{section}.{f.name}={value}")
    return "\n".join(sorted(lines)) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
