"""Flat key=value run configuration.

One namespace merges the model, training, and labeling settings plus
dataset selection. Precedence: built-in defaults < config file <
explicit overrides (command-line flags). Unknown keys are errors.

Seven presets ship under ``intent/presets`` (eth, hotel, univ, zara1,
zara2, sdd, kitti), one per benchmark configuration.
"""

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Dict, Optional

from .model import ModelConfig
from .trajectory import LabelingThresholds
from .training import TrainingConfig


class ConfigError(ValueError):
    """Bad key, value, or file syntax in a run configuration."""


_SECTIONS = (("model", ModelConfig), ("training", TrainingConfig),
             ("thresholds", LabelingThresholds))

_EXTRA_KEYS = {"dataset": str, "scene": str}

_BOOL_TRUE = ("true", "1", "yes", "y", "on")
_BOOL_FALSE = ("false", "0", "no", "n", "off")


def _field_types() -> Dict[str, type]:
    out: Dict[str, type] = {}
    for _, cls in _SECTIONS:
        for f in fields(cls):
            if f.name in out:
                raise AssertionError(f"duplicate config key {f.name}")
            out[f.name] = f.type
    out.update(_EXTRA_KEYS)
    return out


_TYPES = _field_types()


def _type_name(t) -> str:
    if isinstance(t, str):
        return t
    name = getattr(t, "__name__", None)
    return name if name is not None else str(t)


def _coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key '{key}'")
    t_name = _type_name(_TYPES[key])
    try:
        if t_name == "bool":
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(f"not a boolean: '{raw}'")
        if t_name == "int":
            return int(raw)
        if t_name == "float":
            return float(raw)
        if "Optional[int]" in t_name:
            return None if raw.lower() == "none" else int(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {exc}") from exc


def parse_config_file(path) -> Dict[str, object]:
    """Read a key=value file ('#' comments) into typed values."""
    out: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            out[key] = _coerce(key, raw.strip())
    return out


@dataclass
class RunConfig:
    model: ModelConfig
    training: TrainingConfig
    thresholds: LabelingThresholds
    dataset: str = "ethucy"
    scene: Optional[str] = None


def build_run_config(config_file=None,
                     overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Merge defaults, optional config file, and explicit overrides."""
    merged: Dict[str, object] = {}
    if config_file is not None:
        merged.update(parse_config_file(config_file))
    for key, val in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        if val is not None:
            merged[key] = val

    kwargs = {name: {} for name, _ in _SECTIONS}
    extra: Dict[str, object] = {}
    section_of = {}
    for name, cls in _SECTIONS:
        for f in fields(cls):
            section_of[f.name] = name
    for key, val in merged.items():
        if key in section_of:
            kwargs[section_of[key]][key] = val
        else:
            extra[key] = val
    try:
        model = ModelConfig(**kwargs["model"])
        training = TrainingConfig(**kwargs["training"])
        thresholds = LabelingThresholds(**kwargs["thresholds"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dataset = extra.get("dataset", "ethucy")
    if dataset not in ("ethucy", "sdd", "kitti"):
        raise ConfigError(f"unknown dataset '{dataset}'")
    return RunConfig(model=model, training=training, thresholds=thresholds,
                     dataset=dataset, scene=extra.get("scene"))


def preset_path(name: str) -> Path:
    """Filesystem path of a shipped preset (``eth``, ``hotel``, ``univ``,
    ``zara1``, ``zara2``, ``sdd``, ``kitti``)."""
    base = resources.files("intent") / "presets" / f"{name}.cfg"
    path = Path(str(base))
    if not path.exists():
        raise ConfigError(f"no preset named '{name}' (have {available_presets()})")
    return path


def available_presets():
    base = Path(str(resources.files("intent") / "presets"))
    return sorted(p.stem for p in base.glob("*.cfg"))
