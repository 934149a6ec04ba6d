"""Run settings: defaults, dataset presets and TOML/JSON config files."""
from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import probmap
from .errors import ValidationError
from .filtering import FilterConfig

PRESETS = ("totaltext", "ctw1500", "td500", "mlt", "icdar15")

# config-file spellings accepted for each setting
_ALIASES = {"beta_a": "min_area", "filter_mode": "filter", "mode": "filter", "iou_threshold": "iou"}


@dataclass
class Settings:
    k: int = probmap.DEFAULT_K
    n: int = probmap.DEFAULT_N
    weights: tuple | None = None
    gamma: float = 3.0
    lambdas: tuple | None = None
    th_b: float = 0.3
    th_e: float = 0.65
    min_area: int = 300
    filter: str = "threshold"
    grow: str = "pse"
    boundary: str = "polygon"
    epsilon: float = 1.0
    iou: float = 0.5

    def schedule(self) -> probmap.AlphaSchedule:
        return probmap.make_schedule(self.k, self.n, self.weights)

    def filter_config(self) -> FilterConfig:
        mode = self.filter if self.filter != "none" else "threshold"
        return FilterConfig(self.th_b, self.th_e, self.min_area, mode)

    def loss_config(self) -> probmap.LossConfig:
        return probmap.LossConfig(self.lambdas, self.gamma)

    def update(self, values: dict) -> "Settings":
        names = {f.name for f in dataclasses.fields(self)}
        for key, value in values.items():
            key = _ALIASES.get(key, key)
            if key not in names:
                raise ValidationError(f"unknown setting {key!r}")
            if key in ("weights", "lambdas") and value is not None:
                value = tuple(float(v) for v in value)
            setattr(self, key, value)
        return self


def load_presets() -> dict:
    text = resources.files("pmtext").joinpath("presets.json").read_text()
    return json.loads(text)


def preset_values(name: str, filter_mode: str = "threshold") -> dict:
    presets = load_presets()
    if name not in presets:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    entry = presets[name]
    mode = "voting" if filter_mode == "voting" else "threshold"
    out = {"boundary": entry["boundary"]}
    out.update(entry[mode])
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode())
        return json.loads(raw)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: invalid config: {exc}") from exc


def thread_cap(requested: int | None = None) -> int:
    """Worker count, capped by the ``PMAP_THREADS`` environment variable."""
    env = os.environ.get("PMAP_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"PMAP_THREADS must be an integer, got {env!r}") from exc
    if requested is None:
        return cap
    return max(1, min(int(requested), cap))
