# src/presets.py
from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable

from .params import ConfigError, ProtocolParams, load_config

ROOT = Path(__file__).resolve().parent

PRESETS: Dict[str, str] = {
    "dark-fibre": "dark_fibre.json",
    "multiplexed": "multiplexed.json",
}
DEFAULT_PRESET = "dark-fibre"


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError([f"--preset: unknown preset (observed={name!r}, known={sorted(PRESETS)})"])
    return ROOT / PRESETS[name]


def load_preset(name: str = DEFAULT_PRESET, overrides: Iterable[str] = ()) -> ProtocolParams:
    return load_config(preset_path(name), overrides)
