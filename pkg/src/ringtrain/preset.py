"""Access to the JSON presets shipped inside the package."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .harness.compute import ComputeProfile, ThermalModel
from .transport.net import NetProfile

PRESET_NAMES = ("ethernet", "wifi5", "thermal_s10", "compute_s10")


def preset_path(name: str) -> Path:
    filename = name if name.endswith(".json") else f"{name}.json"
    path = resources.files("ringtrain").joinpath("presets").joinpath(filename)
    return Path(str(path))


def _resolve(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    return preset_path(str(name_or_path))


def load_net(name_or_path: str | Path) -> NetProfile:
    return NetProfile(**json.loads(_resolve(name_or_path).read_text()))


def load_compute(name_or_path: str | Path = "compute_s10") -> ComputeProfile:
    return ComputeProfile(**json.loads(_resolve(name_or_path).read_text()))


def load_thermal(name_or_path: str | Path = "thermal_s10") -> tuple[ThermalModel, dict]:
    """Returns (ThermalModel, scenario defaults such as baseline/idle/fan)."""
    data = json.loads(_resolve(name_or_path).read_text())
    model = ThermalModel(ambient=data["ambient"], heat_rate=data["heat_rate"],
                         cool_rate=data["cool_rate"],
                         tiers=[tuple(t) for t in data["tiers"]])
    scenario = {k: v for k, v in data.items()
                if k in ("baseline_t_comp_s", "idle_s", "fan_cool_multiplier")}
    return model, scenario
