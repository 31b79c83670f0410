"""Bundled desk-scale scenario fixtures and the batch evaluation suite."""
from __future__ import annotations

import importlib.resources as resources

from ..world import Scenario, load_scenario

_CACHE: dict[str, Scenario] = {}


def bundled_scenario_text(name: str) -> str:
    ref = resources.files(__package__).joinpath(f"{name}.yaml")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return ref.read_text(encoding="utf-8")


def bundled_scenario(name: str) -> Scenario:
    if name not in _CACHE:
        _CACHE[name] = load_scenario(bundled_scenario_text(name))
    return _CACHE[name]


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).iterdir()
                  if p.name.endswith(".yaml"))
