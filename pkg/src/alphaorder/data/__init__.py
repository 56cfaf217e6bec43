"""Shipped data files: the authored default geometry and demand presets."""

from __future__ import annotations

import os

_HERE = os.path.dirname(__file__)


def default_geometry_path() -> str:
    return os.path.join(_HERE, "geometry_default.json")


def demand_presets_path() -> str:
    return os.path.join(_HERE, "demand_presets.json")
