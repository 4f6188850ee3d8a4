"""Access to the JSON scenario fixtures shipped with the package."""

from __future__ import annotations

import json
from importlib import resources


def list_fixtures() -> list:
    root = resources.files(__package__) / "fixtures"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def fixture_text(name: str) -> str:
    return (resources.files(__package__) / "fixtures" / name).read_text()


def load_fixture(name: str) -> dict:
    return json.loads(fixture_text(name))
