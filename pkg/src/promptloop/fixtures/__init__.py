"""Small task bundles shipped with the package (sql, dialogue, keyword)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

NAMES = ("sql", "dialogue", "keyword")


def bundle_path(name: str) -> Path:
    if name not in NAMES:
        raise ValueError(f"unknown fixture bundle {name!r}; expected one of {NAMES}")
    return Path(str(resources.files(__name__).joinpath(name)))
