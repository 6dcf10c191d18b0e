"""Meta-prompt templates shipped with the package.

Each template is a plain text file; rewriter templates use ``str.format``
placeholders ``{history}``, ``{current_prompt}``, ``{feedback}`` and
``{epoch}``. Any template can be replaced by a file of the same shape.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Mapping

NAMES = ("td_turn", "td_summary", "mc_trajectory", "binary_label", "aggregate",
         "rewrite_basic", "rewrite_replay", "prompt_writer")


def load(name: str, overrides: Mapping[str, str | Path] | None = None) -> str:
    if overrides and name in overrides:
        return Path(overrides[name]).read_text(encoding="utf-8")
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
