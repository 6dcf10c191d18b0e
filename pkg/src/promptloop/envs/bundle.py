"""Task bundles: a manifest, one JSON file per task, optional entity databases.

Layout::

    bundle/
      manifest.json   {"schema_version": 1, "environment_id": "sql",
                       "tasks_dir": "tasks",
                       "splits": {"train": [...], "validation": [...], "test": [...]}}
      tasks/*.json    one task object (or a list of them) per file
      *.json          entity databases referenced by dialogue tasks' "db_ref"

Task objects carry an ``id``; every other key is the environment payload.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from ..core import SPLITS, TaskInstance
from ..errors import BundleValidationError
from .base import Environment
from .dialogue import DialogueEnvironment, EntityDb
from .keyword import KeywordEnvironment
from .sql import SqlEnvironment

ENVIRONMENT_IDS = ("sql", "dialogue", "keyword")


@dataclass(frozen=True)
class TaskBundle:
    root: Path | None
    environment_id: str
    tasks: Mapping[str, TaskInstance]
    entity_dbs: Mapping[str, EntityDb]

    def split(self, name: str) -> list[TaskInstance]:
        return [t for t in self.tasks.values() if t.split == name]

    def index(self) -> dict[str, Any]:
        return {"environment_id": self.environment_id,
                "splits": {s: [t.id for t in self.split(s)] for s in SPLITS}}


def make_environment(bundle: TaskBundle, **options: Any) -> Environment:
    if bundle.environment_id == "sql":
        return SqlEnvironment(**options)
    if bundle.environment_id == "dialogue":
        return DialogueEnvironment(bundle.entity_dbs, **options)
    if bundle.environment_id == "keyword":
        return KeywordEnvironment()
    raise BundleValidationError([f"unknown environment_id {bundle.environment_id!r}"])


def _read_json(path: Path, problems: list[str]) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        problems.append(f"{path}: {exc}")
        return None


def load_bundle(path: str | Path) -> TaskBundle:
    """Load and validate a bundle; raises :class:`BundleValidationError` listing every problem."""
    root = Path(path)
    problems: list[str] = []
    manifest = _read_json(root / "manifest.json", problems)
    if manifest is None:
        raise BundleValidationError(problems)
    env_id = manifest.get("environment_id")
    if env_id not in ENVIRONMENT_IDS:
        raise BundleValidationError([f"unknown environment_id {env_id!r}"])

    raw: list[dict[str, Any]] = []
    for file in sorted((root / manifest.get("tasks_dir", "tasks")).glob("*.json")):
        doc = _read_json(file, problems)
        if doc is None:
            continue
        for item in doc if isinstance(doc, list) else [doc]:
            if not isinstance(item, dict) or "id" not in item:
                problems.append(f"{file}: task without an id")
            else:
                raw.append(item)

    dbs: dict[str, EntityDb] = {}
    for item in raw:
        ref = item.get("db_ref")
        if ref and ref not in dbs:
            doc = _read_json(root / ref, problems)
            if doc is not None:
                try:
                    dbs[ref] = EntityDb(doc)
                except ValueError as exc:
                    problems.append(f"{ref}: {exc}")

    return build_bundle(env_id, raw, manifest.get("splits", {}), dbs, root, problems)


def build_bundle(environment_id: str, raw_tasks: list[Mapping[str, Any]],
                 splits: Mapping[str, list[str]], entity_dbs: Mapping[str, EntityDb] | None = None,
                 root: Path | None = None, problems: list[str] | None = None) -> TaskBundle:
    """Assemble and validate a bundle from in-memory task documents."""
    problems = list(problems or [])
    ids = Counter(t["id"] for t in raw_tasks)
    dupes = sorted(i for i, n in ids.items() if n > 1)
    if dupes:
        problems.append("duplicate task ids: " + ", ".join(dupes))

    assigned: dict[str, str] = {}
    for split, members in splits.items():
        if split not in SPLITS:
            problems.append(f"unknown split {split!r}")
            continue
        for tid in members:
            if tid in assigned:
                problems.append(f"task {tid!r} assigned to both {assigned[tid]} and {split}")
            elif tid not in ids:
                problems.append(f"split {split} lists unknown task {tid!r}")
            assigned.setdefault(tid, split)
    for tid in ids:
        if tid not in assigned:
            problems.append(f"task {tid!r} has no split")
    if problems:
        raise BundleValidationError(problems)

    tasks = {}
    for t in raw_tasks:
        payload = {k: v for k, v in t.items() if k != "id"}
        tasks[t["id"]] = TaskInstance(t["id"], environment_id, payload, assigned[t["id"]])
    bundle = TaskBundle(root, environment_id, tasks, dict(entity_dbs or {}))
    env = make_environment(bundle)
    for task in tasks.values():
        problems.extend(env.validate_task(task))
    if problems:
        raise BundleValidationError(problems)
    return bundle
