"""Shared domain vocabulary: prompts, messages, turns, trajectories, tasks.

Every type here is a frozen dataclass with a ``to_dict``/``from_dict`` pair.
:func:`dumps` produces the canonical serialization (sorted keys, compact
separators, UTF-8) and tags every document with its type name and a
``schema_version``; :func:`loads` reverses it.

Prompt ids are the SHA-256 hex digest of the UTF-8 encoding of the exact
prompt string. No whitespace or Unicode normalization is applied.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import InvalidArgumentError

SCHEMA_VERSION = 1

PROVENANCES = ("seed_expert", "seed_generated", "rewritten")
ROLES = ("system", "user", "assistant", "tool")
SCORE_KINDS = ("success_binary", "functional_accuracy", "scalar")
SPLITS = ("train", "validation", "test")


def prompt_id(text: str) -> str:
    """Return the content hash of a prompt text.

    >>> prompt_id("a") == prompt_id("a")
    True
    """
    if not isinstance(text, str) or not text:
        raise InvalidArgumentError("prompt text must be a non-empty string")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidArgumentError(message)


@dataclass(frozen=True)
class PromptVersion:
    """An instruction prompt at a given epoch, with lineage."""

    id: str
    epoch: int
    text: str
    provenance: str
    parent_id: str | None = None

    def __post_init__(self) -> None:
        _check(self.epoch >= 1, "epoch must be >= 1")
        _check(self.provenance in PROVENANCES, f"unknown provenance {self.provenance!r}")
        _check(self.id == prompt_id(self.text), "id does not match text hash")
        if self.provenance == "rewritten":
            _check(self.parent_id is not None, "rewritten prompts need a parent_id")
        else:
            _check(self.parent_id is None, "seed prompts have no parent_id")
            _check(self.epoch == 1, "seed prompts belong to epoch 1")

    @classmethod
    def seed(cls, text: str, provenance: str = "seed_expert") -> PromptVersion:
        return cls(id=prompt_id(text), epoch=1, text=text, provenance=provenance)

    @classmethod
    def rewritten(cls, text: str, epoch: int, parent: PromptVersion) -> PromptVersion:
        return cls(id=prompt_id(text), epoch=epoch, text=text,
                   provenance="rewritten", parent_id=parent.id)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "epoch": self.epoch, "text": self.text,
                "parent_id": self.parent_id, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PromptVersion:
        return cls(id=d["id"], epoch=d["epoch"], text=d["text"],
                   provenance=d["provenance"], parent_id=d.get("parent_id"))


def lineage_root(prompt: PromptVersion, registry: Mapping[str, PromptVersion]) -> PromptVersion:
    """Follow ``parent_id`` links back to the seed prompt."""
    seen = set()
    current = prompt
    while current.parent_id is not None:
        if current.id in seen:
            raise InvalidArgumentError("prompt lineage contains a cycle")
        seen.add(current.id)
        try:
            current = registry[current.parent_id]
        except KeyError:
            raise InvalidArgumentError(f"unknown parent prompt {current.parent_id}") from None
    return current


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        _check(self.role in ROLES, f"unknown role {self.role!r}")
        if self.role in ("user", "assistant"):
            _check(bool(self.content), f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ChatMessage:
        return cls(role=d["role"], content=d["content"])


@dataclass(frozen=True)
class ApiCall:
    """A structured call emitted by the system agent, e.g. a database lookup."""

    name: str
    arguments: Mapping[str, str] = field(default_factory=dict)

    def render(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.arguments.items())
        return f"{self.name}({args})"

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "arguments": dict(self.arguments)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ApiCall:
        return cls(name=d["name"], arguments=dict(d.get("arguments", {})))


@dataclass(frozen=True)
class Turn:
    """One user utterance followed by one system response."""

    index: int
    user_utterance: str
    system_response: str
    api_call: ApiCall | None = None
    api_result: str | None = None
    terminal: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "user_utterance": self.user_utterance,
            "system_response": self.system_response,
            "api_call": self.api_call.to_dict() if self.api_call else None,
            "api_result": self.api_result,
            "terminal": self.terminal,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Turn:
        call = d.get("api_call")
        return cls(
            index=d["index"],
            user_utterance=d["user_utterance"],
            system_response=d["system_response"],
            api_call=ApiCall.from_dict(call) if call else None,
            api_result=d.get("api_result"),
            terminal=d.get("terminal", False),
        )


@dataclass(frozen=True)
class Score:
    kind: str
    value: float

    def __post_init__(self) -> None:
        _check(self.kind in SCORE_KINDS, f"unknown score kind {self.kind!r}")
        _check(0.0 <= self.value <= 1.0, f"score value {self.value} outside [0, 1]")
        if self.kind == "success_binary":
            _check(self.value in (0.0, 1.0), "success_binary scores must be 0.0 or 1.0")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "value": float(self.value)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Score:
        return cls(kind=d["kind"], value=float(d["value"]))


@dataclass(frozen=True)
class Trajectory:
    id: str
    prompt_id: str
    environment_id: str
    task_instance_id: str
    turns: tuple[Turn, ...]
    seed: int
    goal_text: str | None = None
    outcome: Score | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "prompt_id": self.prompt_id,
            "environment_id": self.environment_id,
            "task_instance_id": self.task_instance_id,
            "goal_text": self.goal_text,
            "turns": [t.to_dict() for t in self.turns],
            "outcome": self.outcome.to_dict() if self.outcome else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Trajectory:
        outcome = d.get("outcome")
        return cls(
            id=d["id"],
            prompt_id=d["prompt_id"],
            environment_id=d["environment_id"],
            task_instance_id=d["task_instance_id"],
            goal_text=d.get("goal_text"),
            turns=tuple(Turn.from_dict(t) for t in d["turns"]),
            outcome=Score.from_dict(outcome) if outcome else None,
            seed=d["seed"],
        )

    @property
    def complete(self) -> bool:
        return bool(self.turns) and self.turns[-1].terminal


@dataclass(frozen=True)
class TaskInstance:
    id: str
    environment_id: str
    payload: Mapping[str, Any]
    split: str

    def __post_init__(self) -> None:
        _check(self.split in SPLITS, f"unknown split {self.split!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "environment_id": self.environment_id,
                "payload": dict(self.payload), "split": self.split}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TaskInstance:
        return cls(id=d["id"], environment_id=d["environment_id"],
                   payload=dict(d["payload"]), split=d["split"])


def validate_trajectory(t: Trajectory) -> list[str]:
    """List every invariant the trajectory violates; empty when well formed."""
    problems: list[str] = []
    for position, turn in enumerate(t.turns, start=1):
        if turn.index != position:
            problems.append(f"turn index gap at position {position}")
            break
    terminals = [turn for turn in t.turns if turn.terminal]
    if len(terminals) > 1:
        problems.append("multiple terminal turns")
    elif terminals and not t.turns[-1].terminal:
        problems.append("terminal turn is not the last turn")
    for turn in t.turns:
        if turn.api_result is not None and turn.api_call is None:
            problems.append(f"turn {turn.index}: api_result without api_call")
    if t.outcome is not None and not terminals:
        problems.append("outcome set before a terminal turn exists")
    return problems


_TYPES: dict[str, type] = {
    cls.__name__: cls
    for cls in (PromptVersion, ChatMessage, ApiCall, Turn, Score, Trajectory, TaskInstance)
}


def register_type(cls: type) -> type:
    """Make a type with ``to_dict``/``from_dict`` serializable via :func:`dumps`."""
    _TYPES[cls.__name__] = cls
    return cls


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def to_document(obj: Any) -> dict[str, Any]:
    name = type(obj).__name__
    if name not in _TYPES:
        raise InvalidArgumentError(f"{name} is not a serializable type")
    return {"type": name, "schema_version": SCHEMA_VERSION, "data": obj.to_dict()}


def from_document(doc: Mapping[str, Any]) -> Any:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidArgumentError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        cls = _TYPES[doc["type"]]
    except KeyError:
        raise InvalidArgumentError(f"unknown document type {doc.get('type')!r}") from None
    return cls.from_dict(doc["data"])


def dumps(obj: Any) -> str:
    return canonical_json(to_document(obj))


def loads(text: str) -> Any:
    return from_document(json.loads(text))
