"""Sharded text-to-SQL environment on an embedded SQLite engine.

The user reveals the request one shard per system turn; the episode ends as
soon as the agent commits to a query in a fenced block, or at the turn cap
(number of shards + 3). A task is solved when the committed query's result
matches the reference query's result.
"""

from __future__ import annotations

import re
import sqlite3
from collections import Counter
from dataclasses import dataclass
from typing import Any, Sequence

from ..core import Score, TaskInstance, Trajectory
from ..errors import InvalidArgumentError, SqlExecutionError
from .base import EnvStepResult, Environment, Episode, InitialContext

EXHAUSTED_MESSAGE = "That is everything I can tell you."

# Queries running longer than this many VM steps are aborted.
_MAX_VM_STEPS = 5_000_000

_FENCE = re.compile(r"```([^\n`]*)\n(.*?)```", re.DOTALL)
_STARTS_QUERY = re.compile(r"^\s*(select|with)\b", re.IGNORECASE)


@dataclass(frozen=True)
class ShardedSqlTask:
    id: str
    schema_ddl: str
    shards: tuple[str, ...]
    reference_sql: str

    @classmethod
    def from_payload(cls, task_id: str, payload: dict[str, Any]) -> ShardedSqlTask:
        shards = tuple(payload["shards"])
        if not shards:
            raise InvalidArgumentError(f"task {task_id!r} has no shards")
        return cls(task_id, payload["schema_ddl"], shards, payload["reference_sql"])


def extract_sql(text: str) -> str | None:
    """Return the committed query in an agent response, if any.

    The last fenced block labelled ``sql`` (or unlabelled and starting with
    SELECT/WITH) wins. Without fences, the whole text counts when it starts
    with SELECT/WITH.
    """
    found = None
    for label, body in _FENCE.findall(text):
        label = label.strip().lower()
        body = body.strip()
        if label == "sql" or (not label and _STARTS_QUERY.match(body)):
            found = body
    if found is not None:
        return found or None
    if "```" not in text and _STARTS_QUERY.match(text):
        return text.strip()
    return None


def _connect(schema_ddl: str) -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:")
    try:
        conn.executescript(schema_ddl)
    except sqlite3.Error as exc:
        conn.close()
        raise SqlExecutionError(f"fixture failed to load: {exc}") from exc
    return conn


def exec_query(schema_ddl: str, query: str) -> list[tuple]:
    """Execute ``query`` against a fresh in-memory database built from ``schema_ddl``."""
    conn = _connect(schema_ddl)
    steps = 0

    def guard() -> int:
        nonlocal steps
        steps += 1000
        return 1 if steps > _MAX_VM_STEPS else 0

    conn.set_progress_handler(guard, 1000)
    try:
        return [tuple(row) for row in conn.execute(query).fetchall()]
    except (sqlite3.Error, sqlite3.Warning) as exc:
        raise SqlExecutionError(str(exc)) from exc
    finally:
        conn.close()


def render_schema(schema_ddl: str) -> str:
    """The CREATE statements of a fixture, without its data."""
    conn = _connect(schema_ddl)
    try:
        rows = conn.execute(
            "SELECT sql FROM sqlite_master WHERE sql IS NOT NULL ORDER BY rowid").fetchall()
    finally:
        conn.close()
    return ";\n".join(r[0] for r in rows) + ";"


def _canonical_cell(value: Any) -> tuple:
    if value is None:
        return ("null",)
    if isinstance(value, (int, float)):
        return ("num", float(value))
    if isinstance(value, bytes):
        return ("blob", value)
    return ("text", str(value))


def _strip_literals(sql: str) -> str:
    return re.sub(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"", "''", sql)


def has_top_level_order_by(sql: str) -> bool:
    """True when ORDER BY appears outside any parentheses (string literals ignored)."""
    depth = 0
    outer = []
    for ch in _strip_literals(sql):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(depth - 1, 0)
        elif depth == 0:
            outer.append(ch)
    return re.search(r"\border\s+by\b", "".join(outer), re.IGNORECASE) is not None


def compare_results(candidate: Sequence[Sequence[Any]], reference: Sequence[Sequence[Any]],
                    reference_sql: str) -> bool:
    """Row-multiset equality; row order matters only if the reference is ordered."""
    cand = [tuple(_canonical_cell(c) for c in row) for row in candidate]
    ref = [tuple(_canonical_cell(c) for c in row) for row in reference]
    if has_top_level_order_by(reference_sql):
        return cand == ref
    return Counter(cand) == Counter(ref)


def _normalize_query(sql: str) -> str:
    return " ".join(sql.strip().rstrip(";").split()).lower()


def query_matches(task: ShardedSqlTask, query: str | None, mode: str = "execution") -> bool:
    if query is None:
        return False
    if mode == "string":
        return _normalize_query(query) == _normalize_query(task.reference_sql)
    try:
        got = exec_query(task.schema_ddl, query)
    except SqlExecutionError:
        return False
    return compare_results(got, exec_query(task.schema_ddl, task.reference_sql), task.reference_sql)


class SqlEpisode(Episode):
    def __init__(self, task: ShardedSqlTask, context: InitialContext, extra_turns: int):
        super().__init__(context)
        self.task = task
        self.revealed = 1
        self.max_turns = len(task.shards) + extra_turns

    def _step(self, system_response: str) -> EnvStepResult:
        if extract_sql(system_response) is not None:
            return EnvStepResult("", True, {"reason": "answered"})
        if self.turns_taken >= self.max_turns:
            return EnvStepResult("", True, {"reason": "turn_cap"})
        if self.revealed < len(self.task.shards):
            shard = self.task.shards[self.revealed]
            self.revealed += 1
            return EnvStepResult(shard, False, {"shard_index": str(self.revealed)})
        return EnvStepResult(EXHAUSTED_MESSAGE, False, {"reason": "exhausted"})


class SqlEnvironment(Environment):
    environment_id = "sql"

    def __init__(self, match_mode: str = "execution", extra_turns: int = 3):
        if match_mode not in ("execution", "string"):
            raise InvalidArgumentError(f"unknown match_mode {match_mode!r}")
        self.match_mode = match_mode
        self.extra_turns = extra_turns

    def task(self, task: TaskInstance) -> ShardedSqlTask:
        return ShardedSqlTask.from_payload(task.id, dict(task.payload))

    def _reset(self, task: TaskInstance, seed: int) -> SqlEpisode:
        t = self.task(task)
        ctx = InitialContext(
            system_context="Database schema:\n" + render_schema(t.schema_ddl),
            first_user_message=t.shards[0],
        )
        return SqlEpisode(t, ctx, self.extra_turns)

    def final_query(self, trajectory: Trajectory) -> str | None:
        for turn in reversed(trajectory.turns):
            q = extract_sql(turn.system_response)
            if q is not None:
                return q
        return None

    def _judge(self, task: TaskInstance, trajectory: Trajectory, prompt_text: str) -> Score:
        ok = query_matches(self.task(task), self.final_query(trajectory), self.match_mode)
        return Score("functional_accuracy", 1.0 if ok else 0.0)

    def validate_task(self, task: TaskInstance) -> list[str]:
        try:
            t = self.task(task)
        except (KeyError, TypeError, InvalidArgumentError) as exc:
            return [f"task {task.id!r}: malformed payload ({exc})"]
        try:
            exec_query(t.schema_ddl, t.reference_sql)
        except SqlExecutionError as exc:
            return [f"task {task.id!r}: reference_sql fails: {exc}"]
        return []
