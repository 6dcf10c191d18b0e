"""Run records and their append-only JSONL log.

Each line of ``runs/<run_id>/log.jsonl`` is one record::

    {"schema_version": 1, "run_id": ..., "seq": n, "epoch": e, "type": ..., "data": {...}}

``seq`` starts at 0 and increases by one per record. Records carry no
wall-clock timestamps, so a deterministic run produces a byte-identical log.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

from .core import SCHEMA_VERSION, PromptVersion, canonical_json
from .errors import CorruptLogError, RunNotFoundError
from .rewriter import CandidatePrompt, ReplayBuffer, ReplayEntry

LOG_NAME = "log.jsonl"


def config_hash(config: Mapping[str, Any]) -> str:
    """Hash of a config snapshot, ignoring the seed list (seeds are per run)."""
    snapshot = {k: v for k, v in config.items() if k != "seeds"}
    return hashlib.sha256(canonical_json(snapshot).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    incumbent_prompt_id: str
    batch_trajectory_ids: tuple[str, ...]
    feedback_seq: int | None
    candidates: tuple[CandidatePrompt, ...]
    selected_index: int | None
    selected_prompt_id: str
    skipped: bool = False
    kept_incumbent: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "incumbent_prompt_id": self.incumbent_prompt_id,
            "batch_trajectory_ids": list(self.batch_trajectory_ids),
            "feedback_seq": self.feedback_seq,
            "candidates": [c.to_dict() for c in self.candidates],
            "selected_index": self.selected_index,
            "selected_prompt_id": self.selected_prompt_id,
            "skipped": self.skipped,
            "kept_incumbent": self.kept_incumbent,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EpochRecord:
        return cls(d["epoch"], d["incumbent_prompt_id"], tuple(d["batch_trajectory_ids"]),
                   d.get("feedback_seq"),
                   tuple(CandidatePrompt.from_dict(c) for c in d["candidates"]),
                   d.get("selected_index"), d["selected_prompt_id"], d.get("skipped", False),
                   d.get("kept_incumbent", False))


@dataclass
class RunRecord:
    run_id: str
    config: dict[str, Any]
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    training_curve: list[tuple[int, float]] = field(default_factory=list)
    status: str = "running"
    incumbent: PromptVersion | None = None
    buffer: ReplayBuffer = field(default_factory=ReplayBuffer)
    prompts: dict[str, PromptVersion] = field(default_factory=dict)
    last_seq: int = -1

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def completed_epochs(self) -> int:
        return len(self.epochs)


def run_dir(store: str | Path, run_id: str) -> Path:
    return Path(store) / run_id


def log_path(store: str | Path, run_id: str) -> Path:
    return run_dir(store, run_id) / LOG_NAME


def make_record(run_id: str, seq: int, epoch: int, type_: str, data: Mapping[str, Any]) -> dict:
    return {"schema_version": SCHEMA_VERSION, "run_id": run_id, "seq": seq, "epoch": epoch,
            "type": type_, "data": dict(data)}


def append_record(store: str | Path, record: Mapping[str, Any]) -> None:
    """Append one record as a single write followed by fsync."""
    path = log_path(store, record["run_id"])
    path.parent.mkdir(parents=True, exist_ok=True)
    line = (canonical_json(record) + "\n").encode("utf-8")
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, line)
        os.fsync(fd)
    finally:
        os.close(fd)


@dataclass(frozen=True)
class LogContents:
    records: list[dict[str, Any]]
    truncated_tail: bytes = b""
    valid_bytes: int = 0


def read_log(path: Path) -> LogContents:
    """Parse a log, tolerating one incomplete record at the very end."""
    data = path.read_bytes()
    records = []
    offset = 0
    lines = data.split(b"\n")
    for i, line in enumerate(lines):
        is_last = i == len(lines) - 1
        if is_last and not line:
            break
        try:
            if is_last:
                raise ValueError("record has no terminating newline")
            rec = json.loads(line)
        except ValueError:
            if is_last or all(not rest for rest in lines[i + 1:]):
                return LogContents(records, data[offset:], offset)
            raise CorruptLogError(f"{path}: unreadable record at line {i + 1}") from None
        expected = len(records)
        if rec.get("seq") != expected:
            raise CorruptLogError(
                f"{path}: sequence gap, expected seq {expected} but found {rec.get('seq')}")
        records.append(rec)
        offset += len(line) + 1
    return LogContents(records, b"", offset)


def iter_records(store: str | Path, run_id: str) -> Iterator[dict[str, Any]]:
    yield from read_records(store, run_id).records


def read_records(store: str | Path, run_id: str) -> LogContents:
    path = log_path(store, run_id)
    if not path.exists():
        raise RunNotFoundError(f"no run {run_id!r} under {store}")
    return read_log(path)


def replay_state(records: list[Mapping[str, Any]]) -> RunRecord:
    """Rebuild a :class:`RunRecord` (and resumable optimizer state) from log records."""
    if not records or records[0]["type"] != "run_start":
        raise CorruptLogError("log does not begin with a run_start record")
    start = records[0]
    run = RunRecord(run_id=start["run_id"], config=start["data"]["config"],
                    seed=start["data"]["seed"])
    for rec in records:
        data = rec["data"]
        kind = rec["type"]
        if kind == "run_start":
            run.incumbent = PromptVersion.from_dict(data["initial_prompt"])
            run.prompts[run.incumbent.id] = run.incumbent
        elif kind == "baseline":
            run.training_curve.append((0, data["mean"]))
        elif kind == "epoch_summary":
            run.epochs.append(EpochRecord.from_dict(data["record"]))
            run.buffer = ReplayBuffer(run.buffer.entries
                                      + (ReplayEntry.from_dict(data["buffer_entry"]),))
            run.incumbent = PromptVersion.from_dict(data["next_incumbent"])
            run.prompts[run.incumbent.id] = run.incumbent
            run.training_curve.append((rec["epoch"], data["curve_value"]))
        elif kind == "run_complete":
            run.status = "complete"
        elif kind == "awaiting_review":
            run.status = "awaiting_review"
        elif kind == "run_aborted":
            run.status = "aborted"
        run.last_seq = rec["seq"]
    return run


def load_run(store: str | Path, run_id: str) -> RunRecord:
    return replay_state(read_records(store, run_id).records)


def list_runs(store: str | Path) -> list[str]:
    root = Path(store)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / LOG_NAME).exists())


def truncate_log(path: Path, size: int) -> None:
    with open(path, "r+b") as fh:
        fh.truncate(size)
        fh.flush()
        os.fsync(fh.fileno())
