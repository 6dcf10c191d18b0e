"""Human review: an expert writes the feedback for an epoch's batch.

Records live next to the run log in ``human_feedback.jsonl``. Amending an
epoch appends a new record that supersedes the previous one; both are kept.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .core import SCHEMA_VERSION, Trajectory, canonical_json
from .errors import StateError
from .feedback import EpochFeedback, SignalSet, TrajectoryFeedback, render_signals

FILE_NAME = "human_feedback.jsonl"


@dataclass(frozen=True)
class HumanFeedbackRecord:
    run_id: str
    epoch: int
    reviewer: str
    trajectory_ids: tuple[str, ...]
    feedback_texts: tuple[str, ...]
    aggregate_text: str
    timestamp: str
    revision: int = 0
    superseded: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, "run_id": self.run_id, "epoch": self.epoch,
                "reviewer": self.reviewer, "trajectory_ids": list(self.trajectory_ids),
                "feedback_texts": list(self.feedback_texts),
                "aggregate_text": self.aggregate_text, "timestamp": self.timestamp,
                "revision": self.revision}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> HumanFeedbackRecord:
        return cls(d["run_id"], d["epoch"], d["reviewer"], tuple(d["trajectory_ids"]),
                   tuple(d["feedback_texts"]), d["aggregate_text"], d["timestamp"],
                   d.get("revision", 0))

    def as_epoch_feedback(self) -> EpochFeedback:
        per_traj = tuple(TrajectoryFeedback(tid, "human", text)
                         for tid, text in zip(self.trajectory_ids, self.feedback_texts))
        return EpochFeedback(self.epoch, "human", self.aggregate_text, self.trajectory_ids,
                             per_traj)


def load_records(run_path: str | Path) -> list[HumanFeedbackRecord]:
    """All records, with ``superseded`` set on every revision but the newest."""
    path = Path(run_path) / FILE_NAME
    if not path.exists():
        return []
    records = [HumanFeedbackRecord.from_dict(json.loads(line))
               for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    latest: dict[tuple[int, str], int] = {}
    for r in records:
        key = (r.epoch, r.reviewer)
        latest[key] = max(latest.get(key, -1), r.revision)
    out = []
    for r in records:
        stale = r.revision < latest[(r.epoch, r.reviewer)]
        out.append(HumanFeedbackRecord(**{**r.__dict__, "superseded": stale}))
    return out


def active_record(run_path: str | Path, epoch: int) -> HumanFeedbackRecord | None:
    """Newest non-superseded record for an epoch (latest reviewer wins)."""
    current = [r for r in load_records(run_path) if r.epoch == epoch and not r.superseded]
    return current[-1] if current else None


def save_record(run_path: str | Path, record: HumanFeedbackRecord) -> None:
    path = Path(run_path) / FILE_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(canonical_json(record.to_dict()) + "\n")


def _ask_nonempty(prompt: str, read: Callable[[str], str], write: Callable[[str], Any]) -> str:
    while True:
        text = read(prompt).strip()
        if text:
            return text
        write("Feedback must not be empty.\n")


def review(run_path: str | Path, run_id: str, epoch: int, batch: Sequence[Trajectory],
           signals: SignalSet, reviewer: str = "expert", amend: bool = False,
           read: Callable[[str], str] = input,
           write: Callable[[str], Any] = print,
           now: Callable[[], dt.datetime] | None = None) -> HumanFeedbackRecord:
    """Show each transcript, collect one text per trajectory plus an aggregate."""
    if not batch:
        raise StateError(f"epoch {epoch} has no collected batch to review")
    existing = [r for r in load_records(run_path) if r.epoch == epoch and r.reviewer == reviewer]
    if existing and not amend:
        raise StateError(f"epoch {epoch} already has feedback from {reviewer!r}; use --amend")
    texts = []
    for i, traj in enumerate(batch, start=1):
        write(f"\n--- Interaction {i}/{len(batch)} ({traj.id}) ---\n")
        write(render_signals(traj, signals) + "\n")
        texts.append(_ask_nonempty(f"Feedback for interaction {i}: ", read, write))
    aggregate = _ask_nonempty("Overall feedback for this epoch: ", read, write)
    stamp = (now or (lambda: dt.datetime.now(dt.timezone.utc)))().isoformat()
    revision = max((r.revision for r in existing), default=-1) + 1
    record = HumanFeedbackRecord(run_id, epoch, reviewer, tuple(t.id for t in batch),
                                 tuple(texts), aggregate, stamp, revision)
    save_record(run_path, record)
    return record
