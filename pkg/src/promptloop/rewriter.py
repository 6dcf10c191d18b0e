"""Prompt rewriting from feedback, with optional replay of earlier epochs."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

from . import templates
from .core import ChatMessage, PromptVersion, Score, register_type
from .errors import EpochError, InvalidArgumentError, RewriteParseError

logger = logging.getLogger(__name__)

DEFAULT_HISTORY_BUDGET = 8
REWRITER_SYSTEM = "You are an expert prompt engineer."
REPAIR_REMINDER = ("Your answer did not contain the new prompt. Reply with the complete new "
                   "prompt inside a single fenced block (``` ... ```).")

_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ReplayEntry:
    epoch: int
    prompt_id: str
    prompt_text: str
    feedback_text: str

    def to_dict(self) -> dict[str, Any]:
        return {"epoch": self.epoch, "prompt_id": self.prompt_id,
                "prompt_text": self.prompt_text, "feedback_text": self.feedback_text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ReplayEntry:
        return cls(d["epoch"], d["prompt_id"], d["prompt_text"], d["feedback_text"])


@dataclass(frozen=True)
class ReplayBuffer:
    """Append-only history of (prompt, feedback) pairs, one per epoch from 1."""

    entries: tuple[ReplayEntry, ...] = ()

    def __post_init__(self) -> None:
        for i, e in enumerate(self.entries, start=1):
            if e.epoch != i:
                raise InvalidArgumentError("replay epochs must be contiguous from 1")

    def append(self, prompt: PromptVersion, feedback_text: str) -> ReplayBuffer:
        entry = ReplayEntry(len(self.entries) + 1, prompt.id, prompt.text, feedback_text)
        return ReplayBuffer(self.entries + (entry,))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def latest(self) -> ReplayEntry:
        if not self.entries:
            raise InvalidArgumentError("replay buffer is empty")
        return self.entries[-1]


@register_type
@dataclass(frozen=True)
class CandidatePrompt:
    text: str
    candidate_index: int
    parent_prompt_id: str
    validation_score: Score | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidArgumentError("candidate text must be non-empty")

    def scored(self, score: Score) -> CandidatePrompt:
        return replace(self, validation_score=score)

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "candidate_index": self.candidate_index,
                "parent_prompt_id": self.parent_prompt_id,
                "validation_score": self.validation_score.to_dict()
                if self.validation_score else None}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CandidatePrompt:
        score = d.get("validation_score")
        return cls(d["text"], d["candidate_index"], d["parent_prompt_id"],
                   Score.from_dict(score) if score else None)


def render_entry(epoch: int, prompt_text: str, feedback_text: str) -> str:
    return (f"=== Epoch {epoch} ===\n"
            f"[PROMPT]\n{prompt_text}\n"
            f"[FEEDBACK]\n{feedback_text}")


def render_history(buffer: ReplayBuffer, budget_entries: int = DEFAULT_HISTORY_BUDGET) -> str:
    """Newest-first rendering of at most ``budget_entries`` whole epochs."""
    if not buffer.entries:
        raise InvalidArgumentError("replay buffer is empty")
    if budget_entries < 1:
        raise InvalidArgumentError("budget_entries must be >= 1")
    recent = buffer.entries[-budget_entries:]
    return "\n\n".join(render_entry(e.epoch, e.prompt_text, e.feedback_text)
                       for e in reversed(recent))


def extract_prompt(text: str) -> str | None:
    blocks = [b.strip() for b in _FENCE.findall(text)]
    blocks = [b for b in blocks if b]
    return blocks[-1] if blocks else None


def _fill(template: str, history: str, entry: ReplayEntry) -> str:
    return template.format_map({"history": history, "current_prompt": entry.prompt_text,
                                "feedback": entry.feedback_text, "epoch": entry.epoch})


def _ask(messages: list[ChatMessage], lm) -> str:
    raw = lm.chat(messages, tag="rewriter")
    found = extract_prompt(raw)
    if found is not None:
        return found
    messages = messages + [ChatMessage("assistant", raw or "(empty)"),
                           ChatMessage("user", REPAIR_REMINDER)]
    raw = lm.chat(messages, tag="rewriter")
    found = extract_prompt(raw)
    if found is None:
        raise RewriteParseError("rewriter answer contains no fenced prompt block", raw)
    return found


def basic_messages(entry: ReplayEntry, template: str | None = None) -> list[ChatMessage]:
    body = _fill(template or templates.load("rewrite_basic"),
                 render_entry(entry.epoch, entry.prompt_text, entry.feedback_text), entry)
    return [ChatMessage("system", REWRITER_SYSTEM), ChatMessage("user", body)]


def replay_messages(buffer: ReplayBuffer, budget_entries: int = DEFAULT_HISTORY_BUDGET,
                    template: str | None = None,
                    basic_template: str | None = None) -> list[ChatMessage]:
    if len(buffer) == 1:
        # a one-epoch history is exactly the basic rewrite
        return basic_messages(buffer.latest, basic_template)
    body = _fill(template or templates.load("rewrite_replay"),
                 render_history(buffer, budget_entries), buffer.latest)
    return [ChatMessage("system", REWRITER_SYSTEM), ChatMessage("user", body)]


def rewrite_basic(prompt: PromptVersion, feedback, lm, template: str | None = None) -> str:
    """New prompt text from the current prompt and its epoch feedback."""
    if feedback.epoch != prompt.epoch:
        raise InvalidArgumentError("feedback epoch does not match prompt epoch")
    entry = ReplayEntry(prompt.epoch, prompt.id, prompt.text, feedback.aggregate_text)
    return _ask(basic_messages(entry, template), lm)


def rewrite_replay(buffer: ReplayBuffer, lm, budget_entries: int = DEFAULT_HISTORY_BUDGET,
                   template: str | None = None) -> str:
    """New prompt text from the whole (prompt, feedback) history."""
    return _ask(replay_messages(buffer, budget_entries, template), lm)


@dataclass(frozen=True)
class CandidateBatch:
    candidates: tuple[CandidatePrompt, ...]
    warnings: tuple[str, ...] = ()


def generate_candidates(mode: str, lm, k: int = 2, *, buffer: ReplayBuffer,
                        budget_entries: int = DEFAULT_HISTORY_BUDGET,
                        template_overrides: Mapping[str, str] | None = None) -> CandidateBatch:
    """``k`` independent rewrites of the buffer's latest prompt.

    The buffer's last entry is the current epoch. Calls that fail extraction
    are dropped with a warning; if all fail, :class:`EpochError` is raised.
    """
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if mode not in ("basic", "replay"):
        raise InvalidArgumentError(f"unknown rewrite mode {mode!r}")
    overrides = template_overrides or {}
    basic_t = templates.load("rewrite_basic", overrides)
    if mode == "basic":
        messages = basic_messages(buffer.latest, basic_t)
    else:
        messages = replay_messages(buffer, budget_entries,
                                   templates.load("rewrite_replay", overrides), basic_t)
    parent = buffer.latest.prompt_id
    candidates: list[CandidatePrompt] = []
    warnings: list[str] = []
    for i in range(k):
        try:
            text = _ask(list(messages), lm)
        except RewriteParseError as exc:
            warnings.append(f"candidate call {i} failed extraction: {exc}")
            logger.warning("candidate call %d failed extraction", i)
            continue
        candidates.append(CandidatePrompt(text, len(candidates), parent))
    if not candidates:
        raise EpochError("every rewrite call failed extraction")
    texts = [c.text for c in candidates]
    if len(set(texts)) < len(texts):
        warnings.append("duplicate candidate texts")
    return CandidateBatch(tuple(candidates), tuple(warnings))


def write_seed_prompt(examples: Sequence[str], lm, template: str | None = None) -> str:
    """Seed prompt from a prompt-writer model shown a few example tasks."""
    if not examples:
        raise InvalidArgumentError("need at least one example task")
    body = "\n\n".join(f"Example {i}:\n{text}" for i, text in enumerate(examples, start=1))
    messages = [ChatMessage("user", (template or templates.load("prompt_writer"))
                            .format_map({"examples": body}))]
    raw = lm.chat(messages, tag="prompt-writer")
    found = extract_prompt(raw)
    if found is None:
        raise RewriteParseError("prompt writer answer contains no fenced prompt block", raw)
    return found
