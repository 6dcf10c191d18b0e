"""Textual feedback on trajectory batches.

Styles:

* ``mc`` - one feedbacker call per finished trajectory.
* ``td`` - one call per turn; call ``j`` sees turns ``1..j`` interleaved with
  the feedback already produced for turns ``1..j-1``, followed by one
  summary call over all turn feedbacks.
* ``numeric`` - a fixed template reporting the batch mean metric (no model).
* ``binary_label`` - like ``mc`` but every transcript carries a
  SUCCESS/FAILURE label.

Every style ends with one aggregation call that merges the per-trajectory
feedback into the epoch's ``aggregate_text`` (``numeric`` excepted).

Turn feedback wire format (version 1), one labelled field per line::

    sentiment: positive|neutral|negative
    success: <probability in [0, 1]>
    suggestion: <text>
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from . import templates
from .core import ChatMessage, Score, Trajectory, Turn, register_type
from .errors import FeedbackParseError, InvalidArgumentError

TURN_FEEDBACK_FORMAT_VERSION = 1

STYLES = ("mc", "td", "numeric", "binary_label", "human")
SENTIMENTS = ("negative", "neutral", "positive")
SENTIMENT_REWARD = {"negative": -1.0, "neutral": 0.0, "positive": 1.0}

METRIC_NAMES = {
    "success_binary": "success rate",
    "functional_accuracy": "functional accuracy",
    "scalar": "score",
}

FORMAT_REMINDER = (
    "Your answer could not be read. Reply again with exactly three lines:\n"
    "sentiment: <positive | neutral | negative>\n"
    "success: <probability between 0 and 1>\n"
    "suggestion: <one actionable suggestion>"
)


@dataclass(frozen=True)
class SignalSet:
    """Which auxiliary signals the feedbacker sees next to the raw transcript."""

    include_goal: bool = False
    include_api: bool = False

    @classmethod
    def preset(cls, name: str) -> SignalSet:
        try:
            return PRESETS[name]
        except KeyError:
            raise InvalidArgumentError(f"unknown signal preset {name!r}") from None

    @property
    def name(self) -> str:
        return {v: k for k, v in PRESETS.items()}[self]


PRESETS = {
    "basic": SignalSet(False, False),
    "subjective": SignalSet(True, False),
    "believe": SignalSet(False, True),
    "full": SignalSet(True, True),
}


@register_type
@dataclass(frozen=True)
class TurnFeedback:
    turn_index: int
    predicted_next_sentiment: str
    success_forecast: float
    suggestion: str
    raw_text: str = ""

    def __post_init__(self) -> None:
        if self.predicted_next_sentiment not in SENTIMENTS:
            raise InvalidArgumentError(f"unknown sentiment {self.predicted_next_sentiment!r}")
        if not 0.0 <= self.success_forecast <= 1.0:
            raise InvalidArgumentError("success_forecast must lie in [0, 1]")
        if not self.suggestion:
            raise InvalidArgumentError("suggestion must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"turn_index": self.turn_index,
                "predicted_next_sentiment": self.predicted_next_sentiment,
                "success_forecast": self.success_forecast,
                "suggestion": self.suggestion, "raw_text": self.raw_text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TurnFeedback:
        return cls(d["turn_index"], d["predicted_next_sentiment"], float(d["success_forecast"]),
                   d["suggestion"], d.get("raw_text", ""))


@register_type
@dataclass(frozen=True)
class TrajectoryFeedback:
    trajectory_id: str
    style: str
    summary: str
    turn_feedbacks: tuple[TurnFeedback, ...] = ()

    def __post_init__(self) -> None:
        if self.style not in STYLES:
            raise InvalidArgumentError(f"unknown feedback style {self.style!r}")
        if self.style != "td" and self.turn_feedbacks:
            raise InvalidArgumentError("only td feedback carries turn feedbacks")

    def to_dict(self) -> dict[str, Any]:
        return {"trajectory_id": self.trajectory_id, "style": self.style, "summary": self.summary,
                "turn_feedbacks": [f.to_dict() for f in self.turn_feedbacks]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TrajectoryFeedback:
        return cls(d["trajectory_id"], d["style"], d["summary"],
                   tuple(TurnFeedback.from_dict(f) for f in d.get("turn_feedbacks", [])))


@register_type
@dataclass(frozen=True)
class EpochFeedback:
    epoch: int
    style: str
    aggregate_text: str
    batch_trajectory_ids: tuple[str, ...]
    trajectory_feedbacks: tuple[TrajectoryFeedback, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"epoch": self.epoch, "style": self.style, "aggregate_text": self.aggregate_text,
                "batch_trajectory_ids": list(self.batch_trajectory_ids),
                "trajectory_feedbacks": [f.to_dict() for f in self.trajectory_feedbacks]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EpochFeedback:
        return cls(d["epoch"], d["style"], d["aggregate_text"], tuple(d["batch_trajectory_ids"]),
                   tuple(TrajectoryFeedback.from_dict(f) for f in d.get("trajectory_feedbacks", [])))


# -- rendering ---------------------------------------------------------------

def render_turn_lines(turn: Turn, signals: SignalSet) -> list[str]:
    lines = [f"User: {turn.user_utterance}"]
    if signals.include_api and turn.api_call is not None:
        lines.append(f"API: {turn.api_call.render()}")
        if turn.api_result is not None:
            lines.append(f"Result: {turn.api_result}")
    lines.append(f"System: {turn.system_response}")
    return lines


def render_signal_lines(trajectory: Trajectory, signals: SignalSet) -> list[str]:
    lines = []
    if signals.include_goal and trajectory.goal_text:
        lines.append(f"Goal: {trajectory.goal_text}")
    for turn in trajectory.turns:
        lines.extend(render_turn_lines(turn, signals))
    return lines


def render_signals(trajectory: Trajectory, signals: SignalSet) -> str:
    """Plain transcript, optionally with the user goal and API calls inlined."""
    return "\n".join(render_signal_lines(trajectory, signals))


# -- turn feedback wire format -------------------------------------------------

_SENTIMENT_WORDS = {
    "positive": "positive", "satisfied": "positive", "happy": "positive", "pleased": "positive",
    "content": "positive", "good": "positive", "delighted": "positive", "grateful": "positive",
    "neutral": "neutral", "indifferent": "neutral", "mixed": "neutral", "ok": "neutral",
    "okay": "neutral",
    "negative": "negative", "frustrated": "negative", "dissatisfied": "negative",
    "unsatisfied": "negative", "annoyed": "negative", "angry": "negative",
    "unhappy": "negative", "confused": "negative", "disappointed": "negative",
    "irritated": "negative", "upset": "negative",
}
_FAILURE_WORDS = ("unsuccessful", "failure", "failed", "fail", "unlikely")
_SUCCESS_WORDS = ("success", "successful", "succeed", "succeeds", "likely")

_LABEL = re.compile(
    r"(?P<label>"
    r"(?:predicted\s+)?(?:next[- ]turn\s+)?(?:user\s+)?(?:sentiment|emotion|satisfaction)"
    r"|success(?:\s+(?:forecast|probability|prediction|chance))?"
    r"|suggestions?"
    r")\W{0,3}?\s*[:=]\s*\**\s*",
    re.IGNORECASE,
)


def _field_of(label: str) -> str:
    label = label.lower()
    if "sugg" in label:
        return "suggestion"
    if label.startswith("success"):
        return "success"
    return "sentiment"


def _clean(value: str) -> str:
    value = value.strip()
    value = re.sub(r"(?:\s*(?:\.{3}|…|[;,|]))+$", "", value)
    return value.strip().strip("*").strip()


def _parse_sentiment(value: str) -> str | None:
    for word in re.findall(r"[a-z]+", value.lower()):
        if word in _SENTIMENT_WORDS:
            return _SENTIMENT_WORDS[word]
    return None


def _parse_success(value: str) -> float | None:
    m = re.search(r"((?:\d+(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?)\s*(%?)", value)
    if m:
        number = float(m.group(1))
        if m.group(2):
            number /= 100.0
        return number if 0.0 <= number <= 1.0 else None
    words = re.findall(r"[a-z]+", value.lower())
    for word in words:
        if word in _FAILURE_WORDS:
            return 0.0
        if word in _SUCCESS_WORDS:
            return 1.0
    return None


def parse_turn_feedback(raw: str, turn_index: int = 0) -> TurnFeedback:
    """Read the three labelled fields from free-form feedbacker output.

    Labels are case-insensitive and may be separated by ``:`` or ``=``; fields
    may come in any order, one per line or inline. Sentiment synonyms such as
    "satisfied" or "frustrated" are mapped to the three-valued scale, and
    success may be a probability, a percentage or the words success/failure.

    Raises:
        FeedbackParseError: when a field is missing or unreadable.
    """
    matches = list(_LABEL.finditer(raw))
    values: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        value = raw[m.end():end].strip().split("\n", 1)[0]
        name = _field_of(m.group("label"))
        cleaned = _clean(value)
        if cleaned and name not in values:
            values[name] = cleaned

    sentiment = _parse_sentiment(values["sentiment"]) if "sentiment" in values else None
    success = _parse_success(values["success"]) if "success" in values else None
    suggestion = values.get("suggestion")
    missing = tuple(name for name, v in
                    (("sentiment", sentiment), ("success", success), ("suggestion", suggestion))
                    if v is None)
    if missing:
        raise FeedbackParseError(f"turn feedback lacks {', '.join(missing)}", raw, missing)
    return TurnFeedback(turn_index, sentiment, success, suggestion, raw)


def format_turn_feedback(fb: TurnFeedback) -> str:
    return (f"sentiment: {fb.predicted_next_sentiment}\n"
            f"success: {fb.success_forecast!r}\n"
            f"suggestion: {fb.suggestion}")


# -- model-backed feedback -----------------------------------------------------

def turn_block(turn: Turn, signals: SignalSet) -> str:
    return "\n".join([f"[Turn {turn.index}]", *render_turn_lines(turn, signals)])


def feedback_block(fb: TurnFeedback) -> str:
    return f"[Feedback {fb.turn_index}]\n{fb.raw_text or format_turn_feedback(fb)}"


def td_turn_input(prefix_turns: Sequence[Turn], prior_feedbacks: Sequence[TurnFeedback],
                  signals: SignalSet, goal_text: str | None = None) -> str:
    """The interleaved sequence t1, f1, ..., t(j-1), f(j-1), tj."""
    if len(prior_feedbacks) != len(prefix_turns) - 1:
        raise InvalidArgumentError("need exactly one prior feedback per earlier turn")
    blocks = []
    if signals.include_goal and goal_text:
        blocks.append(f"Goal: {goal_text}")
    for turn, fb in zip(prefix_turns, prior_feedbacks):
        blocks.append(turn_block(turn, signals))
        blocks.append(feedback_block(fb))
    blocks.append(turn_block(prefix_turns[-1], signals))
    return "\n\n".join(blocks)


def td_turn_feedback(prefix_turns: Sequence[Turn], prior_feedbacks: Sequence[TurnFeedback],
                     signals: SignalSet, lm, goal_text: str | None = None,
                     template: str | None = None) -> TurnFeedback:
    """Feedback on the last turn of ``prefix_turns``; one format re-ask before giving up."""
    if not prefix_turns:
        raise InvalidArgumentError("need at least one turn")
    messages = [
        ChatMessage("system", template or templates.load("td_turn")),
        ChatMessage("user", td_turn_input(prefix_turns, prior_feedbacks, signals, goal_text)),
    ]
    index = prefix_turns[-1].index
    raw = lm.chat(messages, tag="feedbacker")
    try:
        return parse_turn_feedback(raw, index)
    except FeedbackParseError:
        messages += [ChatMessage("assistant", raw or "(empty)"),
                     ChatMessage("user", FORMAT_REMINDER)]
        raw = lm.chat(messages, tag="feedbacker")
        return parse_turn_feedback(raw, index)


def td_trajectory_summary(turn_feedbacks: Sequence[TurnFeedback], lm,
                          template: str | None = None) -> str:
    if not turn_feedbacks:
        raise InvalidArgumentError("need at least one turn feedback")
    body = "\n\n".join(feedback_block(fb) for fb in turn_feedbacks)
    messages = [ChatMessage("system", template or templates.load("td_summary")),
                ChatMessage("user", body)]
    return lm.chat(messages, tag="feedbacker.summary")


def td_trajectory_feedback(trajectory: Trajectory, signals: SignalSet, lm) -> TrajectoryFeedback:
    fbs: list[TurnFeedback] = []
    for j in range(1, len(trajectory.turns) + 1):
        fbs.append(td_turn_feedback(trajectory.turns[:j], fbs, signals, lm, trajectory.goal_text))
    summary = td_trajectory_summary(fbs, lm)
    return TrajectoryFeedback(trajectory.id, "td", summary, tuple(fbs))


def aggregate(feedbacks: Sequence[TrajectoryFeedback], lm, template: str | None = None) -> str:
    body = "\n\n".join(f"[Interaction {i}]\n{fb.summary}"
                       for i, fb in enumerate(feedbacks, start=1))
    messages = [ChatMessage("system", template or templates.load("aggregate")),
                ChatMessage("user", body)]
    return lm.chat(messages, tag="feedbacker.aggregate")


def _check_batch(batch: Sequence[Trajectory]) -> None:
    if not batch:
        raise InvalidArgumentError("feedback needs a non-empty batch")
    for t in batch:
        if not t.complete:
            raise InvalidArgumentError(f"trajectory {t.id!r} is not complete")


def _epoch_feedback(epoch: int, style: str, batch: Sequence[Trajectory],
                    per_traj: Sequence[TrajectoryFeedback], lm) -> EpochFeedback:
    return EpochFeedback(epoch, style, aggregate(per_traj, lm), tuple(t.id for t in batch),
                         tuple(per_traj))


def mc_feedback(batch: Sequence[Trajectory], signals: SignalSet, lm, epoch: int = 1) -> EpochFeedback:
    _check_batch(batch)
    system = templates.load("mc_trajectory")
    per_traj = []
    for t in batch:
        text = lm.chat([ChatMessage("system", system),
                        ChatMessage("user", render_signals(t, signals))], tag="feedbacker")
        per_traj.append(TrajectoryFeedback(t.id, "mc", text))
    return _epoch_feedback(epoch, "mc", batch, per_traj, lm)


def td_feedback(batch: Sequence[Trajectory], signals: SignalSet, lm, epoch: int = 1) -> EpochFeedback:
    _check_batch(batch)
    per_traj = [td_trajectory_feedback(t, signals, lm) for t in batch]
    return _epoch_feedback(epoch, "td", batch, per_traj, lm)


def _scores_of(batch: Sequence[Trajectory], scores: Sequence[Score] | None) -> list[Score]:
    if scores is None:
        scores = [t.outcome for t in batch]
    if len(scores) != len(batch) or any(s is None for s in scores):
        raise InvalidArgumentError("need exactly one score per trajectory")
    return list(scores)


def numeric_feedback(batch: Sequence[Trajectory], scores: Sequence[Score] | None = None,
                     epoch: int = 1) -> EpochFeedback:
    """Report the batch mean of the metric; makes no model call."""
    if not batch:
        raise InvalidArgumentError("feedback needs a non-empty batch")
    scores = _scores_of(batch, scores)
    kinds = {s.kind for s in scores}
    metric = METRIC_NAMES[kinds.pop()] if len(kinds) == 1 else "score"
    mean = sum(s.value for s in scores) / len(scores)
    text = f"{metric}: {mean:.2f} over {len(scores)} interactions"
    return EpochFeedback(epoch, "numeric", text, tuple(t.id for t in batch))


def outcome_label(score: Score) -> str:
    if score.value not in (0.0, 1.0):
        raise InvalidArgumentError(f"binary labels need 0/1 scores, got {score.value}")
    return "SUCCESS" if score.value == 1.0 else "FAILURE"


def binary_label_feedback(batch: Sequence[Trajectory], scores: Sequence[Score] | None,
                          signals: SignalSet, lm, epoch: int = 1) -> EpochFeedback:
    _check_batch(batch)
    scores = _scores_of(batch, scores)
    labels = [outcome_label(s) for s in scores]
    system = templates.load("binary_label")
    per_traj = []
    for t, label in zip(batch, labels):
        body = f"{render_signals(t, signals)}\nOutcome: {label}"
        text = lm.chat([ChatMessage("system", system), ChatMessage("user", body)],
                       tag="feedbacker")
        per_traj.append(TrajectoryFeedback(t.id, "binary_label", text))
    return _epoch_feedback(epoch, "binary_label", batch, per_traj, lm)


def epoch_feedback(style: str, batch: Sequence[Trajectory], signals: SignalSet, lm,
                   epoch: int) -> EpochFeedback:
    if style == "mc":
        return mc_feedback(batch, signals, lm, epoch)
    if style == "td":
        return td_feedback(batch, signals, lm, epoch)
    if style == "numeric":
        return numeric_feedback(batch, epoch=epoch)
    if style == "binary_label":
        return binary_label_feedback(batch, None, signals, lm, epoch)
    raise InvalidArgumentError(f"no model-backed feedback for style {style!r}")


def td_error_diagnostic(turn_feedbacks: Sequence[TurnFeedback], gamma: float = 1.0) -> list[float]:
    """Per-turn TD errors with sentiment as reward and success forecast as value.

    ``delta_j = r_j + gamma * V_{j+1} - V_j`` and ``delta_n = r_n - V_n``.
    Diagnostic only; never fed back into rewriting.
    """
    if not turn_feedbacks:
        raise InvalidArgumentError("need at least one turn feedback")
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgumentError("gamma must lie in [0, 1]")
    rewards = [SENTIMENT_REWARD[f.predicted_next_sentiment] for f in turn_feedbacks]
    values = [f.success_forecast for f in turn_feedbacks] + [0.0]
    return [rewards[j] + gamma * values[j + 1] - values[j] for j in range(len(rewards))]
