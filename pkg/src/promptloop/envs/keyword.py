"""Synthetic single-turn task scored by keyword coverage of the system prompt.

Useful as a convergence check for the optimization loop: the score is the
fraction of required keywords present in the prompt the episode ran with.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core import Score, TaskInstance, Trajectory
from ..errors import InvalidArgumentError
from .base import EnvStepResult, Environment, Episode, InitialContext

OPENING = "begin"


@dataclass(frozen=True)
class KeywordTask:
    required_keywords: tuple[str, ...]

    def __post_init__(self) -> None:
        kws = self.required_keywords
        if not kws or any(not k for k in kws) or len(set(kws)) != len(kws):
            raise InvalidArgumentError("keywords must be distinct and non-empty")

    def coverage(self, prompt_text: str) -> float:
        text = prompt_text.lower()
        hits = sum(1 for k in self.required_keywords if k.lower() in text)
        return hits / len(self.required_keywords)


class KeywordEpisode(Episode):
    def _step(self, system_response: str) -> EnvStepResult:
        return EnvStepResult("", True)


class KeywordEnvironment(Environment):
    environment_id = "keyword"

    def task(self, task: TaskInstance) -> KeywordTask:
        return KeywordTask(tuple(task.payload["required_keywords"]))

    def _reset(self, task: TaskInstance, seed: int) -> KeywordEpisode:
        self.task(task)
        return KeywordEpisode(InitialContext(system_context="", first_user_message=OPENING))

    def _judge(self, task: TaskInstance, trajectory: Trajectory, prompt_text: str) -> Score:
        return Score("scalar", self.task(task).coverage(prompt_text))

    def validate_task(self, task: TaskInstance) -> list[str]:
        try:
            self.task(task)
        except (KeyError, TypeError, InvalidArgumentError) as exc:
            return [f"task {task.id!r}: {exc}"]
        return []
