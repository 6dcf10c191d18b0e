"""Environment contract and the generic episode runner."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field, replace
from typing import Mapping

from ..core import ApiCall, ChatMessage, PromptVersion, Score, TaskInstance, Trajectory, Turn
from ..errors import InvalidArgumentError, StateError


@dataclass(frozen=True)
class InitialContext:
    system_context: str
    first_user_message: str
    goal_text: str | None = None


@dataclass(frozen=True)
class EnvStepResult:
    user_message: str
    done: bool
    info: Mapping[str, str] = field(default_factory=dict)


class Episode(abc.ABC):
    """Mutable state of one interaction. Confined to a single worker."""

    def __init__(self, context: InitialContext):
        self.context = context
        self.done = False
        self.turns_taken = 0

    def step(self, system_response: str) -> EnvStepResult:
        if self.done:
            raise StateError("episode is already done")
        self.turns_taken += 1
        result = self._step(system_response)
        if result.done:
            self.done = True
        return result

    @abc.abstractmethod
    def _step(self, system_response: str) -> EnvStepResult: ...

    def handle_api_call(self, call: ApiCall) -> str:
        raise StateError("this environment exposes no API")


class Environment(abc.ABC):
    environment_id: str = ""

    def check_task(self, task: TaskInstance) -> None:
        if task.environment_id != self.environment_id:
            raise InvalidArgumentError(
                f"task {task.id!r} belongs to {task.environment_id!r}, not {self.environment_id!r}")

    def reset(self, task: TaskInstance, seed: int) -> Episode:
        self.check_task(task)
        return self._reset(task, seed)

    @abc.abstractmethod
    def _reset(self, task: TaskInstance, seed: int) -> Episode: ...

    def parse_api_call(self, text: str) -> ApiCall | None:
        """Extract an API call from an agent response; ``None`` when the env has no API."""
        return None

    def judge(self, task: TaskInstance, trajectory: Trajectory, prompt_text: str = "") -> Score:
        self.check_task(task)
        if not trajectory.complete:
            raise StateError(f"trajectory {trajectory.id!r} is not complete")
        return self._judge(task, trajectory, prompt_text)

    @abc.abstractmethod
    def _judge(self, task: TaskInstance, trajectory: Trajectory, prompt_text: str) -> Score: ...

    def validate_task(self, task: TaskInstance) -> list[str]:
        """Problems with a task's payload; empty when it is usable."""
        return []


def env_reset(env: Environment, task: TaskInstance, seed: int) -> InitialContext:
    return env.reset(task, seed).context


def system_messages(prompt_text: str, context: InitialContext) -> list[ChatMessage]:
    content = prompt_text
    if context.system_context:
        content = f"{prompt_text}\n\n{context.system_context}"
    return [ChatMessage("system", content)]


def run_episode(env: Environment, task: TaskInstance, prompt: PromptVersion, agent,
                seed: int, trajectory_id: str) -> Trajectory:
    """Let the system agent (a :class:`~promptloop.lm.Gateway`) play one episode.

    If the agent response contains an API call the environment understands,
    the result is returned to the agent as a tool message and the agent is
    asked again; the second answer is the turn's system response.
    """
    episode = env.reset(task, seed)
    ctx = episode.context
    messages = system_messages(prompt.text, ctx)
    user = ctx.first_user_message
    turns: list[Turn] = []
    while True:
        messages.append(ChatMessage("user", user))
        reply = agent.chat(messages, tag="system-agent") or "..."
        call = env.parse_api_call(reply)
        result = None
        if call is not None:
            result = episode.handle_api_call(call)
            messages.append(ChatMessage("assistant", reply))
            messages.append(ChatMessage("tool", result))
            reply = agent.chat(messages, tag="system-agent") or "..."
        messages.append(ChatMessage("assistant", reply))
        step = episode.step(reply)
        turns.append(Turn(index=len(turns) + 1, user_utterance=user, system_response=reply,
                          api_call=call, api_result=result, terminal=step.done))
        if step.done:
            break
        user = step.user_message
    traj = Trajectory(id=trajectory_id, prompt_id=prompt.id, environment_id=env.environment_id,
                      task_instance_id=task.id, turns=tuple(turns), seed=seed,
                      goal_text=ctx.goal_text)
    outcome = env.judge(task, traj, prompt.text)
    return replace(traj, outcome=outcome)
