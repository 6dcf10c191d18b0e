"""Builders and strategies shared by the test modules."""

from __future__ import annotations

import re

from hypothesis import strategies as st

from promptloop.core import ApiCall, PromptVersion, Score, Trajectory, Turn
from promptloop.envs import load_bundle
from promptloop.fixtures import bundle_path
from promptloop.config import RunConfig
from promptloop.lm import Gateway, Rule, ScriptedBackend
from promptloop.optimizer import Optimizer
from promptloop.scripted import keyword_teacher

SEED_TEXT = "You are a helpful assistant."


def seed_prompt(text: str = SEED_TEXT) -> PromptVersion:
    return PromptVersion.seed(text)


def bundle(name: str):
    return load_bundle(bundle_path(name))


def make_turns(n: int, api_at: tuple[int, ...] = ()) -> tuple[Turn, ...]:
    turns = []
    for i in range(1, n + 1):
        call = ApiCall("find_hotel", {"area": "centre"}) if i in api_at else None
        turns.append(Turn(index=i, user_utterance=f"user says {i}",
                          system_response=f"system says {i}", api_call=call,
                          api_result="Alpha Lodge" if call else None, terminal=i == n))
    return tuple(turns)


def make_traj(n: int = 3, *, tid: str = "t1", goal: str | None = "find a cheap hotel",
              api_at: tuple[int, ...] = (), outcome: float | None = 1.0,
              kind: str = "success_binary") -> Trajectory:
    return Trajectory(id=tid, prompt_id="p" * 64, environment_id="dialogue",
                      task_instance_id="task", turns=make_turns(n, api_at), seed=0,
                      goal_text=goal, outcome=None if outcome is None else Score(kind, outcome))


_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\r"),
                min_size=1, max_size=30).filter(lambda s: s.strip())
# no control or separator characters, so a rendered field never spans two lines
_line_text = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")),
                     min_size=1, max_size=30).filter(lambda s: s.strip())


@st.composite
def trajectories(draw, single_line: bool = False) -> Trajectory:
    text = _line_text if single_line else _text
    n = draw(st.integers(1, 6))
    turns = []
    for i in range(1, n + 1):
        call = None
        result = None
        if draw(st.booleans()):
            args = draw(st.dictionaries(st.sampled_from(["area", "price", "food"]),
                                        st.sampled_from(["north", "cheap", "thai"]), max_size=2))
            call = ApiCall(draw(st.sampled_from(["find_hotel", "find_restaurant"])), args)
            result = draw(st.one_of(st.none(), text))
        turns.append(Turn(index=i, user_utterance=draw(text), system_response=draw(text),
                          api_call=call, api_result=result, terminal=i == n))
    goal = draw(st.one_of(st.none(), text))
    return Trajectory(id=draw(st.text("abc123", min_size=1, max_size=8)), prompt_id="0" * 64,
                      environment_id="dialogue", task_instance_id="task-1",
                      turns=tuple(turns), seed=draw(st.integers(0, 2**31 - 1)), goal_text=goal,
                      outcome=Score("success_binary", float(draw(st.booleans()))))


_BLOCK = re.compile(r"^\[(Turn|Feedback) (\d+)\]$", re.MULTILINE)


def block_sequence(text: str) -> list[str]:
    """Headers of the turn and feedback blocks in a TD feedbacker input, e.g. ['t1', 'f1', 't2']."""
    return [("t" if kind == "Turn" else "f") + num for kind, num in _BLOCK.findall(text)]


def expected_blocks(j: int) -> list[str]:
    seq = []
    for i in range(1, j):
        seq += [f"t{i}", f"f{i}"]
    return seq + [f"t{j}"]


def scripted_td_backend() -> ScriptedBackend:
    """Feedbacker that answers each turn with a parseable block naming that turn."""
    def turn(request):
        n = block_sequence(request.messages[-1].content)[-1]
        return f"sentiment: neutral\nsuccess: 0.5\nsuggestion: improve {n}"

    return ScriptedBackend([
        Rule(turn, tag="feedbacker"),
        Rule(lambda r: "summary of " + r.messages[-1].content, tag="feedbacker.summary"),
        Rule(lambda r: "aggregate of " + r.messages[-1].content, tag="feedbacker.aggregate"),
    ])


def keyword_config(**overrides) -> RunConfig:
    base = dict(environment_id="keyword", feedback_style="td", rewrite_mode="replay",
                batch_size=2, k=2, epochs=4, seeds=(0,))
    return RunConfig(**{**base, **overrides})


def keyword_optimizer(store, *, backend=None, prompt_text: str = SEED_TEXT,
                      **overrides) -> Optimizer:
    gateway = Gateway(backend if backend is not None else keyword_teacher())
    return Optimizer(keyword_config(**overrides), bundle("keyword"), seed_prompt(prompt_text),
                     gateway, store)
