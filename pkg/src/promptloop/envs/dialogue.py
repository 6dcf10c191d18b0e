"""Goal-driven task-oriented dialogue with an agenda-style rule-based user.

The simulated user holds a goal (per-domain constraints plus slots it must
learn), reveals constraints a few at a time, corrects offers that violate
them, and asks for its requested slots once a matching entity is offered.

The agent may look entities up by writing a line such as::

    CALL find_hotel(area=centre, price=cheap)

Success is judged by replaying the system responses: every goal domain
needs an offered entity that satisfies all of the domain's constraints,
and every requested slot must later be answered with that entity's value.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from ..core import ApiCall, Score, TaskInstance, Trajectory
from ..errors import InvalidArgumentError
from .base import EnvStepResult, Environment, Episode, InitialContext

MAX_TURNS = 12
CLOSING_MESSAGE = "Thank you, that is all I need. Goodbye."

_CALL = re.compile(r"^[ \t]*(?:API:[ \t]*)?CALL[ \t]+([A-Za-z_]\w*)\((.*)\)[ \t]*$", re.MULTILINE)


@dataclass(frozen=True)
class DialogueGoal:
    """A user goal. ``requests`` holds qualified ``"domain.slot"`` names."""

    id: str
    domains: tuple[str, ...]
    constraints: Mapping[str, Mapping[str, str]]
    requests: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.domains:
            raise InvalidArgumentError("a goal needs at least one domain")
        for req in self.requests:
            domain, _, slot = req.partition(".")
            if not slot or domain not in self.domains:
                raise InvalidArgumentError(f"request {req!r} does not name a goal domain")
        for domain in self.constraints:
            if domain not in self.domains:
                raise InvalidArgumentError(f"constraints for unlisted domain {domain!r}")

    @classmethod
    def from_payload(cls, task_id: str, goal: Mapping[str, Any]) -> DialogueGoal:
        domains = tuple(goal["domains"])
        requests = []
        for req in goal.get("requests", []):
            if "." not in req:
                if len(domains) != 1:
                    raise InvalidArgumentError(
                        f"request {req!r} must be written as domain.slot in a multi-domain goal")
                req = f"{domains[0]}.{req}"
            requests.append(req)
        constraints = {d: dict(goal.get("constraints", {}).get(d, {})) for d in domains}
        return cls(task_id, domains, constraints, tuple(requests))

    def requested(self, domain: str) -> list[str]:
        return [r.split(".", 1)[1] for r in self.requests if r.split(".", 1)[0] == domain]

    def describe(self) -> str:
        parts = []
        for domain in self.domains:
            cons = self.constraints.get(domain, {})
            text = f"You are looking for a {domain}"
            if cons:
                text += " where " + " and ".join(f"the {s} is {v}" for s, v in cons.items())
            text += "."
            wanted = self.requested(domain)
            if wanted:
                text += f" You want to know its {', '.join(wanted)}."
            parts.append(text)
        return " ".join(parts)


class EntityDb:
    """Per-domain entity lists; every entity has a unique ``name``."""

    def __init__(self, domains: Mapping[str, Sequence[Mapping[str, str]]]):
        self.domains = {d: [dict(e) for e in ents] for d, ents in domains.items()}
        for domain, ents in self.domains.items():
            names = [e.get("name") for e in ents]
            if None in names or len(set(names)) != len(names):
                raise InvalidArgumentError(f"entities in {domain!r} need unique names")
            slots = {frozenset(e) for e in ents}
            if len(slots) > 1:
                raise InvalidArgumentError(f"inconsistent slot names in domain {domain!r}")

    def entities(self, domain: str) -> list[dict[str, str]]:
        return self.domains.get(domain, [])

    def slots(self, domain: str) -> set[str]:
        ents = self.entities(domain)
        return set(ents[0]) if ents else set()

    def find(self, domain: str, constraints: Mapping[str, str]) -> list[dict[str, str]]:
        return [e for e in self.entities(domain) if satisfies(e, constraints)]


def _eq(a: Any, b: Any) -> bool:
    return str(a).strip().lower() == str(b).strip().lower()


def satisfies(entity: Mapping[str, str], constraints: Mapping[str, str]) -> bool:
    return all(slot in entity and _eq(entity[slot], value) for slot, value in constraints.items())


def _mentions(text: str, value: Any) -> bool:
    return str(value).lower() in text.lower()


def parse_api_call(text: str) -> ApiCall | None:
    m = None
    for m in _CALL.finditer(text):
        pass
    if m is None:
        return None
    args: dict[str, str] = {}
    for part in m.group(2).split(","):
        if "=" not in part:
            continue
        key, _, value = part.partition("=")
        args[key.strip()] = value.strip().strip("'\"")
    return ApiCall(m.group(1), args)


def offers(db: EntityDb, domain: str, responses: Sequence[str]) -> list[tuple[str, int]]:
    """(entity name, turn index) for each entity of ``domain`` first mentioned at that turn."""
    seen: dict[str, int] = {}
    for turn, text in enumerate(responses, start=1):
        for ent in db.entities(domain):
            if ent["name"] not in seen and _mentions(text, ent["name"]):
                seen[ent["name"]] = turn
    return list(seen.items())


def domain_fulfilled(goal: DialogueGoal, db: EntityDb, domain: str,
                     responses: Sequence[str]) -> bool:
    """Some offered entity meets every constraint and all requests were answered for it."""
    cons = goal.constraints.get(domain, {})
    wanted = goal.requested(domain)
    by_name = {e["name"]: e for e in db.entities(domain)}
    for name, first_turn in offers(db, domain, responses):
        ent = by_name[name]
        if not satisfies(ent, cons):
            continue
        if any(slot not in ent for slot in wanted):
            continue
        later = responses[first_turn - 1:]
        if all(any(_mentions(r, ent[slot]) for r in later) for slot in wanted):
            return True
    return False


def dialogue_success(goal: DialogueGoal, db: EntityDb, responses: Sequence[str]) -> bool:
    return all(domain_fulfilled(goal, db, d, responses) for d in goal.domains)


@dataclass
class _UserState:
    given: dict[str, set[str]] = field(default_factory=dict)
    domain_index: int = 0


class DialogueEpisode(Episode):
    def __init__(self, goal: DialogueGoal, db: EntityDb, context: InitialContext,
                 state: _UserState, rng: random.Random, max_turns: int):
        super().__init__(context)
        self.goal = goal
        self.db = db
        self.state = state
        self.rng = rng
        self.max_turns = max_turns
        self.responses: list[str] = []

    @property
    def domain(self) -> str:
        return self.goal.domains[self.state.domain_index]

    def handle_api_call(self, call: ApiCall) -> str:
        name = call.name
        domain = name[len("find_"):] if name.startswith("find_") else name
        if domain not in self.db.domains:
            return f"error: unknown function {name}"
        hits = self.db.find(domain, call.arguments)
        if not hits:
            return "no matching entities"
        return "\n".join("; ".join(f"{k}={v}" for k, v in ent.items()) for ent in hits[:3])

    def _give(self, slot: str) -> str:
        value = self.goal.constraints[self.domain][slot]
        self.state.given.setdefault(self.domain, set()).add(slot)
        return f"the {slot} should be {value}"

    def _step(self, system_response: str) -> EnvStepResult:
        self.responses.append(system_response)
        if domain_fulfilled(self.goal, self.db, self.domain, self.responses):
            if self.state.domain_index + 1 >= len(self.goal.domains):
                return EnvStepResult(CLOSING_MESSAGE, True, {"reason": "goal_met"})
            self.state.domain_index += 1
            return EnvStepResult(opening_utterance(self.goal, self.domain, self.state, self.rng),
                                 False, {"domain": self.domain})
        if self.turns_taken >= self.max_turns:
            return EnvStepResult("", True, {"reason": "turn_cap"})
        return EnvStepResult(self._react(system_response), False, {"domain": self.domain})

    def _react(self, text: str) -> str:
        domain = self.domain
        cons = self.goal.constraints.get(domain, {})
        given = self.state.given.setdefault(domain, set())
        pending = [s for s in cons if s not in given]
        lowered = text.lower()

        if "?" in text:
            asked = [s for s in self.db.slots(domain) if s != "name" and re.search(
                rf"\b{re.escape(s.lower())}\b", lowered)]
            if asked:
                replies = []
                for slot in asked:
                    if slot in cons:
                        replies.append(self._give(slot))
                    else:
                        replies.append(f"I don't mind about the {slot}")
                return _sentence(" and ".join(replies))

        by_name = {e["name"]: e for e in self.db.entities(domain)}
        mentioned = [n for n in by_name if _mentions(text, n)]
        if mentioned:
            latest = by_name[mentioned[-1]]
            violated = [s for s in cons if not satisfies(latest, {s: cons[s]})]
            if violated:
                violated.sort(key=lambda s: s in given)
                return f"That does not work for me, {self._give(violated[0])}."
        valid = [(name, turn) for name, turn in offers(self.db, domain, self.responses)
                 if satisfies(by_name[name], cons)]
        if valid:
            name, turn = valid[-1]
            later = self.responses[turn - 1:]
            missing = [s for s in self.goal.requested(domain)
                       if not any(_mentions(r, by_name[name].get(s, "\0")) for r in later)]
            if missing:
                return f"Could you tell me the {missing[0]} of {name}?"
        if pending:
            return _sentence("Also, " + self._give(pending[0]))
        return f"Could you recommend a {domain}?"


def _sentence(text: str) -> str:
    text = text.strip()
    return text[0].upper() + text[1:] + "."


def opening_utterance(goal: DialogueGoal, domain: str, state: _UserState,
                      rng: random.Random) -> str:
    cons = goal.constraints.get(domain, {})
    slots = list(cons)
    if not slots:
        return f"I am looking for a {domain}."
    count = rng.randint(1, len(slots))
    chosen = sorted(rng.sample(slots, count), key=slots.index)
    state.given.setdefault(domain, set()).update(chosen)
    details = " and ".join(f"the {s} should be {cons[s]}" for s in chosen)
    return f"I am looking for a {domain}, {details}."


class DialogueEnvironment(Environment):
    environment_id = "dialogue"

    def __init__(self, dbs: Mapping[str, EntityDb], max_turns: int = MAX_TURNS):
        self.dbs = dict(dbs)
        self.max_turns = max_turns

    def goal(self, task: TaskInstance) -> DialogueGoal:
        return DialogueGoal.from_payload(task.id, task.payload["goal"])

    def db(self, task: TaskInstance) -> EntityDb:
        ref = task.payload.get("db_ref", "default")
        try:
            return self.dbs[ref]
        except KeyError:
            raise InvalidArgumentError(f"task {task.id!r} refers to unknown db {ref!r}") from None

    def _reset(self, task: TaskInstance, seed: int) -> DialogueEpisode:
        goal = self.goal(task)
        rng = random.Random(seed)
        state = _UserState()
        first = opening_utterance(goal, goal.domains[0], state, rng)
        ctx = InitialContext(system_context="", first_user_message=first,
                             goal_text=goal.describe())
        return DialogueEpisode(goal, self.db(task), ctx, state, rng, self.max_turns)

    def parse_api_call(self, text: str) -> ApiCall | None:
        return parse_api_call(text)

    def _judge(self, task: TaskInstance, trajectory: Trajectory, prompt_text: str) -> Score:
        responses = [t.system_response for t in trajectory.turns]
        ok = dialogue_success(self.goal(task), self.db(task), responses)
        return Score("success_binary", 1.0 if ok else 0.0)

    def validate_task(self, task: TaskInstance) -> list[str]:
        try:
            goal = self.goal(task)
            db = self.db(task)
        except (KeyError, TypeError, InvalidArgumentError) as exc:
            return [f"task {task.id!r}: malformed payload ({exc})"]
        problems = []
        for domain in goal.domains:
            if domain not in db.domains:
                problems.append(f"task {task.id!r}: domain {domain!r} missing from entity db")
                continue
            for slot in list(goal.constraints.get(domain, {})) + goal.requested(domain):
                if slot not in db.slots(domain):
                    problems.append(f"task {task.id!r}: unknown slot {domain}.{slot}")
        return problems
