import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from promptloop.core import PromptVersion, TaskInstance
from promptloop.envs import DialogueEnvironment, DialogueGoal, EntityDb, parse_api_call, run_episode
from promptloop.envs.base import env_reset
from promptloop.envs.dialogue import CLOSING_MESSAGE, MAX_TURNS, dialogue_success
from promptloop.errors import InvalidArgumentError, StateError
from promptloop.lm import Gateway, Rule, ScriptedBackend

from support import bundle

GOLDEN = Path(__file__).parent / "golden" / "dialogue_opening.json"
HOTEL_GOAL = {"domains": ["hotel"], "constraints": {"hotel": {"price": "cheap", "area": "centre"}},
              "requests": ["phone"]}


@pytest.fixture(scope="module")
def env():
    return DialogueEnvironment(bundle("dialogue").entity_dbs)


def task(goal=HOTEL_GOAL, tid="g1"):
    return TaskInstance(tid, "dialogue", {"db_ref": "entities.json", "goal": goal}, "train")


def scripted_agent(responses):
    it = iter(responses)
    return Gateway(ScriptedBackend([Rule(lambda r: next(it), tag="system-agent")]))


def test_opening_utterance_golden(env):
    golden = json.loads(GOLDEN.read_text())
    for seed, text in golden.items():
        assert env_reset(env, task(), int(seed)).first_user_message == text
        assert "cheap" in text or "centre" in text


def test_goal_validation():
    with pytest.raises(InvalidArgumentError):
        DialogueGoal("g", (), {})
    with pytest.raises(InvalidArgumentError):
        DialogueGoal("g", ("hotel",), {}, ("restaurant.phone",))
    with pytest.raises(InvalidArgumentError):
        DialogueGoal.from_payload("g", {"domains": ["hotel", "restaurant"], "requests": ["phone"]})
    g = DialogueGoal.from_payload("g", {"domains": ["hotel"], "requests": ["phone"]})
    assert g.requests == ("hotel.phone",)


def test_entity_db_requires_unique_names_and_consistent_slots():
    with pytest.raises(InvalidArgumentError):
        EntityDb({"hotel": [{"name": "a"}, {"name": "a"}]})
    with pytest.raises(InvalidArgumentError):
        EntityDb({"hotel": [{"name": "a", "area": "x"}, {"name": "b", "price": "y"}]})


def test_parse_api_call():
    call = parse_api_call("Let me check.\nCALL find_hotel(area=centre, price='cheap')")
    assert call.name == "find_hotel" and call.arguments == {"area": "centre", "price": "cheap"}
    assert parse_api_call("no call here") is None


def test_successful_four_turn_dialogue(env):
    responses = [
        "What area would you like?",
        "CALL find_hotel(area=centre, price=cheap)",
        "Alpha Lodge is a cheap hotel in the centre.",
        "The phone number of Alpha Lodge is 01223 100001.",
    ]
    agent = scripted_agent([responses[0], responses[1], responses[2], responses[3]])
    traj = run_episode(env, task(), PromptVersion.seed("p"), agent, 0, "d")
    assert traj.outcome.value == 1.0
    assert traj.turns[-1].terminal
    # the API call is answered from the entity db and the agent re-queried
    api_turn = traj.turns[1]
    assert api_turn.api_call.name == "find_hotel"
    assert "Alpha Lodge" in api_turn.api_result


def test_user_supplies_constraint_when_asked_and_never_invents(env):
    ep = env.reset(task(), 1)  # seed 1 opens with price only
    assert "area" not in ep.context.first_user_message
    r = ep.step("Which area do you prefer?")
    assert r.user_message == "The area should be centre."
    r = ep.step("What about the stars?")
    assert r.user_message == "I don't mind about the stars."


def test_user_rejects_violating_offer(env):
    ep = env.reset(task(), 0)
    r = ep.step("How about Birch House?")
    assert r.user_message.startswith("That does not work for me")
    assert "cheap" in r.user_message or "centre" in r.user_message


def test_user_asks_for_pending_request(env):
    ep = env.reset(task(), 0)
    r = ep.step("Alpha Lodge matches.")
    assert r.user_message == "Could you tell me the phone of Alpha Lodge?"
    r = ep.step("It is 01223 100001.")
    assert r.done and r.user_message == CLOSING_MESSAGE
    with pytest.raises(StateError):
        ep.step("anything else?")


def test_turn_cap(env):
    ep = env.reset(task(), 0)
    steps = 0
    while True:
        steps += 1
        if ep.step("Hello there.").done:
            break
    assert steps == MAX_TURNS


def test_multi_domain_moves_to_next_domain(env):
    goal = {"domains": ["hotel", "restaurant"],
            "constraints": {"hotel": {"area": "north"}, "restaurant": {"food": "french"}},
            "requests": ["hotel.address", "restaurant.phone"]}
    ep = env.reset(task(goal), 0)
    r = ep.step("Birch House is at 2 Hills Lane.")
    assert not r.done and "restaurant" in r.user_message
    r = ep.step("Elm Bistro serves french food, phone 01223 200002.")
    assert r.done


def test_api_call_unknown_domain(env):
    ep = env.reset(task(), 0)
    from promptloop.core import ApiCall
    assert ep.handle_api_call(ApiCall("find_taxi", {})).startswith("error")
    assert ep.handle_api_call(ApiCall("find_hotel", {"area": "east"})) == "no matching entities"


def test_judge_wrong_value_fails():
    db = bundle("dialogue").entity_dbs["entities.json"]
    goal = DialogueGoal.from_payload("g", HOTEL_GOAL)
    assert dialogue_success(goal, db, ["Alpha Lodge, phone 01223 100001."])
    assert not dialogue_success(goal, db, ["Alpha Lodge, phone 01223 100002."])
    # value given before the offer does not count
    assert not dialogue_success(goal, db, ["Call 01223 100001.", "Alpha Lodge is nice."])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.sampled_from([
    "What area?", "Which price range?", "Alpha Lodge", "Birch House", "Cedar Inn",
    "The phone is 01223 100001.", "Anything else?"]), min_size=1, max_size=14))
def test_rejudging_is_pure_and_user_sticks_to_goal(seed, responses):
    env = DialogueEnvironment(bundle("dialogue").entity_dbs)
    responses = responses + ["Bye."] * MAX_TURNS
    traj = run_episode(env, task(), PromptVersion.seed("p"), scripted_agent(responses), seed, "h")
    assert env.judge(task(), traj) == traj.outcome
    for turn in traj.turns:
        for value in ("north", "expensive", "moderate", "south"):
            assert value not in turn.user_utterance
