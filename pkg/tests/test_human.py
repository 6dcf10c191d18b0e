import datetime as dt

import pytest

from support import keyword_optimizer, make_traj

from promptloop.core import Trajectory
from promptloop.errors import AwaitingReviewError, StateError
from promptloop.feedback import PRESETS
from promptloop.human import active_record, load_records, review
from promptloop.store import read_records

FIXED = dt.datetime(2026, 1, 1, tzinfo=dt.timezone.utc)


def scripted_input(answers):
    it = iter(answers)
    return lambda prompt: next(it)


def do_review(path, answers, **kw):
    batch = [make_traj(2, tid="e1-b0"), make_traj(1, tid="e1-b1")]
    out = []
    record = review(path, "run", 1, batch, PRESETS["full"], read=scripted_input(answers),
                    write=out.append, now=lambda: FIXED, **kw)
    return record, "".join(out)


def test_review_collects_texts(tmp_path):
    record, shown = do_review(tmp_path, ["be brief", "ask area", "overall: be brief"])
    assert record.feedback_texts == ("be brief", "ask area")
    assert record.aggregate_text == "overall: be brief"
    assert record.trajectory_ids == ("e1-b0", "e1-b1")
    assert record.timestamp == FIXED.isoformat()
    assert "Goal: find a cheap hotel" in shown and "Interaction 2/2" in shown
    assert active_record(tmp_path, 1) == record


def test_empty_input_re_prompts(tmp_path):
    record, shown = do_review(tmp_path, ["", "  ", "one", "two", "", "all"])
    assert record.feedback_texts == ("one", "two") and record.aggregate_text == "all"
    assert shown.count("Feedback must not be empty.") == 3


def test_second_review_needs_amend(tmp_path):
    do_review(tmp_path, ["a", "b", "c"])
    with pytest.raises(StateError, match="--amend"):
        do_review(tmp_path, ["a", "b", "c"])
    amended, _ = do_review(tmp_path, ["x", "y", "z"], amend=True)
    records = load_records(tmp_path)
    assert [r.superseded for r in records] == [True, False]
    assert amended.revision == 1 and active_record(tmp_path, 1).aggregate_text == "z"
    assert active_record(tmp_path, 2) is None


def test_empty_batch(tmp_path):
    with pytest.raises(StateError):
        review(tmp_path, "run", 1, [], PRESETS["full"], read=scripted_input([]))


def test_optimizer_waits_then_uses_review(tmp_path):
    opt = keyword_optimizer(tmp_path, feedback_style="human", epochs=1)
    with pytest.raises(AwaitingReviewError) as info:
        opt.optimize()
    assert info.value.epoch == 1
    records = read_records(tmp_path, opt.run_id(0)).records
    assert records[-1]["type"] == "batch_complete"
    batch_ids = records[-1]["data"]["trajectory_ids"]

    batch = [Trajectory.from_dict(r["data"]["trajectory"])
             for r in records if r["type"] == "trajectory"]
    review(opt.run_path(0), opt.run_id(0), 1, batch, PRESETS["full"],
           read=scripted_input(["a", "b", "add the word 'concise' to the prompt"]),
           write=lambda s: None)
    [run] = opt.optimize()
    assert run.status == "complete"
    assert run.epochs[0].batch_trajectory_ids == tuple(batch_ids)
    fb = [r for r in read_records(tmp_path, run.run_id).records if r["type"] == "feedback"][0]
    assert fb["data"]["source"] == "human"
    assert run.buffer.latest.feedback_text == "add the word 'concise' to the prompt"
