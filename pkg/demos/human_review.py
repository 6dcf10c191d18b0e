"""
Expert feedback in place of the feedbacker model
================================================

With feedback_style "human" the optimizer stops after collecting a batch.
An expert reviews the transcripts, and the next run picks up the stored
feedback and continues without calling the feedbacker model.
"""

import tempfile

from promptloop import Gateway, Optimizer, PromptVersion, RunConfig, Trajectory, load_bundle
from promptloop.errors import AwaitingReviewError
from promptloop.feedback import PRESETS
from promptloop.fixtures import bundle_path
from promptloop.human import review
from promptloop.scripted import keyword_teacher
from promptloop.store import read_records

gateway = Gateway(keyword_teacher())
config = RunConfig("keyword", feedback_style="human", batch_size=2, epochs=1, seeds=(0,))
bundle = load_bundle(bundle_path("keyword"))

with tempfile.TemporaryDirectory() as store:
    opt = Optimizer(config, bundle, PromptVersion.seed("Answer briefly."), gateway, store)
    try:
        opt.optimize()
    except AwaitingReviewError as exc:
        print(exc)

    records = read_records(store, opt.run_id(0)).records
    batch = [Trajectory.from_dict(r["data"]["trajectory"])
             for r in records if r["type"] == "trajectory"]

    # canned answers stand in for a person at the keyboard
    answers = iter(["Too terse.", "Still too terse.",
                    "add the word 'polite' to the prompt"])
    review(opt.run_path(0), opt.run_id(0), 1, batch, PRESETS["full"],
           read=lambda prompt: next(answers), write=lambda text: None)

    before = len(gateway.calls)
    [run] = opt.optimize()
    roles = sorted({c.request.role for c in gateway.calls[before:]})
    print("roles called after review:", roles)
    print("curve:", [v for _, v in run.training_curve])
    print("prompt:", run.incumbent.text.replace("\n", " | "))
