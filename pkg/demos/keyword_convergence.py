"""
Scripted optimization on the keyword environment
================================================

A prompt scores the fraction of four required keywords it contains. The
scripted teacher names one missing keyword per epoch and the scripted
rewriter appends it, so the training curve climbs by 0.25 per epoch.
"""

import tempfile

from promptloop import Gateway, Optimizer, PromptVersion, RunConfig, load_bundle
from promptloop.fixtures import bundle_path
from promptloop.rewriter import render_history
from promptloop.scripted import keyword_teacher

# one gateway answers every role from the same scripted backend
gateway = Gateway(keyword_teacher())
config = RunConfig("keyword", feedback_style="td", rewrite_mode="replay",
                   batch_size=2, k=2, epochs=4, seeds=(0, 1))
bundle = load_bundle(bundle_path("keyword"))
seed = PromptVersion.seed("You are a helpful assistant.")

with tempfile.TemporaryDirectory() as store:
    runs = Optimizer(config, bundle, seed, gateway, store).optimize()

for run in runs:
    print(run.run_id, [value for _, value in run.training_curve])

# the replay history the rewriter saw at epoch 4, newest first
print()
print(render_history(runs[0].buffer))

# the final prompt carries every keyword
print()
print(runs[0].incumbent.text)
