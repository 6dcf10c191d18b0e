"""
Mean and relative improvement over backbones
=============================================

Delta% averages the per-backbone relative improvements. Taking the relative
improvement of the row means instead gives a visibly different number.
"""

from promptloop.metrics import MethodRow, mean_delta_table, render_report

backbones = ("GPT", "Gemini", "Llama-4", "Llama-8B", "Llama-70B")
baseline = MethodRow("baseline", (0.402, 0.514, 0.206, 0.224, 0.318))
rows = [
    MethodRow("APO", (0.374, 0.523, 0.318, 0.290, 0.336)),
    MethodRow("GPO", (0.458, 0.523, 0.299, 0.290, 0.308)),
    MethodRow("MC-style", (0.459, 0.551, 0.250, 0.346, 0.332)),
    MethodRow("TD", (0.439, 0.561, 0.336, 0.318, 0.383)),
    MethodRow("TD+replay", (0.528, 0.607, 0.383, 0.467, 0.402)),
]

print(render_report([], rows=rows, baseline=baseline, backbones=backbones)["report.txt"])

# the alternative reading, for comparison
best = rows[-1]
of_means = 100 * (sum(best.scores) - sum(baseline.scores)) / sum(baseline.scores)
[row] = mean_delta_table([best], baseline)
print(f"TD+replay: averaged per backbone {row.raw_delta_pct:.2f}%, of the means {of_means:.2f}%")

# a scalar baseline broadcasts over every backbone
[apo] = mean_delta_table([MethodRow("APO", (0.540, 0.560, 0.540, 0.560, 0.560))], 0.420)
print(f"APO against 0.420: Mean {apo.mean:.3f}, Delta% {apo.delta_pct:.1f}")
