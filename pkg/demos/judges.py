"""
Judging SQL answers and dialogues
=================================

Both environments are deterministic, so a scripted agent is enough to see
how episodes unfold and how the judges score them.
"""

from promptloop import Gateway, PromptVersion, load_bundle
from promptloop.envs import DialogueEnvironment, SqlEnvironment, run_episode
from promptloop.feedback import PRESETS, render_signals
from promptloop.fixtures import bundle_path
from promptloop.lm import Rule, ScriptedBackend

prompt = PromptVersion.seed("You are a helpful assistant.")


def agent(*responses):
    script = list(responses)
    return Gateway(ScriptedBackend([
        Rule(lambda r: script.pop(0) if len(script) > 1 else script[0], tag="system-agent")]))


# SQL: the user reveals the request shard by shard; the episode ends on a SQL block
sql = load_bundle(bundle_path("sql"))
task = sql.tasks["shop-01"]
for answer in ("SELECT name FROM customers WHERE city = 'London'",
               "SELECT c.name FROM customers c WHERE c.city IN ('London') ORDER BY 1 DESC",
               "SELECT name FROM customers"):
    traj = run_episode(SqlEnvironment(), task, prompt,
                       agent("Which customers?", f"```sql\n{answer}\n```"), 0, "sql")
    print(f"{traj.outcome.value:.0f}  {answer}")

# dialogue: a rule-based user with a hidden goal
dialogue = load_bundle(bundle_path("dialogue"))
env = DialogueEnvironment(dialogue.entity_dbs)
task = dialogue.tasks["dlg-01"]
traj = run_episode(env, task, prompt, agent(
    "Which area do you prefer?",
    "CALL find_hotel(area=centre, price=cheap)",
    "Alpha Lodge is a cheap hotel in the centre, phone 01223 100001.",
), 0, "dlg")
print()
print(render_signals(traj, PRESETS["full"]))
print("success:", traj.outcome.value)
