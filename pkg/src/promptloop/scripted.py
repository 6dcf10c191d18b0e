"""Ready-made scripted backends for demos, tests and offline configs.

Use them from a config with ``{"backend": "factory", "factory":
"promptloop.scripted:keyword_teacher"}``.
"""

from __future__ import annotations

import re
from typing import Sequence

from .lm import LmRequest, Rule, ScriptedBackend

DEFAULT_KEYWORDS = ("concise", "polite", "verify", "summarize")

_SUGGESTION = re.compile(r"^suggestion:\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_ADD_WORD = re.compile(r"add the word '([^']+)'", re.IGNORECASE)


def _last_user(request: LmRequest) -> str:
    users = [m.content for m in request.messages if m.role == "user"]
    return users[-1] if users else ""


def echo_system(request: LmRequest) -> str:
    """Agent that answers with its own system message."""
    return next((m.content for m in request.messages if m.role == "system"), "")


def _section(text: str, start: str, end: str) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    i += len(start)
    j = text.find(end, i)
    return text[i:] if j < 0 else text[i:j]


def keyword_teacher(keywords: Sequence[str] = DEFAULT_KEYWORDS) -> ScriptedBackend:
    """Backend for the keyword environment that adds one missing keyword per epoch.

    The agent echoes its prompt; the turn feedbacker names the first keyword
    absent from the last turn; summaries and aggregates pass the suggestion
    through; the rewriter appends the named keyword to the current prompt.
    """
    keywords = tuple(keywords)

    def turn_feedback(request: LmRequest) -> str:
        last_turn = _last_user(request).rsplit("[Turn ", 1)[-1].lower()
        missing = [k for k in keywords if k.lower() not in last_turn]
        if not missing:
            return ("sentiment: positive\nsuccess: 1.0\n"
                    "suggestion: keep the prompt as it is")
        covered = (len(keywords) - len(missing)) / len(keywords)
        return (f"sentiment: negative\nsuccess: {covered}\n"
                f"suggestion: add the word '{missing[0]}' to the prompt")

    def pass_suggestion(request: LmRequest) -> str:
        found = _SUGGESTION.findall(_last_user(request))
        if found:
            return found[-1].strip()
        body = _last_user(request)
        # aggregate input: keep the first interaction's summary
        return _section(body, "[Interaction 1]\n", "\n\n[Interaction").strip() or body

    def rewrite(request: LmRequest) -> str:
        body = _last_user(request)
        prompt = _section(body, "[PROMPT]\n", "\n[FEEDBACK]\n")
        feedback = _section(body, "[FEEDBACK]\n", "\n\n=== Epoch")
        m = _ADD_WORD.search(feedback)
        new = f"{prompt}\nKeyword: {m.group(1)}" if m else prompt
        return f"```\n{new}\n```"

    return ScriptedBackend([
        Rule(echo_system, tag="system-agent"),
        Rule(turn_feedback, tag="feedbacker"),
        Rule(pass_suggestion, tag="feedbacker.summary"),
        Rule(pass_suggestion, tag="feedbacker.aggregate"),
        Rule(rewrite, tag="rewriter"),
    ], default_response="```\nYou are a helpful assistant.\n```")
