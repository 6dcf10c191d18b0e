"""Iterative system-prompt optimization for multi-turn agents from textual feedback."""

from .config import ConfigError, ModelBinding, RunConfig, load_config
from .core import (ApiCall, ChatMessage, PromptVersion, Score, TaskInstance, Trajectory, Turn,
                   dumps, loads, prompt_id, validate_trajectory)
from .envs import load_bundle, make_environment
from .feedback import EpochFeedback, SignalSet, TrajectoryFeedback, TurnFeedback, \
    parse_turn_feedback
from .lm import Gateway, HttpBackend, LmRequest, LmResponse, Rule, ScriptedBackend
from .metrics import MethodRow, aggregate_seeds, mean_delta_table, render_report
from .optimizer import Optimizer, collect_batch, evaluate_prompt, optimize, select_candidate
from .rewriter import CandidatePrompt, ReplayBuffer, generate_candidates
from .store import RunRecord, load_run

__version__ = "0.1.0"

__all__ = [
    "ApiCall", "CandidatePrompt", "ChatMessage", "ConfigError", "EpochFeedback", "Gateway",
    "HttpBackend", "LmRequest", "LmResponse", "MethodRow", "ModelBinding", "Optimizer",
    "PromptVersion", "ReplayBuffer", "Rule", "RunConfig", "RunRecord", "Score", "ScriptedBackend",
    "SignalSet", "TaskInstance", "Trajectory", "TrajectoryFeedback", "Turn", "TurnFeedback",
    "aggregate_seeds", "collect_batch", "dumps", "evaluate_prompt", "generate_candidates",
    "load_bundle", "load_config", "load_run", "loads", "make_environment", "mean_delta_table",
    "optimize", "parse_turn_feedback", "prompt_id", "render_report", "select_candidate",
    "validate_trajectory",
]
