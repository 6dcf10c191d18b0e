from .base import (EnvStepResult, Environment, Episode, InitialContext, env_reset, run_episode,
                   system_messages)
from .bundle import TaskBundle, build_bundle, load_bundle, make_environment
from .dialogue import DialogueEnvironment, DialogueGoal, EntityDb, parse_api_call
from .keyword import KeywordEnvironment, KeywordTask
from .sql import (ShardedSqlTask, SqlEnvironment, compare_results, exec_query, extract_sql,
                  has_top_level_order_by, render_schema)

__all__ = [
    "DialogueEnvironment", "DialogueGoal", "EntityDb", "EnvStepResult", "Environment", "Episode",
    "InitialContext", "KeywordEnvironment", "KeywordTask", "ShardedSqlTask", "SqlEnvironment",
    "TaskBundle", "build_bundle", "compare_results", "env_reset", "exec_query", "extract_sql",
    "has_top_level_order_by", "load_bundle", "make_environment", "parse_api_call",
    "render_schema", "run_episode", "system_messages",
]
