"""Run configuration and model bindings.

A config file is a JSON object whose keys mirror :class:`RunConfig`.
"""

from __future__ import annotations

import importlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidArgumentError
from .feedback import PRESETS, STYLES
from .lm import Gateway, HttpBackend, RetryPolicy, ScriptedBackend

ROLES = ("system-agent", "feedbacker", "rewriter", "prompt-writer")
REQUIRED_FIELDS = ("environment_id", "bundle", "feedback_style", "rewrite_mode", "epochs",
                   "seeds", "models")


class ConfigError(InvalidArgumentError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ModelBinding:
    backend: str = "scripted"
    model_id: str = "scripted"
    temperature: float | None = None
    max_tokens: int = 1024
    base_url: str | None = None
    path: str = "/v1/chat/completions"
    key_env: str | None = None
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    rules: tuple[Mapping[str, Any], ...] = ()
    default_response: str = ""
    factory: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], where: str) -> ModelBinding:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown field")
        kw = dict(d)
        if "backoff" in kw:
            kw["backoff"] = tuple(kw["backoff"])
        if "rules" in kw:
            kw["rules"] = tuple(kw["rules"])
        binding = cls(**kw)
        if binding.backend not in ("scripted", "http", "factory"):
            raise ConfigError(f"{where}.backend", f"unknown backend {binding.backend!r}")
        if binding.backend == "http" and not binding.base_url:
            raise ConfigError(f"{where}.base_url", "required for http backends")
        if binding.backend == "factory" and not binding.factory:
            raise ConfigError(f"{where}.factory", "required for factory backends")
        return binding

    def make_backend(self) -> Any:
        if self.backend == "scripted":
            return ScriptedBackend.from_config({"rules": self.rules,
                                                "default_response": self.default_response})
        if self.backend == "http":
            return HttpBackend(self.base_url, self.path, self.key_env, self.timeout)
        module, _, attr = self.factory.partition(":")
        return getattr(importlib.import_module(module), attr)()

    def make_gateway(self, max_inflight: int = 4, backend: Any = None) -> Gateway:
        return Gateway(backend if backend is not None else self.make_backend(), self.model_id,
                       temperature=self.temperature, max_tokens=self.max_tokens,
                       retry=RetryPolicy(self.max_attempts, self.backoff),
                       max_inflight=max_inflight)


@dataclass(frozen=True)
class RunConfig:
    environment_id: str
    feedback_style: str = "td"
    rewrite_mode: str = "replay"
    signals: str = "full"
    batch_size: int = 10
    k: int = 2
    validation_size: int = 100
    epochs: int = 8
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    gamma: float = 1.0
    history_budget: int = 8
    keep_incumbent: bool = False
    max_inflight: int = 1
    sql_match_mode: str = "execution"
    bundle: str | None = None
    templates: Mapping[str, str] = field(default_factory=dict)
    models: Mapping[str, ModelBinding] = field(default_factory=dict)

    def __post_init__(self) -> None:
        checks = [
            ("feedback_style", self.feedback_style in STYLES, f"one of {STYLES}"),
            ("rewrite_mode", self.rewrite_mode in ("basic", "replay"), "basic or replay"),
            ("signals", self.signals in PRESETS, f"one of {tuple(PRESETS)}"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("k", self.k >= 1, "must be >= 1"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("validation_size", self.validation_size >= 1, "must be >= 1"),
            ("seeds", len(self.seeds) >= 1, "needs at least one seed"),
            ("gamma", 0.0 <= self.gamma <= 1.0, "must lie in [0, 1]"),
            ("history_budget", self.history_budget >= 1, "must be >= 1"),
            ("max_inflight", self.max_inflight >= 1, "must be >= 1"),
            ("sql_match_mode", self.sql_match_mode in ("execution", "string"),
             "execution or string"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigError(name, message)

    def binding(self, role: str) -> ModelBinding:
        if role in self.models:
            return self.models[role]
        if "default" in self.models:
            return self.models["default"]
        return ModelBinding()

    def snapshot(self) -> dict[str, Any]:
        """JSON-ready dict of every field; used for the run log and config hashing."""
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["templates"] = dict(self.templates)
        d["models"] = {role: _binding_dict(b) for role, b in sorted(self.models.items())}
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], require: tuple[str, ...] = ()) -> RunConfig:
        for name in require:
            if name not in d:
                raise ConfigError(name, "missing")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        kw = dict(d)
        if "seeds" in kw:
            if not isinstance(kw["seeds"], (list, tuple)) or \
                    not all(isinstance(s, int) for s in kw["seeds"]):
                raise ConfigError("seeds", "must be a list of integers")
            kw["seeds"] = tuple(kw["seeds"])
        for name in ("batch_size", "k", "validation_size", "epochs", "history_budget",
                     "max_inflight"):
            if name in kw and (not isinstance(kw[name], int) or isinstance(kw[name], bool)):
                raise ConfigError(name, "must be an integer")
        models = kw.get("models", {})
        if not isinstance(models, Mapping):
            raise ConfigError("models", "must be an object keyed by role")
        for role in models:
            if role not in ROLES + ("default",):
                raise ConfigError(f"models.{role}", "unknown role")
        kw["models"] = {role: ModelBinding.from_dict(b, f"models.{role}")
                        for role, b in models.items()}
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError("environment_id", str(exc)) from exc


def _binding_dict(b: ModelBinding) -> dict[str, Any]:
    d = asdict(b)
    d["backoff"] = list(b.backoff)
    d["rules"] = [dict(r) for r in b.rules]
    return d


def load_config(path: str | Path) -> RunConfig:
    """Read a config file; every field in ``REQUIRED_FIELDS`` must be present."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("<file>", "must contain a JSON object")
    return RunConfig.from_dict(data, require=REQUIRED_FIELDS)
