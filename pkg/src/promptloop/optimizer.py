"""The epoch loop: collect a batch, get feedback, rewrite, validate, select.

Every event is appended to the run log as it happens, so a run can be
resumed after an interruption. Records between the last epoch boundary and
the end of the log are discarded on resume, except a completed batch, whose
trajectories are reused (a human review may refer to them).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import filelock
import numpy as np

from .config import ROLES, RunConfig
from .core import PromptVersion, Score, TaskInstance, Trajectory, canonical_json
from .envs import Environment, TaskBundle, make_environment, run_episode
from .errors import (AwaitingReviewError, EpochError, FeedbackParseError, InvalidArgumentError,
                     StateError, TransportError)
from .feedback import EpochFeedback, SignalSet, epoch_feedback
from .human import active_record
from .lm import CallRecord, Gateway, capture_calls
from .rewriter import CandidatePrompt, ReplayBuffer, generate_candidates
from .store import (EpochRecord, RunRecord, append_record, config_hash, log_path, make_record,
                    read_log, replay_state, run_dir, truncate_log)

logger = logging.getLogger(__name__)

VALIDATION_SEED = 0
BOUNDARY_TYPES = ("baseline", "epoch_summary")


# -- sampling ----------------------------------------------------------------

def derive_seed(*parts: int) -> int:
    """A 32-bit seed that is a pure function of ``parts``."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def sample_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[int]:
    """Task indices for one epoch's batch.

    Positions ``(epoch-1)*B .. epoch*B`` of an endless stream made of
    independent permutations of ``range(n)``, so no task repeats before every
    task has been used once.
    """
    if n < 1:
        raise InvalidArgumentError("train split is empty")
    if batch_size < 1 or epoch < 1:
        raise InvalidArgumentError("batch_size and epoch must be >= 1")
    out = []
    perms: dict[int, np.ndarray] = {}
    for pos in range((epoch - 1) * batch_size, epoch * batch_size):
        cycle = pos // n
        if cycle not in perms:
            perms[cycle] = np.random.default_rng([seed, cycle]).permutation(n)
        out.append(int(perms[cycle][pos % n]))
    return out


def sample_tasks(tasks: Sequence[TaskInstance], batch_size: int, seed: int,
                 epoch: int) -> list[TaskInstance]:
    return [tasks[i] for i in sample_indices(len(tasks), batch_size, seed, epoch)]


# -- episodes ----------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeResult:
    trajectory: Trajectory
    calls: tuple[CallRecord, ...]


def _as_prompt(prompt: PromptVersion | str) -> PromptVersion:
    return prompt if isinstance(prompt, PromptVersion) else PromptVersion.seed(prompt)


def _run_one(env: Environment, task: TaskInstance, prompt: PromptVersion, agent: Gateway,
             seed: int, trajectory_id: str) -> EpisodeResult:
    with capture_calls() as calls:
        traj = run_episode(env, task, prompt, agent, seed, trajectory_id)
    return EpisodeResult(traj, tuple(calls))


def _map(fn: Callable[[int], Any], n: int, max_inflight: int) -> list[Any]:
    if max_inflight <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(max_inflight, n)) as pool:
        return list(pool.map(fn, range(n)))


def collect_episodes(prompt: PromptVersion | str, env: Environment,
                     tasks: Sequence[TaskInstance], batch_size: int, seed: int, *,
                     agent: Gateway, epoch: int = 1, max_inflight: int = 1) -> list[EpisodeResult]:
    """Batch episodes with the calls each one made, in slot order."""
    prompt = _as_prompt(prompt)
    picked = sample_tasks(tasks, batch_size, seed, epoch)

    def play(slot: int) -> EpisodeResult:
        ep_seed = derive_seed(seed, epoch, slot)
        tid = f"e{epoch}-b{slot}"
        try:
            return _run_one(env, picked[slot], prompt, agent, ep_seed, tid)
        except StateError as first:
            # one retry on a fresh task
            rng = np.random.default_rng([seed, epoch, slot, 1])
            task = tasks[int(rng.integers(len(tasks)))]
            logger.warning("episode %s failed (%s); retrying on task %s", tid, first, task.id)
            try:
                return _run_one(env, task, prompt, agent, ep_seed, tid)
            except StateError as second:
                raise EpochError(f"episode {tid} failed twice: {second}") from second

    return _map(play, batch_size, max_inflight)


def collect_batch(prompt: PromptVersion | str, env: Environment, tasks: Sequence[TaskInstance],
                  batch_size: int, seed: int, *, agent: Gateway, epoch: int = 1,
                  max_inflight: int = 1) -> list[Trajectory]:
    """``batch_size`` judged trajectories played with ``prompt``."""
    return [r.trajectory for r in collect_episodes(prompt, env, tasks, batch_size, seed,
                                                   agent=agent, epoch=epoch,
                                                   max_inflight=max_inflight)]


@dataclass(frozen=True)
class Evaluation:
    score: Score
    per_task: tuple[tuple[str, float], ...]
    calls: tuple[CallRecord, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"score": self.score.to_dict(),
                "per_task": [{"task_id": t, "value": v} for t, v in self.per_task]}


def mean_score(scores: Sequence[Score]) -> Score:
    """Mean of per-task scores; a mean of binary outcomes is reported as a scalar."""
    kinds = {s.kind for s in scores}
    kind = kinds.pop() if len(kinds) == 1 else "scalar"
    if kind == "success_binary":
        kind = "scalar"
    return Score(kind, float(np.mean([s.value for s in scores])))


def evaluate_detailed(prompt: PromptVersion | str, env: Environment,
                      tasks: Sequence[TaskInstance], seed: int = VALIDATION_SEED, *,
                      agent: Gateway, max_inflight: int = 1,
                      id_prefix: str = "v") -> Evaluation:
    if not tasks:
        raise InvalidArgumentError("validation split is empty")
    prompt = _as_prompt(prompt)

    def play(i: int) -> EpisodeResult:
        return _run_one(env, tasks[i], prompt, agent, derive_seed(seed, i), f"{id_prefix}{i}")

    results = _map(play, len(tasks), max_inflight)
    scores = [r.trajectory.outcome for r in results]
    return Evaluation(mean_score(scores),
                      tuple((t.id, s.value) for t, s in zip(tasks, scores)),
                      tuple(c for r in results for c in r.calls))


def evaluate_prompt(prompt: PromptVersion | str, env: Environment,
                    tasks: Sequence[TaskInstance], seed: int = VALIDATION_SEED, *,
                    agent: Gateway, max_inflight: int = 1) -> Score:
    """Mean outcome of one episode per task, with fixed per-task seeds."""
    return evaluate_detailed(prompt, env, tasks, seed, agent=agent,
                             max_inflight=max_inflight).score


def select_candidate(candidates: Sequence[CandidatePrompt | float | Score | None]) -> int:
    """Position of the best-scoring candidate; ties go to the lowest candidate index."""
    if not candidates:
        raise InvalidArgumentError("no candidates to select from")
    keyed = []
    for pos, c in enumerate(candidates):
        if isinstance(c, CandidatePrompt):
            score, index = c.validation_score, c.candidate_index
        else:
            score, index = c, pos
        if score is None:
            raise StateError(f"candidate {index} has no validation score")
        value = score.value if isinstance(score, Score) else float(score)
        keyed.append((-value, index, pos))
    return min(keyed)[2]


# -- gateways ----------------------------------------------------------------

def gateways_from_config(config: RunConfig) -> dict[str, Gateway]:
    """One gateway per role. Roles bound to the same binding share a backend."""
    backends: dict[int, Any] = {}
    out = {}
    for role in ROLES:
        binding = config.binding(role)
        key = id(binding)
        if key not in backends:
            backends[key] = binding.make_backend()
        out[role] = binding.make_gateway(config.max_inflight, backends[key])
    return out


def _call_data(call: CallRecord) -> dict[str, Any]:
    if call.request.role == "system-agent":
        # episodes are logged as trajectories; keep agent calls compact
        resp = call.response.to_dict()
        return {"tag": call.request.tag, "model_id": call.request.model_id,
                "finish_reason": resp["finish_reason"], "usage": resp["usage"]}
    return call.to_dict()


# -- run state ---------------------------------------------------------------

class _Log:
    def __init__(self, store: Path, run_id: str, next_seq: int):
        self.store = store
        self.run_id = run_id
        self.seq = next_seq

    def write(self, epoch: int, type_: str, data: Mapping[str, Any]) -> int:
        seq = self.seq
        append_record(self.store, make_record(self.run_id, seq, epoch, type_, data))
        self.seq += 1
        return seq

    def calls(self, epoch: int, calls: Sequence[CallRecord]) -> None:
        for c in calls:
            self.write(epoch, "lm_call", _call_data(c))


@dataclass
class _SeedState:
    run: RunRecord
    incumbent: PromptVersion
    buffer: ReplayBuffer
    pending_batch: list[Trajectory] | None = None
    curve: list[tuple[int, float]] = field(default_factory=list)


def _record_bytes(rec: Mapping[str, Any]) -> int:
    return len((canonical_json(rec) + "\n").encode("utf-8"))


class Optimizer:
    """Runs the loop for every seed of a config, persisting to ``store``.

    ``gateways`` maps roles ("system-agent", "feedbacker", "rewriter") to
    gateways; a single gateway is used for every role.
    """

    def __init__(self, config: RunConfig, bundle: TaskBundle, initial_prompt: PromptVersion,
                 gateways: Mapping[str, Gateway] | Gateway, store: str | Path, *,
                 environment: Environment | None = None):
        if bundle.environment_id != config.environment_id:
            raise InvalidArgumentError(
                f"bundle is for {bundle.environment_id!r}, config for {config.environment_id!r}")
        self.config = config
        self.bundle = bundle
        self.initial_prompt = initial_prompt
        if isinstance(gateways, Gateway):
            gateways = {role: gateways for role in ROLES}
        self.gateways = dict(gateways)
        self.store = Path(store)
        options = {"match_mode": config.sql_match_mode} if bundle.environment_id == "sql" else {}
        self.env = environment or make_environment(bundle, **options)
        self.train = bundle.split("train")
        self.validation = bundle.split("validation")[:config.validation_size]
        self.signals = SignalSet.preset(config.signals)
        self.snapshot = config.snapshot()
        self.config_hash = config_hash(self.snapshot)

    def gateway(self, role: str) -> Gateway:
        try:
            return self.gateways[role]
        except KeyError:
            raise InvalidArgumentError(f"no gateway bound for role {role!r}") from None

    def run_id(self, seed: int) -> str:
        return f"{self.config_hash[:8]}-s{seed}"

    def run_path(self, seed: int) -> Path:
        return run_dir(self.store, self.run_id(seed))

    # -- public entry points -------------------------------------------------

    def optimize(self, stop_after: int | None = None) -> list[RunRecord]:
        return [self.run_seed(seed, stop_after) for seed in self.config.seeds]

    def run_seed(self, seed: int, stop_after: int | None = None) -> RunRecord:
        """Run (or resume) one seed; ``stop_after`` stops cleanly after that epoch."""
        run_id = self.run_id(seed)
        path = self.run_path(seed)
        path.mkdir(parents=True, exist_ok=True)
        lock = filelock.FileLock(str(path / "writer.lock"), timeout=0)
        try:
            lock.acquire()
        except filelock.Timeout:
            raise StateError(f"run {run_id} is being written by another process") from None
        try:
            return self._run_locked(seed, run_id, stop_after)
        finally:
            lock.release()

    # -- internals -------------------------------------------------------------

    def _resume(self, seed: int, run_id: str) -> tuple[_Log, _SeedState | None]:
        path = log_path(self.store, run_id)
        if not path.exists():
            return _Log(self.store, run_id, 0), None
        records = read_log(path).records
        if not records:
            truncate_log(path, 0)
            return _Log(self.store, run_id, 0), None
        start = records[0]["data"]
        if start.get("initial_prompt", {}).get("id") != self.initial_prompt.id:
            raise StateError(f"run {run_id} was started from a different initial prompt")
        if any(r["type"] == "run_complete" for r in records):
            run = replay_state(records)
            return _Log(self.store, run_id, len(records)), _SeedState(run, run.incumbent, run.buffer)

        keep = 1
        for i, rec in enumerate(records):
            if rec["type"] in BOUNDARY_TYPES:
                keep = i + 1
        pending = None
        tail = records[keep:]
        done = [i for i, r in enumerate(tail) if r["type"] == "batch_complete"]
        if done:
            kept_tail = tail[:done[0] + 1]
            pending = [Trajectory.from_dict(r["data"]["trajectory"])
                       for r in kept_tail if r["type"] == "trajectory"]
            keep += len(kept_tail)
        if keep < len(records):
            logger.info("run %s: discarding %d records after the last boundary",
                        run_id, len(records) - keep)
        truncate_log(path, sum(_record_bytes(r) for r in records[:keep]))
        records = records[:keep]
        run = replay_state(records)
        state = _SeedState(run, run.incumbent, run.buffer, pending, list(run.training_curve))
        return _Log(self.store, run_id, keep), state

    def _run_locked(self, seed: int, run_id: str, stop_after: int | None) -> RunRecord:
        log, state = self._resume(seed, run_id)
        if state is not None and state.run.status == "complete":
            logger.info("run %s already complete", run_id)
            return state.run
        try:
            if state is None:
                log.write(0, "run_start", {"config": self.snapshot, "seed": seed,
                                           "config_hash": self.config_hash,
                                           "initial_prompt": self.initial_prompt.to_dict()})
                state = _SeedState(self._reload(run_id), self.initial_prompt, ReplayBuffer())
            if not state.curve:
                ev = self._evaluate(self.initial_prompt, "e0-")
                log.calls(0, ev.calls)
                log.write(0, "baseline", {"prompt_id": self.initial_prompt.id, **ev.to_dict(),
                                          "mean": ev.score.value})
                state.curve.append((0, ev.score.value))
            first = len(state.curve)
            for epoch in range(first, self.config.epochs + 1):
                if stop_after is not None and epoch > stop_after:
                    return self._reload(run_id)
                self._epoch(seed, epoch, state, log)
            log.write(self.config.epochs, "run_complete",
                      {"training_curve": [[e, v] for e, v in state.curve]})
        except TransportError as exc:
            log.write(len(state.curve) if state else 0, "run_aborted",
                      {"error": str(exc), "attempts": exc.attempts})
            raise
        return self._reload(run_id)

    def _reload(self, run_id: str) -> RunRecord:
        return replay_state(read_log(log_path(self.store, run_id)).records)

    def _evaluate(self, prompt: PromptVersion, prefix: str) -> Evaluation:
        return evaluate_detailed(prompt, self.env, self.validation, VALIDATION_SEED,
                                 agent=self.gateway("system-agent"),
                                 max_inflight=self.config.max_inflight, id_prefix=prefix + "v")

    def _epoch(self, seed: int, epoch: int, state: _SeedState, log: _Log) -> EpochRecord:
        cfg = self.config
        incumbent = state.incumbent
        batch = state.pending_batch
        state.pending_batch = None
        if batch is None:
            try:
                results = collect_episodes(incumbent, self.env, self.train, cfg.batch_size, seed,
                                           agent=self.gateway("system-agent"), epoch=epoch,
                                           max_inflight=cfg.max_inflight)
            except EpochError as exc:
                return self._skip(epoch, state, log, (), None, f"(no feedback: {exc})", str(exc))
            for r in results:
                log.calls(epoch, r.calls)
                log.write(epoch, "trajectory", {"trajectory": r.trajectory.to_dict()})
            batch = [r.trajectory for r in results]
            log.write(epoch, "batch_complete", {
                "trajectory_ids": [t.id for t in batch],
                "mean": mean_score([t.outcome for t in batch]).value})
        ids = tuple(t.id for t in batch)

        human = active_record(self.run_path(seed), epoch)
        if human is not None:
            if tuple(human.trajectory_ids) != ids:
                raise StateError(f"human feedback for epoch {epoch} names other trajectories")
            fb: EpochFeedback = human.as_epoch_feedback()
            source = {"source": "human", "reviewer": human.reviewer,
                      "revision": human.revision}
        elif cfg.feedback_style == "human":
            raise AwaitingReviewError(log.run_id, epoch)
        else:
            try:
                with capture_calls() as calls:
                    fb = epoch_feedback(cfg.feedback_style, batch, self.signals,
                                        self.gateway("feedbacker"), epoch)
            except FeedbackParseError as exc:
                log.calls(epoch, calls)
                return self._skip(epoch, state, log, ids, None,
                                  f"(no feedback: {exc})", f"feedback failed: {exc}")
            log.calls(epoch, calls)
            source = {"source": "model"}
        feedback_seq = log.write(epoch, "feedback", {**source, "feedback": fb.to_dict()})
        buffer = state.buffer.append(incumbent, fb.aggregate_text)

        try:
            with capture_calls() as calls:
                batch_c = generate_candidates(cfg.rewrite_mode, self.gateway("rewriter"), cfg.k,
                                              buffer=buffer, budget_entries=cfg.history_budget,
                                              template_overrides=cfg.templates)
        except EpochError as exc:
            log.calls(epoch, calls)
            return self._skip(epoch, state, log, ids, feedback_seq, fb.aggregate_text, str(exc),
                              buffer=buffer)
        log.calls(epoch, calls)
        for w in batch_c.warnings:
            log.write(epoch, "warning", {"message": w})

        scored = []
        for cand in batch_c.candidates:
            log.write(epoch, "candidate", {"candidate": cand.to_dict()})
            prompt = self._candidate_prompt(cand, epoch, incumbent)
            ev = self._evaluate(prompt, f"e{epoch}-c{cand.candidate_index}-")
            log.calls(epoch, ev.calls)
            log.write(epoch, "validation", {"candidate_index": cand.candidate_index,
                                            "prompt_id": prompt.id, **ev.to_dict()})
            scored.append(cand.scored(ev.score))

        sel = select_candidate(scored)
        chosen = self._candidate_prompt(scored[sel], epoch, incumbent)
        value = scored[sel].validation_score.value
        kept = False
        if cfg.keep_incumbent and state.curve and state.curve[-1][1] > value:
            chosen, value, kept = incumbent, state.curve[-1][1], True
        record = EpochRecord(epoch, incumbent.id, ids, feedback_seq, tuple(scored),
                             scored[sel].candidate_index, chosen.id, kept_incumbent=kept)
        return self._finish(epoch, state, log, record, buffer, chosen, value)

    @staticmethod
    def _candidate_prompt(cand: CandidatePrompt, epoch: int,
                          incumbent: PromptVersion) -> PromptVersion:
        if cand.text == incumbent.text:
            return incumbent
        return PromptVersion.rewritten(cand.text, epoch + 1, incumbent)

    def _skip(self, epoch: int, state: _SeedState, log: _Log, ids: tuple[str, ...],
              feedback_seq: int | None, feedback_text: str, reason: str, *,
              buffer: ReplayBuffer | None = None) -> EpochRecord:
        logger.warning("epoch %d skipped: %s", epoch, reason)
        log.write(epoch, "warning", {"message": f"epoch skipped: {reason}"})
        if buffer is None:
            buffer = state.buffer.append(state.incumbent, feedback_text)
        record = EpochRecord(epoch, state.incumbent.id, ids, feedback_seq, (), None,
                             state.incumbent.id, skipped=True)
        return self._finish(epoch, state, log, record, buffer, state.incumbent,
                            state.curve[-1][1])

    def _finish(self, epoch: int, state: _SeedState, log: _Log, record: EpochRecord,
                buffer: ReplayBuffer, chosen: PromptVersion, value: float) -> EpochRecord:
        log.write(epoch, "epoch_summary", {"record": record.to_dict(),
                                           "buffer_entry": buffer.latest.to_dict(),
                                           "next_incumbent": chosen.to_dict(),
                                           "curve_value": value})
        state.buffer = buffer
        state.incumbent = chosen
        state.curve.append((epoch, value))
        return record


def optimize(config: RunConfig, bundle: TaskBundle, initial_prompt: PromptVersion,
             gateways: Mapping[str, Gateway] | Gateway | None = None, *,
             store: str | Path, stop_after: int | None = None) -> list[RunRecord]:
    """One :class:`RunRecord` per seed in ``config.seeds``."""
    gws = gateways if gateways is not None else gateways_from_config(config)
    return Optimizer(config, bundle, initial_prompt, gws, store).optimize(stop_after)


__all__ = [
    "EpisodeResult", "Evaluation", "Optimizer", "collect_batch", "collect_episodes",
    "derive_seed", "evaluate_detailed", "evaluate_prompt", "gateways_from_config", "mean_score",
    "optimize", "sample_indices", "sample_tasks", "select_candidate",
]
