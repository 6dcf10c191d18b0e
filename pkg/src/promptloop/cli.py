"""Command-line entry point: ``promptloop <verb> ...``.

Exit codes: 0 success, 1 runtime failure, 2 validation or config failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any, Sequence

from .config import REQUIRED_FIELDS, ConfigError, RunConfig, load_config
from .core import PromptVersion, Trajectory, canonical_json
from .envs import TaskBundle, load_bundle, make_environment
from .errors import (AwaitingReviewError, BundleValidationError, InvalidArgumentError,
                     PromptLoopError, RunNotFoundError, StateError)
from .feedback import SignalSet
from .human import review
from .metrics import MethodRow, render_report
from .optimizer import Optimizer, evaluate_detailed, gateways_from_config
from .rewriter import write_seed_prompt
from .store import RunRecord, list_runs, load_run, read_records

logger = logging.getLogger("promptloop")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
CONFIG_NAME = "config.json"
PROMPT_NAME = "prompt.json"
INDEX_NAME = "bundle_index.json"
RUNS_DIR = "runs"
REPORT_FORMATS = ("table_text", "csv")


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                    encoding="utf-8")


def _read_prompt(path: Path) -> PromptVersion:
    """A ``prompt.json`` PromptVersion, or a plain text file as an expert seed."""
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            return PromptVersion.from_dict(json.loads(text))
        except (ValueError, KeyError) as exc:
            raise InvalidArgumentError(f"{path}: not a prompt document ({exc})") from exc
    return PromptVersion.seed(text.strip(), "seed_expert")


def _bundle_for(config: RunConfig, base: Path) -> TaskBundle:
    if not config.bundle:
        raise ConfigError("bundle", "missing")
    path = Path(config.bundle)
    return load_bundle(path if path.is_absolute() else base / path)


def _environment(config: RunConfig, bundle: TaskBundle):
    options = {"match_mode": config.sql_match_mode} if bundle.environment_id == "sql" else {}
    return make_environment(bundle, **options)


def _example_texts(bundle: TaskBundle, n: int = 3) -> list[str]:
    env = make_environment(bundle)
    out = []
    for task in bundle.split("train")[:n]:
        ctx = env.reset(task, 0).context
        out.append(ctx.goal_text or ctx.first_user_message)
    return out


# -- verbs -------------------------------------------------------------------

def cmd_init(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    bundle = load_bundle(args.bundle)
    models: dict[str, Any] = {}
    if args.models:
        models = json.loads(Path(args.models).read_text(encoding="utf-8"))
    config = RunConfig.from_dict({"environment_id": bundle.environment_id,
                                  "bundle": str(Path(args.bundle).resolve()), "models": models})
    if args.prompt_file:
        prompt = _read_prompt(Path(args.prompt_file))
    else:
        lm = config.binding("prompt-writer").make_gateway()
        text = write_seed_prompt(_example_texts(bundle), lm)
        prompt = PromptVersion.seed(text, "seed_generated")

    existing = run_dir / PROMPT_NAME
    if existing.exists() and list_runs(run_dir / RUNS_DIR):
        if _read_prompt(existing).id != prompt.id:
            raise StateError(f"{run_dir} already has runs started from another prompt")
    snapshot = config.snapshot()
    scaffold = {k: snapshot[k] for k in snapshot if k in REQUIRED_FIELDS or k in (
        "signals", "batch_size", "k", "validation_size", "gamma", "history_budget",
        "keep_incumbent", "max_inflight", "sql_match_mode")}
    scaffold["models"] = models
    _write_json(run_dir / CONFIG_NAME, scaffold)
    _write_json(run_dir / PROMPT_NAME, prompt.to_dict())
    _write_json(run_dir / INDEX_NAME, bundle.index())
    print(f"initialized {run_dir} ({prompt.provenance}, prompt {prompt.id[:12]})")
    return EXIT_OK


def _load_setup(args: argparse.Namespace) -> tuple[RunConfig, TaskBundle, Path]:
    config_path = Path(args.config)
    config = load_config(config_path)
    bundle = _bundle_for(config, config_path.parent)
    run_dir = Path(args.run_dir) if getattr(args, "run_dir", None) else config_path.parent
    return config, bundle, run_dir


def _initial_prompt(args: argparse.Namespace, run_dir: Path) -> PromptVersion:
    path = Path(args.prompt) if getattr(args, "prompt", None) else run_dir / PROMPT_NAME
    if not path.exists():
        raise InvalidArgumentError(f"no initial prompt at {path}; run init or pass --prompt")
    return _read_prompt(path)


def _runs(run_dir: Path, ids: Sequence[str] | None = None) -> list[RunRecord]:
    store = run_dir / RUNS_DIR
    return [load_run(store, rid) for rid in (ids or list_runs(store))]


def _write_reports(target: Path, runs: Sequence[Any], **kwargs: Any) -> list[Path]:
    written = []
    for fmt in REPORT_FORMATS:
        for name, content in render_report(runs, fmt, **kwargs).items():
            path = target / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
            written.append(path)
    return written


def cmd_optimize(args: argparse.Namespace) -> int:
    config, bundle, run_dir = _load_setup(args)
    prompt = _initial_prompt(args, run_dir)
    store = run_dir / RUNS_DIR
    optimizer = Optimizer(config, bundle, prompt, gateways_from_config(config), store)
    records = []
    for seed in config.seeds:
        run_id = optimizer.run_id(seed)
        try:
            before = load_run(store, run_id).status
        except RunNotFoundError:
            before = None
        if before == "complete":
            print(f"{run_id}: already complete")
        try:
            run = optimizer.run_seed(seed, args.stop_after)
        except AwaitingReviewError as exc:
            print(f"{exc.run_id}: awaiting human review of epoch {exc.epoch}; run "
                  f"'promptloop review --run-dir {run_dir} --run {exc.run_id} --epoch {exc.epoch}'")
            continue
        records.append(run)
        _write_reports(store / run.run_id / "reports", [run])
        curve = " ".join(f"{v:.3f}" for _, v in run.training_curve)
        print(f"{run.run_id}: {run.status}, curve {curve}")
    if records:
        _write_reports(run_dir / "reports", _runs(run_dir))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config, bundle, run_dir = _load_setup(args)
    if args.run:
        run = load_run(run_dir / RUNS_DIR, args.run)
        prompt = run.incumbent
    else:
        prompt = _initial_prompt(args, run_dir)
    tasks = bundle.split(args.split)
    agent = gateways_from_config(config)["system-agent"]
    ev = evaluate_detailed(prompt, _environment(config, bundle), tasks, agent=agent,
                           max_inflight=config.max_inflight, id_prefix=f"{args.split}-")
    print(canonical_json({"prompt_id": prompt.id, "split": args.split, **ev.to_dict()}))
    return EXIT_OK


def _table_from_file(path: Path) -> dict[str, Any]:
    """``{"rows": {name: [scores]}, "baseline": float | [scores], "backbones": [...]}``."""
    doc = json.loads(path.read_text(encoding="utf-8"))
    rows = [MethodRow(name, tuple(scores)) for name, scores in doc["rows"].items()]
    base = doc["baseline"]
    baseline = MethodRow("baseline", tuple(base)) if isinstance(base, list) else float(base)
    return {"rows": rows, "baseline": baseline, "backbones": doc.get("backbones")}


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    runs = _runs(run_dir, args.runs)
    kwargs = _table_from_file(Path(args.table)) if args.table else {}
    if not runs and not kwargs:
        raise RunNotFoundError(f"no runs under {run_dir / RUNS_DIR}")
    formats = REPORT_FORMATS if args.format == "all" else (args.format,)
    written = []
    for run in runs:
        target = run_dir / RUNS_DIR / run.run_id / "reports"
        for fmt in formats:
            for name, content in render_report([run], fmt).items():
                (target / name).parent.mkdir(parents=True, exist_ok=True)
                (target / name).write_text(content, encoding="utf-8")
                written.append(target / name)
    for fmt in formats:
        for name, content in render_report(runs, fmt, **kwargs).items():
            path = run_dir / "reports" / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
            written.append(path)
            if fmt == "table_text":
                print(content)
    return EXIT_OK


def _pick_run(run_dir: Path, run_id: str | None) -> str:
    if run_id:
        return run_id
    ids = list_runs(run_dir / RUNS_DIR)
    if len(ids) != 1:
        raise InvalidArgumentError(f"--run is required ({len(ids)} runs under {run_dir})")
    return ids[0]


def batch_for_epoch(records: Sequence[dict[str, Any]], epoch: int) -> list[Trajectory]:
    """The persisted batch of one epoch; state error if it is not complete yet."""
    of_epoch = [r for r in records if r["epoch"] == epoch]
    if not any(r["type"] == "batch_complete" for r in of_epoch):
        raise StateError(f"epoch {epoch} has no completed batch yet")
    if any(r["type"] == "epoch_summary" for r in of_epoch):
        raise StateError(f"epoch {epoch} is already finished")
    return [Trajectory.from_dict(r["data"]["trajectory"]) for r in of_epoch
            if r["type"] == "trajectory"]


def cmd_review(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    run_id = _pick_run(run_dir, args.run)
    store = run_dir / RUNS_DIR
    records = read_records(store, run_id).records
    batch = batch_for_epoch(records, args.epoch)
    signals = SignalSet.preset(records[0]["data"]["config"].get("signals", "full"))
    record = review(store / run_id, run_id, args.epoch, batch, signals,
                    reviewer=args.reviewer, amend=args.amend)
    print(f"stored feedback for epoch {record.epoch} (revision {record.revision}); "
          f"rerun optimize to continue")
    return EXIT_OK


def cmd_replay_run(args: argparse.Namespace) -> int:
    """Re-judge every persisted trajectory and compare with the logged outcome."""
    run_dir = Path(args.run_dir)
    run_id = _pick_run(run_dir, args.run)
    records = read_records(run_dir / RUNS_DIR, run_id).records
    config = RunConfig.from_dict(records[0]["data"]["config"])
    bundle = _bundle_for(config, run_dir)
    env = _environment(config, bundle)
    prompts = {}
    for rec in records:
        for key in ("initial_prompt", "next_incumbent"):
            if key in rec["data"]:
                prompts[rec["data"][key]["id"]] = rec["data"][key]["text"]
    counts: dict[str, int] = defaultdict(int)
    for rec in records:
        if rec["type"] != "trajectory":
            continue
        traj = Trajectory.from_dict(rec["data"]["trajectory"])
        score = env.judge(bundle.tasks[traj.task_instance_id], traj,
                          prompts.get(traj.prompt_id, ""))
        counts["match" if score == traj.outcome else "mismatch"] += 1
    print(canonical_json({"run_id": run_id, "match": counts["match"],
                          "mismatch": counts["mismatch"]}))
    return EXIT_OK if counts["mismatch"] == 0 else EXIT_RUNTIME


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptloop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("init", help="create a run directory from a task bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--run-dir", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompt-file", help="expert-written seed prompt (text or prompt.json)")
    src.add_argument("--generate", action="store_true",
                     help="ask the prompt-writer model for a seed prompt")
    p.add_argument("--models", help="JSON file of model bindings keyed by role")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("optimize", help="run or resume every seed of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", help="defaults to the config file's directory")
    p.add_argument("--prompt", help="initial prompt (defaults to <run-dir>/prompt.json)")
    p.add_argument("--stop-after", type=int, help="stop cleanly after this epoch")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="score a prompt on one split")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir")
    target = p.add_mutually_exclusive_group()
    target.add_argument("--prompt")
    target.add_argument("--run", help="use this run's final incumbent")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="write tables and training curves")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--runs", nargs="*")
    p.add_argument("--format", default="all", choices=REPORT_FORMATS + ("all",))
    p.add_argument("--table", help="JSON file with explicit method rows and baseline")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("review", help="enter human feedback for an epoch's batch")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run")
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--reviewer", default="expert")
    p.add_argument("--amend", action="store_true", help="supersede earlier feedback")
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("replay-run", help="re-judge a run's persisted trajectories")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run")
    p.set_defaults(func=cmd_replay_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BundleValidationError as exc:
        print("error: invalid task bundle", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (InvalidArgumentError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PromptLoopError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
