"""Command-line entry point: ``validate``, ``solve``, ``plan`` and ``run``.

Exit status: 0 on success, 1 for model/instruction/manifest problems,
2 for I/O failures.  Diagnostics go to stderr; stdout only carries results.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .dsl import load_models
from .efsm import ModelError
from .gateway import ENV_BASE, ENV_KEY, ENV_MODEL, GatewayConfig, GatewayError, HttpGateway, ReplayGateway
from .harness import (
    DEFAULT_STEP_LIMIT,
    GoalSpec,
    SimulatedDevice,
    check_goal,
    oracle_executor,
    run_episode,
    vlm_executor,
)
from .parsing import IntentError, Lexicon, LexiconError
from .pipeline import plan_instruction
from .plan import FALLBACK_MESSAGE
from .solver import Infeasible, PlanningError, Target, solve

EXIT_OK, EXIT_ERROR, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    exit_code = EXIT_ERROR


class IOFailure(Exception):
    exit_code = EXIT_IO


def _err(msg):
    print(msg, file=sys.stderr)


def _load_kb(path):
    if path is None:
        raise UsageError("--models is required")
    p = Path(path)
    if not p.exists():
        raise IOFailure(f"no such file or directory: {path}")
    if p.is_dir() and not any(p.glob("*.efsm")):
        raise IOFailure(f"no .efsm files in {path}")
    try:
        return load_models(p)
    except OSError as exc:
        raise IOFailure(str(exc)) from None


def _load_lexicon(path):
    try:
        return Lexicon.load(path)
    except OSError as exc:
        raise IOFailure(str(exc)) from None
    except LexiconError as exc:
        raise UsageError(f"{path}: {exc}") from None


def gateway_config(args, manifest_gateway: Optional[dict] = None, environ=None) -> Optional[GatewayConfig]:
    """Resolve gateway settings: flags, then environment, then manifest."""
    env = os.environ if environ is None else environ
    manifest_gateway = manifest_gateway or {}
    base = getattr(args, "gateway_base", None) or env.get(ENV_BASE) or manifest_gateway.get("base_url")
    model = getattr(args, "gateway_model", None) or env.get(ENV_MODEL) or manifest_gateway.get("model")
    key = env.get(ENV_KEY) or manifest_gateway.get("api_key")
    if not base:
        return None
    extra = {k: manifest_gateway[k] for k in ("timeout", "max_retries", "temperature") if k in manifest_gateway}
    seed = getattr(args, "seed", None)
    return GatewayConfig(base_url=base, model=model or "", api_key=key, seed=seed, **extra)


def _gateway(args, manifest_gateway=None):
    if getattr(args, "replay", None):
        path = Path(args.replay)
        if not path.exists():
            raise IOFailure(f"no such transcript: {path}")
        return ReplayGateway(path)
    cfg = gateway_config(args, manifest_gateway)
    return HttpGateway(cfg) if cfg else None


_TARGET_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def parse_target(text: str) -> Target:
    """``fn`` or ``fn(key=value, ...)``."""
    m = _TARGET_RE.match(text)
    if not m:
        raise UsageError(f"bad target {text!r}; expected name or name(key=value,...)")
    args = {}
    if m.group(2) and m.group(2).strip():
        for part in m.group(2).split(","):
            key, eq, value = part.partition("=")
            if not eq:
                raise UsageError(f"bad argument {part.strip()!r} in {text!r}")
            args[key.strip()] = value.strip()
    return Target(m.group(1), args)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    paths = list(args.paths) or ([args.models] if args.models else [])
    if not paths:
        raise UsageError("no model files given")
    diags = []
    apps = 0
    for path in paths:
        p = Path(path)
        if not p.exists():
            raise IOFailure(f"no such file or directory: {path}")
        try:
            apps += len(load_models(p))
        except ModelError as exc:
            diags.extend(exc.diagnostics)
        except OSError as exc:
            raise IOFailure(str(exc)) from None
    if diags:
        for d in diags:
            _err(str(d))
        return EXIT_ERROR
    print(f"ok: {apps} app(s) valid")
    return EXIT_OK


def format_path(path) -> str:
    if isinstance(path, Infeasible):
        return FALLBACK_MESSAGE + "\n"
    if not path.steps:
        return "empty path (goal already satisfied)\n"
    lines = []
    for i, s in enumerate(path.steps, 1):
        line = f"{i}. {s.transition}: {s.source} -> {s.target} {json.dumps(s.event, ensure_ascii=False)}"
        if s.action is not None:
            line += f" does {s.action}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_solve(args) -> int:
    kb = _load_kb(args.models)
    if args.app not in kb:
        raise UsageError(f"unknown app {args.app!r}")
    targets = [parse_target(t) for t in args.targets]
    try:
        path = solve(kb[args.app], targets)
    except PlanningError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(format_path(path))
    return EXIT_OK


def cmd_plan(args) -> int:
    kb = _load_kb(args.models)
    lexicon = None
    gateway = None
    if args.parser == "lexicon":
        if not args.lexicon:
            raise UsageError("--lexicon is required with --parser lexicon")
        lexicon = _load_lexicon(args.lexicon)
    if args.parser == "llm" or args.polish:
        gateway = _gateway(args)
        if gateway is None:
            raise UsageError(f"no gateway configured (use --gateway-base, {ENV_BASE} or --replay)")
    try:
        result = plan_instruction(kb, args.instruction, lexicon=lexicon, gateway=gateway, polish=args.polish)
    except (IntentError, PlanningError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    except GatewayError as exc:
        raise UsageError(f"gateway error: {exc}") from None
    sys.stdout.write(result.plan.text())
    return EXIT_OK


@dataclass
class RunManifest:
    base: Path
    models: str
    tasks: list
    lexicon: Optional[str] = None
    executor: str = "oracle"
    gateway: dict = field(default_factory=dict)
    replay: Optional[str] = None
    seed: int = 0
    out: str = "results"
    step_limit: int = DEFAULT_STEP_LIMIT

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IOFailure(str(exc)) from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict) or "models" not in data or "tasks" not in data:
            raise UsageError(f"{path}: manifest needs 'models' and 'tasks'")
        known = {"models", "tasks", "lexicon", "executor", "gateway", "replay", "seed", "out", "step_limit"}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"{path}: unknown manifest field(s) {', '.join(sorted(unknown))}")
        m = cls(base=path.parent, **data)
        if m.executor not in ("oracle", "vlm"):
            raise UsageError(f"{path}: executor must be 'oracle' or 'vlm'")
        ids = [t.get("id") for t in m.tasks]
        if any(not i for i in ids) or len(set(ids)) != len(ids):
            raise UsageError(f"{path}: every task needs a unique 'id'")
        for t in m.tasks:
            if not t.get("instruction"):
                raise UsageError(f"{path}: task {t['id']} has no instruction")
        return m

    def resolve(self, rel) -> Optional[Path]:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else self.base / p


@dataclass
class TaskResult:
    task_id: str
    outcome: str
    steps: int
    goal_met: bool
    wall_time: float
    detail: str = ""

    def line(self) -> str:
        return f"{self.task_id}\t{self.outcome}\tsteps={self.steps}\tgoal={'pass' if self.goal_met else 'fail'}"


def format_report(results) -> str:
    results = sorted(results, key=lambda r: r.task_id)
    wins = sum(r.goal_met for r in results)
    rate = 100.0 * wins / len(results) if results else 0.0
    lines = [r.line() for r in results]
    lines.append(f"aggregate\ttasks={len(results)}\tsuccesses={wins}\tsuccess_rate={rate:.1f}")
    return "\n".join(lines) + "\n"


def _run_task(task, kb, lexicon, gateway, executor_kind, step_limit, trace_dir) -> TaskResult:
    started = time.perf_counter()
    tid = task["id"]
    goal = GoalSpec(task.get("goal", []))
    try:
        result = plan_instruction(kb, task["instruction"], lexicon=lexicon, gateway=gateway)
    except (IntentError, PlanningError, GatewayError, ValueError) as exc:
        return TaskResult(tid, "parse_error", 0, False, time.perf_counter() - started, str(exc))
    env = SimulatedDevice(kb)
    env.reset(goal.calls)
    executor = oracle_executor if executor_kind == "oracle" else vlm_executor(gateway)
    ep = run_episode(env, executor, task["instruction"], result.plan, step_limit,
                     trace_path=trace_dir / f"{tid}.jsonl")
    return TaskResult(tid, ep.outcome, ep.steps, check_goal(ep, goal), time.perf_counter() - started, ep.detail)


def cmd_run(args) -> int:
    manifest = RunManifest.load(args.manifest)
    if args.seed is not None:
        manifest.seed = args.seed
    args.seed = manifest.seed
    if args.executor:
        manifest.executor = args.executor
    replay = args.replay or manifest.resolve(manifest.replay)
    args.replay = str(replay) if replay else None
    try:
        kb = _load_kb(manifest.resolve(manifest.models))
    except ModelError as exc:
        for d in exc.diagnostics:
            _err(str(d))
        raise UsageError("manifest models are invalid") from None
    lexicon = _load_lexicon(manifest.resolve(manifest.lexicon)) if manifest.lexicon else None
    gateway = None
    if manifest.executor == "vlm" or lexicon is None:
        gateway = _gateway(args, manifest.gateway)
        if gateway is None:
            raise UsageError("executor 'vlm' or model-based parsing needs a gateway config or replay transcript")

    out = Path(args.out) if args.out else manifest.resolve(manifest.out)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    def one(task):
        return _run_task(task, kb, lexicon, gateway, manifest.executor, manifest.step_limit, trace_dir)

    jobs = max(1, args.jobs or 1)
    if jobs == 1:
        results = [one(t) for t in manifest.tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, manifest.tasks))
    report = format_report(results)
    (out / "report.txt").write_text(report, encoding="utf-8")
    timings = "".join(f"{r.task_id}\t{r.wall_time:.4f}\n" for r in sorted(results, key=lambda r: r.task_id))
    (out / "timings.tsv").write_text(timings, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--models", help="model file or directory of .efsm files")
    shared.add_argument("--lexicon", help="lexicon file (pattern<TAB>app.function)")
    shared.add_argument("--gateway-base", help=f"chat-completions base URL (env {ENV_BASE})")
    shared.add_argument("--gateway-model", help=f"model identifier (env {ENV_MODEL})")
    shared.add_argument("--replay", help="serve model replies from a recorded transcript")
    shared.add_argument("--jobs", type=int, default=1, help="episodes to run in parallel")
    shared.add_argument("--seed", type=int, help="seed passed to the model endpoint")
    shared.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="efsm-planner", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[shared], help="check model files")
    p.add_argument("paths", nargs="*")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", parents=[shared], help="shortest path for target functions")
    p.add_argument("--app", required=True)
    p.add_argument("targets", nargs="*", help="name or name(key=value,...)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("plan", parents=[shared], help="plan for a natural-language instruction")
    p.add_argument("--parser", choices=("lexicon", "llm"), default="lexicon")
    p.add_argument("--polish", action="store_true", help="rewrite the plan with the model")
    p.add_argument("instruction")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", parents=[shared], help="run the episodes of a manifest")
    p.add_argument("--executor", choices=("oracle", "vlm"))
    p.add_argument("manifest")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, IOFailure) as exc:
        _err(f"error: {exc}")
        return exc.exit_code
    except ModelError as exc:
        for d in exc.diagnostics:
            _err(str(d))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
