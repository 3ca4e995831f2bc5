"""Plan-guided execution against a simulated device.

The device runs every app of a knowledge base as its ground-truth state
machine.  A screen is shown to the executor as a list of widgets, one per
transition that can fire from the current configuration, labelled with the
transition's event text.  :func:`run_episode` is the executor loop: ask the
executor for an action, apply it, record it, until the executor reports a
status or the step limit is hit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import prompts
from .efsm import Configuration, KnowledgeBase, apply_update, enabled_transitions, initial_configuration
from .gateway import GatewayError
from .plan import Plan, parse_open_app_step
from .solver import Target, bind_event

logger = logging.getLogger(__name__)

DEFAULT_STEP_LIMIT = 30

KINDS = ("click", "long_press", "input_text", "swipe", "open_app", "status")
DIRECTIONS = ("up", "down", "left", "right")
STATUSES = ("complete", "infeasible")

SUCCESS = "success"
STEP_LIMIT = "step_limit"
DECLARED_INFEASIBLE = "executor_declared_infeasible"
ENVIRONMENT_ERROR = "environment_error"

NO_FOREGROUND_APP = "NO_FOREGROUND_APP"
UNKNOWN_WIDGET = "UNKNOWN_WIDGET"
WIDGET_NOT_APPLICABLE = "WIDGET_NOT_APPLICABLE"
UNKNOWN_APP = "UNKNOWN_APP"

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class DeviceAction:
    kind: str
    widget: Optional[str] = None
    text: Optional[str] = None
    direction: Optional[str] = None
    app: Optional[str] = None
    status: Optional[str] = None

    @classmethod
    def click(cls, widget):
        return cls("click", widget=widget)

    @classmethod
    def long_press(cls, widget):
        return cls("long_press", widget=widget)

    @classmethod
    def input_text(cls, widget, text):
        return cls("input_text", widget=widget, text=text)

    @classmethod
    def swipe(cls, direction):
        return cls("swipe", direction=direction)

    @classmethod
    def open_app(cls, app):
        return cls("open_app", app=app)

    @classmethod
    def complete(cls):
        return cls("status", status="complete")

    @classmethod
    def infeasible(cls):
        return cls("status", status="infeasible")

    @property
    def is_status(self) -> bool:
        return self.kind == "status"

    def __str__(self):
        if self.kind in ("click", "long_press"):
            return f"{self.kind} {self.widget}"
        if self.kind == "input_text":
            return f"input_text {self.widget} {self.text}"
        if self.kind == "swipe":
            return f"swipe {self.direction}"
        if self.kind == "open_app":
            return f"open_app {self.app}"
        return f"status {self.status}"

    @classmethod
    def parse(cls, text: str) -> "DeviceAction":
        """Inverse of ``str()``; raises ValueError on malformed input."""
        parts = text.strip().split(None, 2)
        if not parts or parts[0] not in KINDS:
            raise ValueError(f"unknown action kind in {text!r}")
        kind, args = parts[0], parts[1:]
        if kind in ("click", "long_press", "swipe", "open_app", "status") and len(args) != 1:
            raise ValueError(f"{kind} takes exactly one argument")
        if kind == "input_text" and len(args) != 2:
            raise ValueError("input_text takes a widget id and text")
        if kind == "click":
            return cls.click(args[0])
        if kind == "long_press":
            return cls.long_press(args[0])
        if kind == "input_text":
            return cls.input_text(args[0], args[1])
        if kind == "swipe":
            if args[0] not in DIRECTIONS:
                raise ValueError(f"bad swipe direction {args[0]!r}")
            return cls.swipe(args[0])
        if kind == "open_app":
            if not _IDENT.match(args[0]):
                raise ValueError(f"bad app id {args[0]!r}")
            return cls.open_app(args[0])
        if args[0] not in STATUSES:
            raise ValueError(f"bad status {args[0]!r}")
        return cls("status", status=args[0])


@dataclass(frozen=True)
class Widget:
    id: str
    label: str


@dataclass(frozen=True)
class Observation:
    app: Optional[str]
    state: Optional[str]
    widgets: tuple[Widget, ...]
    step: int
    error: Optional[str] = None
    terminal: bool = False

    @property
    def home(self) -> bool:
        return self.app is None

    def to_dict(self) -> dict:
        return {
            "app": self.app,
            "state": self.state,
            "widgets": [[w.id, w.label] for w in self.widgets],
            "step": self.step,
            "error": self.error,
            "terminal": self.terminal,
        }

    def digest(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]

    def to_text(self) -> str:
        if self.home:
            lines = ["Home screen (no app open)."]
        else:
            lines = [f"App: {self.app}", f"Screen: {self.state}", "Widgets:"]
            lines += [f"  {w.id}: {w.label}" for w in self.widgets] or ["  (none)"]
        if self.error:
            lines.append(f"Last action failed: {self.error}")
        return "\n".join(lines)


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    action: DeviceAction
    observation: str  # digest of the observation the action produced


@dataclass(frozen=True)
class GoalSpec:
    calls: tuple[tuple[str, str, tuple[tuple[str, str], ...]], ...]

    def __init__(self, calls):
        norm = []
        for app, fn, args in calls:
            items = args.items() if hasattr(args, "items") else args
            norm.append((app, fn, tuple(sorted((str(k), str(v)) for k, v in items))))
        object.__setattr__(self, "calls", tuple(norm))

    @classmethod
    def from_intent(cls, intent) -> "GoalSpec":
        return cls((app, t.function, t.args) for app, targets in intent.entries for t in targets)

    def to_json(self) -> list:
        return [[a, f, dict(args)] for a, f, args in self.calls]


class EnvironmentTerminated(RuntimeError):
    pass


def widget_id(index: int) -> str:
    return f"w{index + 1}"


class SimulatedDevice:
    """Phone simulator whose apps are the given state machines.

    *bindings* passed to :meth:`reset` supply argument values for
    parameterised functions, as ``(app, function, args)`` triples consumed
    in order, much like a benchmark's task parameters.
    """

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self._index = {
            app: {t.id: i for i, t in enumerate(m.transitions)} for app, m in kb.items()
        }
        self.reset()

    def reset(self, bindings=()) -> Observation:
        self.configs: dict[str, Configuration] = {a: initial_configuration(m) for a, m in self.kb.items()}
        self.foreground: Optional[str] = None
        self.invoked: list[tuple[str, str, dict]] = []
        self.steps = 0
        self.terminal = False
        self._pending: dict[tuple[str, str], deque] = defaultdict(deque)
        for app, fn, args in bindings:
            self._pending[(app, fn)].append(dict(args))
        self._last = self._observe()
        return self._last

    def observation(self) -> Observation:
        return self._last

    def enabled(self, app: str):
        conf = self.configs[app]
        return enabled_transitions(self.kb[app], conf.state, conf.valuation)

    def _args_for(self, app, t) -> dict:
        queue = self._pending.get((app, t.action.function))
        if queue:
            return queue[0]
        return {p: f"<{p}>" for p in self.kb[app].function(t.action.function).params}

    def label(self, app, t) -> str:
        if t.action is None:
            return t.event
        return bind_event(self.kb[app], t, Target(t.action.function, self._args_for(app, t)))

    def _observe(self, error=None) -> Observation:
        if self.foreground is None:
            return Observation(None, None, (), self.steps, error, self.terminal)
        app = self.foreground
        idx = self._index[app]
        widgets = tuple(Widget(widget_id(idx[t.id]), self.label(app, t)) for t in self.enabled(app))
        return Observation(app, self.configs[app].state, widgets, self.steps, error, self.terminal)

    def step(self, action: DeviceAction) -> Observation:
        if self.terminal:
            raise EnvironmentTerminated("episode already ended")
        if action.kind not in KINDS:
            raise ValueError(f"unknown action kind {action.kind!r}")
        self.steps += 1
        error = None
        if action.kind == "status":
            self.terminal = True
        elif action.kind == "open_app":
            if action.app in self.kb:
                self.foreground = action.app
            else:
                error = UNKNOWN_APP
        elif action.kind == "swipe":
            pass
        elif self.foreground is None:
            error = NO_FOREGROUND_APP
        else:
            error = self._fire(action)
        self._last = self._observe(error)
        return self._last

    def _fire(self, action: DeviceAction) -> Optional[str]:
        app = self.foreground
        m = self.kb[app]
        wid = action.widget or ""
        index = int(wid[1:]) - 1 if wid[:1] == "w" and wid[1:].isdigit() else -1
        if not 0 <= index < len(m.transitions):
            return UNKNOWN_WIDGET
        t = m.transitions[index]
        conf = self.configs[app]
        if t not in self.enabled(app):
            return WIDGET_NOT_APPLICABLE
        if t.action is not None:
            args = dict(self._args_for(app, t))
            params = m.function(t.action.function).params
            if action.kind == "input_text" and len(params) == 1:
                args = {params[0]: action.text}
            queue = self._pending.get((app, t.action.function))
            if queue:
                queue.popleft()
            self.invoked.append((app, t.action.function, args))
        self.configs[app] = Configuration(t.target, apply_update(t.update, conf.valuation), conf.achieved)
        return None


def env_reset(kb: KnowledgeBase, bindings=()) -> tuple[SimulatedDevice, Observation]:
    env = SimulatedDevice(kb)
    return env, env.reset(bindings)


@dataclass
class Episode:
    instruction: str
    plan: Plan
    step_limit: int = DEFAULT_STEP_LIMIT
    history: list[HistoryEntry] = field(default_factory=list)
    outcome: Optional[str] = None
    invoked: list[tuple[str, str, dict]] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    detail: str = ""

    @property
    def steps(self) -> int:
        """Device actions taken, not counting the closing status report."""
        return sum(1 for h in self.history if not h.action.is_status)

    def set_outcome(self, outcome: str, detail: str = ""):
        if self.outcome is not None:
            raise RuntimeError("episode outcome already set")
        self.outcome = outcome
        self.detail = detail

    def trace_text(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in self.trace)

    def write_trace(self, path):
        Path(path).write_text(self.trace_text(), encoding="utf-8")


Executor = Callable[[str, Observation, Plan, tuple], DeviceAction]


def run_episode(env: SimulatedDevice, executor: Executor, instruction, plan: Plan,
                limit: int = DEFAULT_STEP_LIMIT, trace_path=None) -> Episode:
    """Executor loop over an already reset environment.

    Each executor query is one step; the loop stops when the executor
    reports a status or *limit* queries have been made.
    """
    text = getattr(instruction, "text", instruction)
    ep = Episode(text, plan, limit)
    obs = env.observation()
    ep.trace.append({"event": "reset", "observation": obs.digest(), "apps": list(env.kb)})
    while len(ep.history) < limit:
        step = len(ep.history) + 1
        try:
            action = executor(text, obs, plan, tuple(ep.history))
        except Exception as exc:  # executor crash counts as giving up
            logger.warning("executor raised at step %d: %s", step, exc)
            ep.set_outcome(DECLARED_INFEASIBLE, f"executor raised {type(exc).__name__}: {exc}")
            break
        try:
            obs = env.step(action)
        except Exception as exc:
            ep.set_outcome(ENVIRONMENT_ERROR, f"{type(exc).__name__}: {exc}")
            break
        ep.history.append(HistoryEntry(step, action, obs.digest()))
        record = {"event": "action", "step": step, "action": str(action), "observation": obs.digest()}
        if obs.error:
            record["error"] = obs.error
        ep.trace.append(record)
        if action.is_status:
            ep.set_outcome(SUCCESS if action.status == "complete" else DECLARED_INFEASIBLE)
            break
    if ep.outcome is None:
        ep.set_outcome(STEP_LIMIT)
    ep.invoked = list(env.invoked)
    ep.trace.append({
        "event": "outcome",
        "outcome": ep.outcome,
        "steps": ep.steps,
        "invoked": [[a, f, args] for a, f, args in ep.invoked],
    })
    if trace_path is not None:
        ep.write_trace(trace_path)
    return ep


def oracle_executor(instruction, obs: Observation, plan: Plan, history) -> DeviceAction:
    """Follow the plan literally, one action per step.

    "Open the X application." becomes ``open_app(X)``; any other step clicks
    the widget whose label equals the step text.
    """
    if plan.is_fallback:
        return DeviceAction.infeasible()
    cursor = sum(1 for h in history if not h.action.is_status)
    if cursor >= len(plan.steps):
        return DeviceAction.complete()
    step = plan.steps[cursor]
    app = parse_open_app_step(step)
    if app is not None:
        return DeviceAction.open_app(app)
    for w in obs.widgets:
        if w.label == step:
            return DeviceAction.click(w.id)
    return DeviceAction.infeasible()


def extract_action_line(reply: str) -> str:
    lines = [l.strip() for l in reply.strip().splitlines() if l.strip()]
    if not lines or not lines[-1].startswith("ACTION "):
        raise ValueError("reply does not end with an ACTION line")
    return lines[-1][len("ACTION "):]


def check_action(action: DeviceAction, obs: Observation) -> None:
    if action.kind in ("click", "long_press", "input_text"):
        if action.widget not in {w.id for w in obs.widgets}:
            raise ValueError(f"widget {action.widget} is not on the current screen")


class VlmExecutor:
    """Executor that asks a model for each action through a gateway.

    The reply may reason freely but must end with one ``ACTION ...`` line.
    An unusable reply gets one repair round; a second failure, or any
    gateway error, yields ``status infeasible`` for that step.
    """

    def __init__(self, gateway):
        self.gateway = gateway
        self.rejections: list[str] = []

    def _read(self, reply, obs) -> DeviceAction:
        action = DeviceAction.parse(extract_action_line(reply))
        check_action(action, obs)
        return action

    def __call__(self, instruction, obs: Observation, plan: Plan, history) -> DeviceAction:
        hist = "\n".join(f"{h.step}. {h.action}" for h in history)
        messages = prompts.executor_messages(instruction, plan.text().rstrip("\n"), obs.to_text(), hist)
        try:
            reply = self.gateway.complete(messages)
            try:
                return self._read(reply, obs)
            except ValueError as exc:
                self.rejections.append(str(exc))
                messages = messages + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": prompts.EXECUTOR_REPAIR.format(error=exc)},
                ]
            reply = self.gateway.complete(messages)
            try:
                return self._read(reply, obs)
            except ValueError as exc:
                self.rejections.append(str(exc))
                return DeviceAction.infeasible()
        except GatewayError as exc:
            logger.warning("executor gateway failure: %s", exc)
            return DeviceAction.infeasible()


def vlm_executor(gateway) -> VlmExecutor:
    return VlmExecutor(gateway)


def is_subsequence(needle, haystack) -> bool:
    it = iter(haystack)
    return all(any(item == h for h in it) for item in needle)


def check_goal(episode: Episode, goal: GoalSpec) -> bool:
    """True iff the episode succeeded and performed the goal calls in order."""
    if episode.outcome != SUCCESS:
        return False
    log = [(a, f, tuple(sorted(args.items()))) for a, f, args in episode.invoked]
    return is_subsequence(goal.calls, log)
