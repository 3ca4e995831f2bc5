"""Breadth-first search for minimal execution paths.

The search space is the product of screen, variable valuation and the
number of target functions already invoked.  A transition that performs a
primary function may only be taken when that function is the next pending
target, so the returned path never invokes anything the user did not ask
for.  Ties between equally short paths are broken by transition
declaration order, which makes results reproducible.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Optional

from .efsm import (
    PLACEHOLDER_RE,
    Configuration,
    Efsm,
    KnowledgeBase,
    Transition,
    Valuation,
    apply_update,
    eval_guard,
    initial_configuration,
)

DEFAULT_MAX_CONFIGURATIONS = 10**6


class PlanningError(Exception):
    code = "PLANNING_ERROR"


class ConfigSpaceExceeded(PlanningError):
    code = "CONFIG_SPACE_EXCEEDED"


class UnknownApp(PlanningError):
    code = "UNKNOWN_APP"


class InvalidTarget(PlanningError):
    code = "INVALID_TARGET"


@dataclass(frozen=True)
class Target:
    """One requested primary function call with its argument values."""

    function: str
    args: tuple[tuple[str, str], ...] = ()

    def __init__(self, function: str, args=()):
        object.__setattr__(self, "function", function)
        if isinstance(args, Mapping):
            args = args.items()
        object.__setattr__(self, "args", tuple(sorted((str(k), str(v)) for k, v in args)))

    @property
    def bindings(self) -> dict[str, str]:
        return dict(self.args)

    def __str__(self):
        inner = ", ".join(f"{k}={v}" for k, v in self.args)
        return f"{self.function}({inner})"


TargetSequence = tuple  # tuple[Target, ...]


def make_targets(items) -> tuple[Target, ...]:
    """Coerce names, ``(name, args)`` pairs or Targets into a target tuple."""
    out = []
    for item in items:
        if isinstance(item, Target):
            out.append(item)
        elif isinstance(item, str):
            out.append(Target(item))
        else:
            name, args = item
            out.append(Target(name, args))
    return tuple(out)


def check_targets(machine: Efsm, targets) -> None:
    for t in targets:
        if not machine.has_function(t.function):
            raise InvalidTarget(f"app {machine.app_id!r} has no function {t.function!r}")
        formals = set(machine.function(t.function).params)
        given = {k for k, _ in t.args}
        if formals != given:
            raise InvalidTarget(
                f"{t.function} expects arguments {sorted(formals)}, got {sorted(given)}"
            )


@dataclass(frozen=True)
class PathStep:
    transition: str
    event: str
    source: str
    target: str
    action: Optional[Target]
    valuation: Valuation


@dataclass(frozen=True)
class ExecutionPath:
    app_id: str
    steps: tuple[PathStep, ...] = ()

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def actions(self) -> list[Target]:
        return [s.action for s in self.steps if s.action is not None]


@dataclass(frozen=True)
class GlobalPath:
    segments: tuple[ExecutionPath, ...] = ()

    def __len__(self):
        return sum(len(s) for s in self.segments)


@dataclass(frozen=True)
class Infeasible:
    """No path exists.  Returned as a value, not raised."""

    app_id: Optional[str] = None
    reason: str = "no execution path invokes the targets in order"
    explored: int = field(default=0, compare=False)


class _Solver:
    def __init__(self, machine: Efsm, targets, limit):
        self.m = machine
        self.targets = targets
        self.k = len(targets)
        size = len(machine.states) * machine.valuation_count() * (self.k + 1)
        if size > limit:
            raise ConfigSpaceExceeded(
                f"app {machine.app_id!r}: {size} configurations exceed the ceiling of {limit}"
            )

    def successors(self, conf: Configuration):
        """Applicable (transition, next configuration) pairs, in declaration order."""
        k = self.k
        for t in self.m.outgoing(conf.state):
            if not eval_guard(t.guard, conf.valuation):
                continue
            achieved = conf.achieved
            if t.action is not None:
                if achieved >= k or t.action.function != self.targets[achieved].function:
                    continue
                achieved += 1
            yield t, Configuration(t.target, apply_update(t.update, conf.valuation), achieved)

    def run(self):
        start = initial_configuration(self.m)
        if self.k == 0:
            return ExecutionPath(self.m.app_id, ())
        parent: dict[Configuration, tuple[Optional[Configuration], Optional[Transition]]] = {start: (None, None)}
        queue = deque([start])
        while queue:
            conf = queue.popleft()
            for t, nxt in self.successors(conf):
                if nxt in parent:
                    continue
                parent[nxt] = (conf, t)
                if nxt.achieved == self.k:
                    return self.rebuild(nxt, parent)
                queue.append(nxt)
        return Infeasible(self.m.app_id, explored=len(parent))

    def rebuild(self, goal, parent) -> ExecutionPath:
        chain = []
        conf = goal
        while True:
            prev, t = parent[conf]
            if prev is None:
                break
            chain.append((prev, t, conf))
            conf = prev
        chain.reverse()
        steps = []
        for prev, t, conf in chain:
            target = self.targets[prev.achieved] if t.action is not None else None
            steps.append(PathStep(t.id, bind_event(self.m, t, target), t.source, t.target, target, conf.valuation))
        return ExecutionPath(self.m.app_id, tuple(steps))


def bind_event(machine: Efsm, t: Transition, target: Optional[Target]) -> str:
    """Event text of *t* with the call's argument values filled in."""
    if t.action is None:
        return t.event
    formals = machine.function(t.action.function).params
    args = target.bindings if target is not None else {}
    by_slot = {slot: args.get(formal) for slot, formal in zip(t.action.slots, formals)}

    def sub(m):
        value = by_slot.get(m.group(1))
        return m.group(0) if value is None else value

    return PLACEHOLDER_RE.sub(sub, t.event)


def solve(machine: Efsm, targets, *, max_configurations: int = DEFAULT_MAX_CONFIGURATIONS):
    """Shortest path from the initial configuration invoking *targets* in order.

    Returns an :class:`ExecutionPath`, or :class:`Infeasible` when the finite
    configuration space holds no such path.  Raises
    :class:`ConfigSpaceExceeded` if the space is larger than
    *max_configurations*, and :class:`InvalidTarget` for targets that do not
    match the machine's functions.
    """
    targets = make_targets(targets)
    check_targets(machine, targets)
    return _Solver(machine, targets, max_configurations).run()


def solve_all(kb: KnowledgeBase, intent, *, max_configurations: int = DEFAULT_MAX_CONFIGURATIONS):
    """Solve every (app, targets) entry of *intent*; all or nothing.

    *intent* is a ParsedIntent or any iterable of ``(app_id, targets)``.
    """
    entries = list(getattr(intent, "entries", intent))
    for app_id, _ in entries:
        if app_id not in kb:
            raise UnknownApp(f"unknown app {app_id!r}")
    segments = []
    for app_id, targets in entries:
        result = solve(kb[app_id], targets, max_configurations=max_configurations)
        if isinstance(result, Infeasible):
            return result
        segments.append(result)
    return GlobalPath(tuple(segments))


def replay_path(machine: Efsm, path: ExecutionPath) -> list[Target]:
    """Re-execute *path* from the initial configuration.

    Raises ``AssertionError`` if a step does not chain, its guard is false,
    or its recorded valuation disagrees; returns the functions performed.
    """
    conf = initial_configuration(machine)
    performed = []
    for step in path.steps:
        t = machine.transition(step.transition)
        assert t.source == conf.state == step.source, f"{t.id} does not start at {conf.state}"
        assert eval_guard(t.guard, conf.valuation), f"guard of {t.id} is false"
        val = apply_update(t.update, conf.valuation)
        assert val == step.valuation, f"valuation mismatch after {t.id}"
        assert "{" not in step.event or not PLACEHOLDER_RE.search(step.event), f"unresolved placeholder in {t.id}"
        if t.action is not None:
            assert step.action is not None and step.action.function == t.action.function
            performed.append(step.action)
        conf = Configuration(t.target, val, conf.achieved)
    return performed
