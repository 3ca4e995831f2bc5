"""Random models and tasks for property tests, benchmarks and demos.

Everything takes a :class:`random.Random` so results depend only on the
seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .dsl import serialize_model
from .efsm import (
    Action,
    Atom,
    Efsm,
    Guard,
    KnowledgeBase,
    PrimaryFunction,
    Transition,
    Update,
    VarDecl,
)
from .harness import GoalSpec
from .parsing import Lexicon, ParsedIntent
from .solver import GlobalPath, Target, solve_all

_WORDS = ("open", "tap", "press", "select", "toggle", "choose", "confirm", "slide")


def random_efsm(
    rng: random.Random,
    app_id: str = "demo",
    *,
    max_states: int = 6,
    max_vars: int = 3,
    max_transitions: int = 12,
    max_functions: int = 3,
    enums: bool = False,
    rename_slots: bool = False,
    fancy_text: bool = False,
) -> Efsm:
    """A random valid machine.

    Event texts are unique within the machine so the text of a plan step
    identifies its transition.  ``enums`` mixes in enumeration variables,
    ``rename_slots`` uses slot names differing from the formals, and
    ``fancy_text`` puts quotes, backslashes and non-ASCII text into strings
    (for round-trip tests).
    """
    n_states = rng.randint(1, max_states)
    states = tuple(f"s{i}" for i in range(n_states))
    initial = rng.choice(states)

    variables = []
    for i in range(rng.randint(0, max_vars)):
        if enums and rng.random() < 0.4:
            values = tuple(f"e{j}" for j in range(rng.randint(2, 4)))
            variables.append(VarDecl(f"v{i}", "enum", values, rng.choice(values)))
        else:
            variables.append(VarDecl(f"v{i}", "bool", ("false", "true"), rng.choice(("false", "true"))))

    functions = []
    for i in range(rng.randint(0, max_functions)):
        params = tuple(f"p{j}" for j in range(rng.choice((0, 0, 1, 2))))
        desc = ""
        if rng.random() < 0.7:
            desc = f"Perform f{i}" + "".join(f" with {{{p}}}" for p in params)
            if fancy_text and rng.random() < 0.5:
                desc += ' "quoted" \\ café'
        functions.append(PrimaryFunction(f"f{i}", params, desc))

    transitions = []
    for i in range(rng.randint(0, max_transitions)):
        src = rng.choice(states)
        dst = rng.choice(states)
        guard_vars = rng.sample(variables, rng.randint(0, min(2, len(variables))))
        guard = Guard(tuple(
            Atom(v.name, rng.choice(("==", "!=")), rng.choice(v.values)) for v in guard_vars
        ))
        upd_vars = rng.sample(variables, rng.randint(0, min(2, len(variables))))
        update = Update(tuple((v.name, rng.choice(v.values)) for v in upd_vars))
        action = None
        text = f"{rng.choice(_WORDS).capitalize()} control {i} on {src}"
        if functions and rng.random() < 0.4:
            f = rng.choice(functions)
            slots = tuple(f"x{j}" for j in range(len(f.params))) if rename_slots else f.params
            action = Action(f.name, slots)
            if slots:
                text += " using " + " and ".join(f"{{{s}}}" for s in slots)
        if fancy_text and rng.random() < 0.3:
            text += ' "now" \\ ñ'
        transitions.append(Transition(f"t{i}", src, dst, text, action, guard, update))

    return Efsm(app_id, states, initial, tuple(variables), tuple(functions), tuple(transitions))


def random_targets(rng: random.Random, machine: Efsm, max_targets: int = 2) -> tuple[Target, ...]:
    if not machine.functions:
        return ()
    out = []
    for _ in range(rng.randint(0, max_targets)):
        f = rng.choice(machine.functions)
        out.append(Target(f.name, {p: f"val{rng.randint(0, 99)}" for p in f.params}))
    return tuple(out)


def random_kb(rng: random.Random, n_apps: int = 2, prefix: str = "app", **kwargs) -> KnowledgeBase:
    return KnowledgeBase(random_efsm(rng, f"{prefix}{i}", **kwargs) for i in range(n_apps))


# ---------------------------------------------------------------------------
# Closed-loop tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    task_id: str
    kb: KnowledgeBase
    lexicon_entries: tuple[tuple[str, str], ...]
    instruction: str
    intent: ParsedIntent
    goal: GoalSpec
    feasible: bool

    @property
    def lexicon(self) -> Lexicon:
        return Lexicon.from_entries(self.lexicon_entries)


def lexicon_entries(kb: KnowledgeBase) -> list[tuple[str, str]]:
    """One pattern per function: ``do <app> <fn> [with {p0} and {p1}]``."""
    entries = []
    for app_id, m in kb.items():
        for f in m.functions:
            pattern = f"do {app_id} {f.name}"
            if f.params:
                pattern += " with " + " and ".join(f"{{{p}}}" for p in f.params)
            entries.append((pattern, f"{app_id}.{f.name}"))
    return entries


def phrase(app_id: str, target: Target, params) -> str:
    text = f"do {app_id} {target.function}"
    if params:
        b = target.bindings
        text += " with " + " and ".join(b[p] for p in params)
    return text


def random_task(rng: random.Random, task_id: str = "task", *, feasible: bool = True,
                max_apps: int = 2, attempts: int = 500) -> Task:
    """Random task whose solvability matches *feasible*.

    Apps are named ``<task_id>_app<i>`` so tasks can share one device.
    """
    for _ in range(attempts):
        kb = random_kb(rng, rng.randint(1, max_apps), prefix=f"{task_id}_app")
        entries = []
        for app_id, m in kb.items():
            if not m.functions or (entries and rng.random() < 0.5):
                continue
            targets = random_targets(rng, m)
            if targets:
                entries.append((app_id, targets))
        if not entries:
            continue
        intent = ParsedIntent(entries)
        if isinstance(solve_all(kb, intent), GlobalPath) != feasible:
            continue
        words = []
        for app_id, targets in intent.entries:
            for t in targets:
                words.append(phrase(app_id, t, kb[app_id].function(t.function).params))
        return Task(
            task_id=task_id,
            kb=kb,
            lexicon_entries=tuple(lexicon_entries(kb)),
            instruction=" then ".join(words),
            intent=intent,
            goal=GoalSpec.from_intent(intent),
            feasible=feasible,
        )
    raise RuntimeError(f"no {'feasible' if feasible else 'infeasible'} task found in {attempts} attempts")


def write_benchmark(out_dir, n_tasks: int, seed: int, *, infeasible: int = 0, executor: str = "oracle") -> Path:
    """Write models, lexicon and a run manifest for generated tasks.

    Returns the manifest path.
    """
    rng = random.Random(seed)
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    tasks = [random_task(rng, f"task{i:03d}") for i in range(n_tasks)]
    tasks += [random_task(rng, f"task{n_tasks + i:03d}", feasible=False) for i in range(infeasible)]
    lexicon = []
    manifest_tasks = []
    for t in tasks:
        (out / "models" / f"{t.task_id}.efsm").write_text(serialize_model(t.kb), encoding="utf-8")
        lexicon += t.lexicon_entries
        manifest_tasks.append({"id": t.task_id, "instruction": t.instruction, "goal": t.goal.to_json()})
    (out / "tasks.lex").write_text(Lexicon.from_entries(lexicon).to_text(), encoding="utf-8")
    manifest = {
        "models": "models",
        "lexicon": "tasks.lex",
        "executor": executor,
        "seed": seed,
        "out": "results",
        "tasks": manifest_tasks,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path
