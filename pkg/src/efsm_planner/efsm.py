"""Extended finite state machine model.

An application is described by screens (states), primary functions it can
perform, internal configuration variables, and guarded transitions between
screens.  Raw descriptions (as produced by the text parser or built by hand)
are checked by :func:`validate_efsm`, which either returns an immutable
:class:`Efsm` or raises :class:`ModelError` listing every problem found.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from math import prod
from typing import Optional

logger = logging.getLogger(__name__)

BOOL_VALUES = ("false", "true")
MAX_ENUM_VALUES = 64
VALUATION_WARN_LIMIT = 2**16

KEYWORDS = frozenset(
    {
        "app", "vars", "states", "functions", "transitions", "bool", "enum",
        "on", "when", "set", "does", "and", "true", "false",
    }
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

# diagnostic codes
UNKNOWN_STATE = "UNKNOWN_STATE"
UNKNOWN_VAR = "UNKNOWN_VAR"
UNKNOWN_FUNCTION = "UNKNOWN_FUNCTION"
DOMAIN_MISMATCH = "DOMAIN_MISMATCH"
DUPLICATE_NAME = "DUPLICATE_NAME"
BAD_PLACEHOLDER = "BAD_PLACEHOLDER"
NO_INITIAL_STATE = "NO_INITIAL_STATE"
ARITY_MISMATCH = "ARITY_MISMATCH"
BAD_IDENTIFIER = "BAD_IDENTIFIER"
EMPTY_EVENT = "EMPTY_EVENT"


def is_identifier(name: object) -> bool:
    return isinstance(name, str) and bool(_IDENT_RE.match(name)) and name not in KEYWORDS


def placeholders(text: str) -> list[str]:
    """Placeholder names appearing in *text*, in order of appearance."""
    return PLACEHOLDER_RE.findall(text)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int = 1

    def __post_init__(self):
        if self.line < 1 or self.column < 1 or self.length < 1:
            raise ValueError(f"invalid span {self.line}:{self.column}+{self.length}")

    def __str__(self):
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    location: str = ""
    span: Optional[SourceSpan] = None
    severity: str = "error"

    def __str__(self):
        where = f"{self.span}: " if self.span else ""
        loc = f" [{self.location}]" if self.location else ""
        return f"{where}{self.severity}: {self.code}: {self.message}{loc}"


class ModelError(Exception):
    """Raised when a model fails validation; carries all diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.diagnostics]


# ---------------------------------------------------------------------------
# Raw (unvalidated) descriptions
# ---------------------------------------------------------------------------
# Each raw node keeps a ``spans`` dict keyed by field name so diagnostics can
# point at the offending token.  Hand-built descriptions may leave it empty.


@dataclass
class RawVar:
    name: str
    kind: str  # "bool" or "enum"
    values: list[str] = field(default_factory=list)
    initial: Optional[str] = None
    spans: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class RawFunction:
    name: str
    params: list[str] = field(default_factory=list)
    description: str = ""
    spans: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class RawAtom:
    var: str
    op: str  # "==" or "!="
    value: str
    spans: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class RawAssign:
    var: str
    value: str
    spans: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class RawTransition:
    id: str
    source: str
    target: str
    event: str
    guard: list[RawAtom] = field(default_factory=list)
    update: list[RawAssign] = field(default_factory=list)
    action: Optional[str] = None
    # slot names bound positionally to the function's formals; None = same names
    action_args: Optional[list[str]] = None
    spans: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class RawApp:
    app_id: str
    states: list[str] = field(default_factory=list)
    initial: Optional[str] = None
    vars: list[RawVar] = field(default_factory=list)
    functions: list[RawFunction] = field(default_factory=list)
    transitions: list[RawTransition] = field(default_factory=list)
    spans: dict = field(default_factory=dict, compare=False, repr=False)
    # per-state spans, parallel to ``states``
    state_spans: list = field(default_factory=list, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Validated model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str
    values: tuple[str, ...]
    initial: str

    @classmethod
    def boolean(cls, name, initial="false"):
        return cls(name, "bool", BOOL_VALUES, initial)

    @classmethod
    def enum(cls, name, values, initial=None):
        values = tuple(values)
        return cls(name, "enum", values, values[0] if initial is None else initial)


class Valuation(Mapping):
    """Immutable total assignment of literals to the declared variables.

    Backed by two parallel tuples so it is cheap to hash inside the search.
    """

    __slots__ = ("_names", "_values", "_hash")

    def __init__(self, names=(), values=()):
        self._names = tuple(names)
        self._values = tuple(values)
        if len(self._names) != len(self._values):
            raise ValueError("names and values differ in length")
        self._hash = hash((self._names, self._values))

    @classmethod
    def of(cls, decls, bindings: Mapping[str, str]) -> "Valuation":
        """Build a checked valuation over *decls* from a name->literal map."""
        names = [d.name for d in decls]
        extra = set(bindings) - set(names)
        missing = [n for n in names if n not in bindings]
        if extra or missing:
            raise ValueError(f"valuation not total: missing={missing} extra={sorted(extra)}")
        for d in decls:
            if bindings[d.name] not in d.values:
                raise ValueError(f"{bindings[d.name]!r} not in domain of {d.name}")
        return cls(names, [bindings[n] for n in names])

    @property
    def values(self) -> tuple[str, ...]:
        return self._values

    def __getitem__(self, key):
        try:
            return self._values[self._names.index(key)]
        except ValueError:
            raise KeyError(key) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __len__(self):
        return len(self._names)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Valuation):
            return self._names == other._names and self._values == other._values
        return Mapping.__eq__(self, other)

    def __repr__(self):
        inner = ", ".join(f"{n}={v}" for n, v in zip(self._names, self._values))
        return f"Valuation({inner})"

    def replace(self, assignments) -> "Valuation":
        values = list(self._values)
        for name, value in assignments:
            values[self._names.index(name)] = value
        return Valuation(self._names, values)


@dataclass(frozen=True)
class Atom:
    var: str
    op: str
    value: str

    def holds(self, valuation: Mapping[str, str]) -> bool:
        if self.op == "==":
            return valuation[self.var] == self.value
        return valuation[self.var] != self.value


@dataclass(frozen=True)
class Guard:
    """Conjunction of (in)equality atoms.  No atoms means always true."""

    atoms: tuple[Atom, ...] = ()

    def __bool__(self):
        return bool(self.atoms)


@dataclass(frozen=True)
class Update:
    assignments: tuple[tuple[str, str], ...] = ()

    def __bool__(self):
        return bool(self.assignments)


@dataclass(frozen=True)
class PrimaryFunction:
    name: str
    params: tuple[str, ...] = ()
    description: str = ""


@dataclass(frozen=True)
class Action:
    """A primary function performed by a transition.

    ``slots`` are the placeholder names the event text uses for each formal
    parameter, in formal order.
    """

    function: str
    slots: tuple[str, ...] = ()


@dataclass(frozen=True)
class Transition:
    id: str
    source: str
    target: str
    event: str
    action: Optional[Action] = None
    guard: Guard = Guard()
    update: Update = Update()

    @property
    def kinds(self) -> frozenset[str]:
        """Roles this transition plays: navigation, configuration, function."""
        kinds = set()
        if self.action is None:
            kinds.add("navigation")
        else:
            kinds.add("function")
        if self.update:
            kinds.add("configuration")
        return frozenset(kinds)


@dataclass(frozen=True)
class Efsm:
    app_id: str
    states: tuple[str, ...]
    initial: str
    vars: tuple[VarDecl, ...] = ()
    functions: tuple[PrimaryFunction, ...] = ()
    transitions: tuple[Transition, ...] = ()
    _outgoing: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _functions: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        outgoing = {s: [] for s in self.states}
        for t in self.transitions:
            outgoing.setdefault(t.source, []).append(t)
        object.__setattr__(self, "_outgoing", {s: tuple(ts) for s, ts in outgoing.items()})
        object.__setattr__(self, "_functions", {f.name: f for f in self.functions})

    def outgoing(self, state: str) -> tuple[Transition, ...]:
        """Transitions leaving *state*, in declaration order."""
        return self._outgoing.get(state, ())

    def function(self, name: str) -> PrimaryFunction:
        return self._functions[name]

    def has_function(self, name: str) -> bool:
        return name in self._functions

    def transition(self, tid: str) -> Transition:
        for t in self.transitions:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def valuation_count(self) -> int:
        return prod(len(v.values) for v in self.vars)


class KnowledgeBase(Mapping):
    """Ordered collection of application models keyed by app id."""

    def __init__(self, machines=()):
        machines = tuple(machines)
        seen = {}
        dupes = []
        for m in machines:
            if m.app_id in seen:
                dupes.append(Diagnostic(DUPLICATE_NAME, f"duplicate app id {m.app_id!r}", m.app_id))
            seen[m.app_id] = m
        if dupes:
            raise ModelError(dupes)
        self._machines = seen

    def __getitem__(self, app_id) -> Efsm:
        return self._machines[app_id]

    def __iter__(self):
        return iter(self._machines)

    def __len__(self):
        return len(self._machines)

    def __eq__(self, other):
        if isinstance(other, KnowledgeBase):
            return list(self._machines.items()) == list(other._machines.items())
        return NotImplemented

    __hash__ = None

    def __repr__(self):
        return f"KnowledgeBase({list(self._machines)})"


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------


def eval_guard(guard: Guard, valuation: Mapping[str, str]) -> bool:
    return all(atom.holds(valuation) for atom in guard.atoms)


def apply_update(update: Update, valuation: Valuation) -> Valuation:
    if not update.assignments:
        return valuation
    return valuation.replace(update.assignments)


def enabled_transitions(machine: Efsm, state: str, valuation) -> list[Transition]:
    """Transitions out of *state* whose guard holds, in declaration order."""
    return [t for t in machine.outgoing(state) if eval_guard(t.guard, valuation)]


@dataclass(frozen=True)
class Configuration:
    state: str
    valuation: Valuation
    achieved: int = 0


def initial_valuation(machine: Efsm) -> Valuation:
    return Valuation([v.name for v in machine.vars], [v.initial for v in machine.vars])


def initial_configuration(machine: Efsm) -> Configuration:
    return Configuration(machine.initial, initial_valuation(machine), 0)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


class _Checker:
    def __init__(self, raw: RawApp):
        self.raw = raw
        self.diags: list[Diagnostic] = []

    def report(self, code, message, location, spans=None, key=None):
        span = None
        if spans and key is not None:
            span = spans.get(key)
        self.diags.append(Diagnostic(code, message, location, span))

    def ident(self, name, what, location, spans, key):
        if not is_identifier(name):
            self.report(BAD_IDENTIFIER, f"{what} {name!r} is not a valid identifier", location, spans, key)

    def run(self) -> list[Diagnostic]:
        raw = self.raw
        app_loc = f"app {raw.app_id}"
        self.ident(raw.app_id, "app id", app_loc, raw.spans, "app_id")

        # states
        seen = set()
        for i, s in enumerate(raw.states):
            sspans = {"name": raw.state_spans[i]} if i < len(raw.state_spans) else {}
            self.ident(s, "state", f"state {s}", sspans, "name")
            if s in seen:
                self.report(DUPLICATE_NAME, f"duplicate state {s!r}", f"state {s}", sspans, "name")
            seen.add(s)
        states = seen
        if raw.initial is None or raw.initial not in states:
            what = "no initial state" if raw.initial is None else f"initial state {raw.initial!r} is not declared"
            self.report(NO_INITIAL_STATE, what, app_loc, raw.spans, "initial" if raw.initial else "app_id")

        # variables
        decls = {}
        for v in raw.vars:
            loc = f"var {v.name}"
            self.ident(v.name, "variable", loc, v.spans, "name")
            if v.name in decls:
                self.report(DUPLICATE_NAME, f"duplicate variable {v.name!r}", loc, v.spans, "name")
                continue
            if v.kind == "bool":
                values = BOOL_VALUES
            elif v.kind == "enum":
                values = tuple(v.values)
                if not 2 <= len(values) <= MAX_ENUM_VALUES:
                    self.report(DOMAIN_MISMATCH, f"enum needs 2..{MAX_ENUM_VALUES} values, got {len(values)}",
                                loc, v.spans, "kind")
                dup = sorted({x for x in values if values.count(x) > 1})
                if dup:
                    self.report(DUPLICATE_NAME, f"duplicate enum literal(s) {', '.join(dup)}", loc, v.spans, "kind")
                for x in values:
                    self.ident(x, "enum literal", loc, v.spans, "kind")
            else:
                self.report(DOMAIN_MISMATCH, f"unsupported variable type {v.kind!r}", loc, v.spans, "kind")
                values = ()
            if v.initial not in values:
                self.report(DOMAIN_MISMATCH, f"initial value {v.initial!r} not in domain of {v.name}",
                            loc, v.spans, "initial")
            decls[v.name] = values

        # functions
        funcs = {}
        for f in raw.functions:
            loc = f"function {f.name}"
            self.ident(f.name, "function", loc, f.spans, "name")
            if f.name in funcs:
                self.report(DUPLICATE_NAME, f"duplicate function {f.name!r}", loc, f.spans, "name")
                continue
            for p in f.params:
                self.ident(p, "parameter", loc, f.spans, "params")
            if len(set(f.params)) != len(f.params):
                self.report(DUPLICATE_NAME, f"duplicate parameter in {f.name}", loc, f.spans, "params")
            funcs[f.name] = f

        # transitions
        tids = set()
        for t in raw.transitions:
            self.transition(t, tids, states, decls, funcs)

        return self.diags

    def literal(self, var, value, decls, loc, spans, key):
        if var in decls and value not in decls[var]:
            self.report(DOMAIN_MISMATCH, f"{value!r} is not in the domain of {var}", loc, spans, key)

    def transition(self, t, tids, states, decls, funcs):
        loc = f"transition {t.id}"
        self.ident(t.id, "transition id", loc, t.spans, "id")
        if t.id in tids:
            self.report(DUPLICATE_NAME, f"duplicate transition id {t.id!r}", loc, t.spans, "id")
        tids.add(t.id)
        for key in ("source", "target"):
            name = getattr(t, key)
            if name not in states:
                self.report(UNKNOWN_STATE, f"unknown {key} state {name!r}", loc, t.spans, key)
        if not t.event or not t.event.strip():
            self.report(EMPTY_EVENT, "event text is empty", loc, t.spans, "event")

        for atom in t.guard:
            if atom.var not in decls:
                self.report(UNKNOWN_VAR, f"guard uses undeclared variable {atom.var!r}", loc, atom.spans, "var")
            if atom.op not in ("==", "!="):
                self.report(DOMAIN_MISMATCH, f"bad comparator {atom.op!r}", loc, atom.spans, "op")
            self.literal(atom.var, atom.value, decls, loc, atom.spans, "value")

        assigned = set()
        for a in t.update:
            if a.var not in decls:
                self.report(UNKNOWN_VAR, f"update assigns undeclared variable {a.var!r}", loc, a.spans, "var")
            if a.var in assigned:
                self.report(DUPLICATE_NAME, f"variable {a.var!r} assigned twice", loc, a.spans, "var")
            assigned.add(a.var)
            self.literal(a.var, a.value, decls, loc, a.spans, "value")

        slots: list[str] = []
        if t.action is not None:
            f = funcs.get(t.action)
            if f is None:
                self.report(UNKNOWN_FUNCTION, f"unknown function {t.action!r}", loc, t.spans, "action")
            else:
                slots = list(f.params) if t.action_args is None else list(t.action_args)
                if len(slots) != len(f.params):
                    self.report(ARITY_MISMATCH,
                                f"{t.action} takes {len(f.params)} argument(s), {len(slots)} given",
                                loc, t.spans, "action")
                if len(set(slots)) != len(slots):
                    self.report(DUPLICATE_NAME, f"duplicate slot name in call to {t.action}", loc, t.spans, "action")
                for s in slots:
                    self.ident(s, "slot", loc, t.spans, "action")
        elif t.action_args:
            self.report(UNKNOWN_FUNCTION, "arguments given without a function", loc, t.spans, "event")
        for ph in placeholders(t.event or ""):
            if ph not in slots:
                self.report(BAD_PLACEHOLDER, f"placeholder {{{ph}}} is not a parameter of this transition's function",
                            loc, t.spans, "event")


def check_efsm(raw: RawApp) -> list[Diagnostic]:
    """All diagnostics for *raw*; an empty list means it is well formed."""
    return _Checker(raw).run()


def validate_efsm(raw: RawApp) -> Efsm:
    """Validate a raw description and build the immutable model.

    Raises :class:`ModelError` carrying every violation found.
    """
    diags = check_efsm(raw)
    if diags:
        raise ModelError(diags)
    funcs = {f.name: f for f in raw.functions}
    machine = Efsm(
        app_id=raw.app_id,
        states=tuple(raw.states),
        initial=raw.initial,
        vars=tuple(
            VarDecl(v.name, v.kind, BOOL_VALUES if v.kind == "bool" else tuple(v.values), v.initial)
            for v in raw.vars
        ),
        functions=tuple(PrimaryFunction(f.name, tuple(f.params), f.description) for f in raw.functions),
        transitions=tuple(
            Transition(
                id=t.id,
                source=t.source,
                target=t.target,
                event=t.event,
                action=None if t.action is None else Action(
                    t.action,
                    tuple(funcs[t.action].params if t.action_args is None else t.action_args),
                ),
                guard=Guard(tuple(Atom(a.var, a.op, a.value) for a in t.guard)),
                update=Update(tuple((a.var, a.value) for a in t.update)),
            )
            for t in raw.transitions
        ),
    )
    n = machine.valuation_count()
    if n > VALUATION_WARN_LIMIT:
        logger.warning("app %s has %d variable valuations; solving may be slow", machine.app_id, n)
    return machine


def to_raw(machine: Efsm) -> RawApp:
    """Inverse of :func:`validate_efsm` (without source spans)."""
    return RawApp(
        app_id=machine.app_id,
        states=list(machine.states),
        initial=machine.initial,
        vars=[RawVar(v.name, v.kind, list(v.values) if v.kind == "enum" else [], v.initial) for v in machine.vars],
        functions=[RawFunction(f.name, list(f.params), f.description) for f in machine.functions],
        transitions=[
            RawTransition(
                id=t.id,
                source=t.source,
                target=t.target,
                event=t.event,
                guard=[RawAtom(a.var, a.op, a.value) for a in t.guard.atoms],
                update=[RawAssign(n, v) for n, v in t.update.assignments],
                action=t.action.function if t.action else None,
                action_args=list(t.action.slots) if t.action else None,
            )
            for t in machine.transitions
        ],
    )


def build_knowledge_base(raws) -> KnowledgeBase:
    """Validate several raw apps at once, collecting diagnostics across all."""
    diags = []
    machines = []
    for raw in raws:
        try:
            machines.append(validate_efsm(raw))
        except ModelError as exc:
            diags.extend(exc.diagnostics)
    if diags:
        raise ModelError(diags)
    return KnowledgeBase(machines)
