"""Instruction parsing: natural language to apps and target functions.

Two parsers produce a :class:`ParsedIntent`: a deterministic keyword
lexicon (used for hermetic pipelines and tests) and a language-model
parser that talks through a gateway handle.  Both results are checked by
the same :func:`validate_intent`.
"""

from __future__ import annotations

import logging
import shlex
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .efsm import Diagnostic, KnowledgeBase, is_identifier
from .solver import Target

logger = logging.getLogger(__name__)

CONNECTIVES = frozenset({"and", "then"})
PUNCTUATION = ",.;:!?"


class IntentError(Exception):
    code = "INTENT_ERROR"


class NoMatch(IntentError):
    code = "NO_MATCH"


class AmbiguousMatch(IntentError):
    code = "AMBIGUOUS_MATCH"


class IntentValidationError(IntentError):
    code = "INVALID_INTENT"

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ParseFailure(IntentError):
    """The model's reply stayed invalid after one repair round."""

    code = "PARSE_FAILURE"

    def __init__(self, replies, errors):
        self.replies = list(replies)
        self.errors = list(errors)
        super().__init__("model reply rejected twice: " + "; ".join(self.errors))


@dataclass(frozen=True)
class Instruction:
    text: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("instruction text must not be empty")

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class ParsedIntent:
    entries: tuple[tuple[str, tuple[Target, ...]], ...]

    def __init__(self, entries):
        entries = tuple((app, tuple(targets)) for app, targets in entries)
        if not entries:
            raise ValueError("a parsed intent needs at least one entry")
        object.__setattr__(self, "entries", entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def calls(self) -> list[tuple[str, str, dict]]:
        """Flattened ``(app, function, args)`` triples in execution order."""
        return [(app, t.function, t.bindings) for app, targets in self.entries for t in targets]


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionInfo:
    name: str
    params: tuple[str, ...]
    description: str


@dataclass(frozen=True)
class CatalogEntry:
    app_id: str
    functions: tuple[FunctionInfo, ...]


@dataclass(frozen=True)
class FunctionCatalog:
    entries: tuple[CatalogEntry, ...]
    warnings: tuple[Diagnostic, ...] = ()

    def app(self, app_id: str) -> CatalogEntry:
        for e in self.entries:
            if e.app_id == app_id:
                return e
        raise KeyError(app_id)

    def function(self, app_id: str, name: str) -> FunctionInfo:
        for f in self.app(app_id).functions:
            if f.name == name:
                return f
        raise KeyError(f"{app_id}.{name}")


def build_catalog(kb: KnowledgeBase) -> FunctionCatalog:
    entries, warnings = [], []
    for app_id, m in kb.items():
        funcs = tuple(FunctionInfo(f.name, f.params, f.description) for f in m.functions)
        if not funcs:
            warnings.append(Diagnostic("NO_FUNCTIONS", "app declares no primary functions",
                                       f"app {app_id}", severity="warning"))
            logger.debug("app %s declares no primary functions", app_id)
        entries.append(CatalogEntry(app_id, funcs))
    return FunctionCatalog(tuple(entries), tuple(warnings))


def intent_errors(intent: ParsedIntent, catalog: FunctionCatalog) -> list[str]:
    errors = []
    for app_id, targets in intent.entries:
        try:
            entry = catalog.app(app_id)
        except KeyError:
            errors.append(f"unknown app {app_id!r}")
            continue
        known = {f.name: f for f in entry.functions}
        for t in targets:
            f = known.get(t.function)
            if f is None:
                errors.append(f"app {app_id!r} has no function {t.function!r}")
                continue
            given = [k for k, _ in t.args]
            missing = [p for p in f.params if p not in given]
            extra = [k for k in given if k not in f.params]
            if missing:
                errors.append(f"{app_id}.{t.function} is missing argument(s) {', '.join(missing)}")
            if extra:
                errors.append(f"{app_id}.{t.function} has no parameter(s) {', '.join(extra)}")
    return errors


def validate_intent(intent: ParsedIntent, catalog) -> ParsedIntent:
    """Check *intent* against a catalog (or knowledge base); returns it unchanged."""
    if isinstance(catalog, KnowledgeBase):
        catalog = build_catalog(catalog)
    errors = intent_errors(intent, catalog)
    if errors:
        raise IntentValidationError(errors)
    return intent


def _group(calls) -> ParsedIntent:
    """Group ``(app, Target)`` calls by app, apps in order of first appearance."""
    grouped: dict[str, list[Target]] = {}
    for app, target in calls:
        grouped.setdefault(app, []).append(target)
    return ParsedIntent(list(grouped.items()))


# ---------------------------------------------------------------------------
# Lexicon parser
# ---------------------------------------------------------------------------


def _words(text: str) -> list[str]:
    out = []
    for raw in text.split():
        core = raw.rstrip(PUNCTUATION)
        if core:
            out.append(core)
        out.extend(raw[len(core):])
    return out


@dataclass(frozen=True)
class Pattern:
    text: str
    app_id: str
    function: str
    # ("lit", word) or ("slot", name)
    parts: tuple[tuple[str, str], ...]


class LexiconError(ValueError):
    pass


class Lexicon:
    """Phrase patterns mapping instruction text to ``app.function`` calls.

    File format: one pattern per line, ``pattern<TAB>app_id.function``.
    ``{slot}`` in a pattern captures a maximal run of words that are not
    lexicon keywords (the literal words of any pattern, plus ``and`` and
    ``then`` and punctuation).  Blank lines and ``#`` comments are ignored.
    """

    def __init__(self, patterns):
        self.patterns = tuple(patterns)
        kw = set(CONNECTIVES) | set(PUNCTUATION)
        for p in self.patterns:
            kw.update(v for k, v in p.parts if k == "lit")
        self.keywords = frozenset(kw)

    @classmethod
    def from_entries(cls, entries) -> "Lexicon":
        """Build from ``(pattern, "app.function")`` pairs."""
        pats = []
        for text, target in entries:
            app_id, _, function = target.strip().partition(".")
            if not app_id or not function:
                raise LexiconError(f"bad target {target!r}; expected app_id.function")
            parts = []
            for w in _words(text):
                if w.startswith("{") and w.endswith("}") and is_identifier(w[1:-1]):
                    parts.append(("slot", w[1:-1]))
                else:
                    parts.append(("lit", w.casefold()))
            if not parts:
                raise LexiconError(f"empty pattern for {target}")
            if parts[0][0] == "slot":
                raise LexiconError(f"pattern {text!r} must start with a literal word")
            pats.append(Pattern(text, app_id, function, tuple(parts)))
        return cls(pats)

    @classmethod
    def parse(cls, text: str) -> "Lexicon":
        entries = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise LexiconError(f"line {n}: expected 'pattern<TAB>app.function'")
            pattern, _, target = line.rpartition("\t")
            entries.append((pattern.strip(), target))
        return cls.from_entries(entries)

    @classmethod
    def load(cls, path) -> "Lexicon":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "".join(f"{p.text}\t{p.app_id}.{p.function}\n" for p in self.patterns)

    def match_at(self, words, folded, i, pattern):
        """Length consumed and bindings if *pattern* matches at word *i*."""
        j = i
        bindings = {}
        for kind, value in pattern.parts:
            if kind == "lit":
                if j >= len(words) or folded[j] != value:
                    return None
                j += 1
            else:
                k = j
                while k < len(words) and folded[k] not in self.keywords:
                    k += 1
                if k == j:
                    return None
                bindings[value] = " ".join(words[j:k])
                j = k
        return j - i, bindings


def parse_intent_lexicon(instruction, catalog: FunctionCatalog, lexicon: Lexicon) -> ParsedIntent:
    """Longest-match, left-to-right scan of the instruction.

    Raises :class:`NoMatch` if no pattern fires, :class:`AmbiguousMatch` if
    two patterns giving different calls match equally long at one position.
    """
    text = instruction.text if isinstance(instruction, Instruction) else Instruction(instruction).text
    words = _words(text)
    folded = [w.casefold() for w in words]
    calls = []
    i = 0
    while i < len(words):
        best = None
        rivals = []
        for p in lexicon.patterns:
            hit = lexicon.match_at(words, folded, i, p)
            if hit is None:
                continue
            length, bindings = hit
            call = (p.app_id, Target(p.function, bindings))
            if best is None or length > best[0]:
                best = (length, call, p)
                rivals = []
            elif length == best[0] and call != best[1]:
                rivals.append(p)
        if best is None:
            i += 1
            continue
        if rivals:
            names = ", ".join(repr(p.text) for p in [best[2], *rivals])
            raise AmbiguousMatch(f"patterns {names} match equally at word {i + 1}")
        calls.append(best[1])
        i += best[0]
    if not calls:
        raise NoMatch(f"no lexicon pattern matches {text!r}")
    return validate_intent(_group(calls), catalog)


# ---------------------------------------------------------------------------
# Model-backed parser
# ---------------------------------------------------------------------------


def parse_reply(reply: str) -> ParsedIntent:
    """Read ``APP``/``CALL`` lines; raises ValueError describing the problem."""
    entries: list[tuple[str, list[Target]]] = []
    seen = set()
    for n, line in enumerate(reply.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "APP":
            app = rest.strip()
            if not is_identifier(app):
                raise ValueError(f"line {n}: bad app id {app!r}")
            if app in seen:
                raise ValueError(f"line {n}: APP {app} listed twice")
            seen.add(app)
            entries.append((app, []))
        elif head == "CALL":
            if not entries:
                raise ValueError(f"line {n}: CALL before any APP line")
            try:
                parts = shlex.split(rest)
            except ValueError as exc:
                raise ValueError(f"line {n}: {exc}") from None
            if not parts or not is_identifier(parts[0]):
                raise ValueError(f"line {n}: CALL needs a function name")
            args = {}
            for p in parts[1:]:
                key, eq, value = p.partition("=")
                if not eq or not is_identifier(key):
                    raise ValueError(f"line {n}: bad argument {p!r}; expected key=value")
                if key in args:
                    raise ValueError(f"line {n}: argument {key} given twice")
                args[key] = value
            entries[-1][1].append(Target(parts[0], args))
        else:
            raise ValueError(f"line {n}: expected an APP or CALL line, got {line[:40]!r}")
    if not entries:
        raise ValueError("reply contains no APP lines")
    for app, targets in entries:
        if not targets:
            raise ValueError(f"APP {app} has no CALL lines")
    return ParsedIntent(entries)


def _check_reply(reply: str, catalog) -> tuple[ParsedIntent | None, list[str]]:
    try:
        intent = parse_reply(reply)
    except ValueError as exc:
        return None, [str(exc)]
    errors = intent_errors(intent, catalog)
    return (None, errors) if errors else (intent, [])


def parse_intent_llm(instruction, catalog: FunctionCatalog, gateway) -> ParsedIntent:
    """Ask a language model for the intent, with one repair round.

    :class:`~efsm_planner.gateway.GatewayError` from the gateway propagates
    unchanged; a reply that is still invalid after repair raises
    :class:`ParseFailure` carrying both raw replies.
    """
    text = instruction.text if isinstance(instruction, Instruction) else Instruction(instruction).text
    messages = prompts.parse_messages(text, catalog)
    first = gateway.complete(messages)
    intent, errors = _check_reply(first, catalog)
    if intent is not None:
        return intent
    logger.info("parse reply rejected (%s); asking for a repair", "; ".join(errors))
    repair = messages + [
        {"role": "assistant", "content": first},
        {"role": "user", "content": prompts.PARSE_REPAIR.format(errors="\n".join(f"- {e}" for e in errors))},
    ]
    second = gateway.complete(repair)
    intent, errors2 = _check_reply(second, catalog)
    if intent is not None:
        return intent
    raise ParseFailure([first, second], errors + errors2)
