"""Reader and writer for ``.efsm`` model files.

A file holds one or more ``app`` blocks::

    app "camera" {
      vars {
        video_mode: bool = false
      }
      states {
        home*, settings
      }
      functions {
        take_photo: "Take a photo"
      }
      transitions {
        t1: home -> settings
          on "Open the settings page"
        t3: home -> home
          on "Tap the shutter button"
          when video_mode == false
          does take_photo
      }
    }

``#`` starts a comment.  Sections may appear in any order but at most once
per app; ``states`` and ``transitions`` are required.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .efsm import (
    KEYWORDS,
    Diagnostic,
    KnowledgeBase,
    ModelError,
    RawApp,
    RawAssign,
    RawAtom,
    RawFunction,
    RawTransition,
    RawVar,
    SourceSpan,
    build_knowledge_base,
)

SYNTAX_ERROR = "SYNTAX_ERROR"
UNTERMINATED_BLOCK = "UNTERMINATED_BLOCK"
DUPLICATE_SECTION = "DUPLICATE_SECTION"

SECTIONS = ("vars", "states", "functions", "transitions")


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, KEYWORD, STRING, PUNCT, EOF
    value: str
    span: SourceSpan

    def describe(self) -> str:
        if self.kind == "EOF":
            return "end of input"
        if self.kind == "STRING":
            return "string"
        return repr(self.value)


@dataclass
class ModelDocument:
    apps: list[RawApp] = field(default_factory=list)
    file: str = "<string>"

    def knowledge_base(self) -> KnowledgeBase:
        return build_knowledge_base(self.apps)


class SyntaxErrors(ModelError):
    """Raised by :func:`parse_model` when the text is not well formed."""


class _Abort(Exception):
    def __init__(self, diag):
        self.diag = diag


_PUNCT2 = ("==", "!=", "->")
_PUNCT1 = "{}(),:*="


def tokenize(text: str, file: str = "<string>") -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def span(length, l=None, c=None):
        return SourceSpan(file, l or line, c or col, max(1, length))

    while i < n:
        ch = text[i]
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if ch in " \t\r﻿":
            i, col = i + 1, col + 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_") and text[j].isascii():
                j += 1
            word = text[i:j]
            tokens.append(Token("KEYWORD" if word in KEYWORDS else "IDENT", word, span(j - i)))
            col += j - i
            i = j
            continue
        if ch == '"':
            start_line, start_col = line, col
            j = i + 1
            c = col + 1
            l = line
            buf = []
            closed = False
            bad_escape = None
            while j < n:
                cj = text[j]
                if cj == '"':
                    closed = True
                    j += 1
                    c += 1
                    break
                if cj == "\\" and j + 1 < n:
                    nxt = text[j + 1]
                    if nxt in '"\\':
                        buf.append(nxt)
                    elif bad_escape is None:
                        bad_escape = (l, c, nxt)
                    j += 2
                    c += 2
                    continue
                buf.append(cj)
                if cj == "\n":
                    l, c = l + 1, 1
                else:
                    c += 1
                j += 1
            if not closed:
                diags.append(Diagnostic(SYNTAX_ERROR, "unterminated string", "",
                                        SourceSpan(file, start_line, start_col, 1)))
                i, line, col = n, l, c
                break
            if bad_escape:
                bl, bc, ch2 = bad_escape
                diags.append(Diagnostic(SYNTAX_ERROR, f"unknown escape '\\{ch2}' (only \\\" and \\\\ are allowed)",
                                        "", SourceSpan(file, bl, bc, 2)))
            length = (j - i) if l == start_line else 1
            tokens.append(Token("STRING", "".join(buf), SourceSpan(file, start_line, start_col, length)))
            i, line, col = j, l, c
            continue
        two = text[i:i + 2]
        if two in _PUNCT2:
            tokens.append(Token("PUNCT", two, span(2)))
            i, col = i + 2, col + 2
            continue
        if ch in _PUNCT1:
            tokens.append(Token("PUNCT", ch, span(1)))
            i, col = i + 1, col + 1
            continue
        diags.append(Diagnostic(SYNTAX_ERROR, f"unexpected character {ch!r}", "", span(1)))
        i, col = i + 1, col + 1
    tokens.append(Token("EOF", "", SourceSpan(file, line, col, 1)))
    return tokens, diags


class _Parser:
    def __init__(self, tokens, file):
        self.toks = tokens
        self.pos = 0
        self.file = file
        self.diags: list[Diagnostic] = []

    # -- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, value, kind=None) -> bool:
        t = self.tok
        return t.value == value and t.kind in ((kind,) if kind else ("KEYWORD", "PUNCT"))

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "EOF":
            self.pos += 1
        return t

    def fail(self, expected, hint=""):
        t = self.tok
        exp = ", ".join(expected)
        msg = f"expected {exp}, found {t.describe()}"
        if hint:
            msg += f" ({hint})"
        code = UNTERMINATED_BLOCK if t.kind == "EOF" and "'}'" in expected else SYNTAX_ERROR
        raise _Abort(Diagnostic(code, msg, "", t.span))

    def expect(self, value) -> Token:
        if self.at(value):
            return self.advance()
        self.fail([repr(value)])

    def ident(self, what="identifier") -> Token:
        t = self.tok
        if t.kind == "IDENT":
            return self.advance()
        hint = f"{t.value!r} is a reserved word" if t.kind == "KEYWORD" else ""
        self.fail([what], hint)

    def string(self) -> Token:
        if self.tok.kind == "STRING":
            return self.advance()
        self.fail(["string"])

    def literal(self) -> Token:
        t = self.tok
        if t.kind == "IDENT" or (t.kind == "KEYWORD" and t.value in ("true", "false")):
            return self.advance()
        self.fail(["'true'", "'false'", "identifier"])

    def skip_block(self, open_tok: Token):
        """Skip to the '}' matching the '{' already consumed (*open_tok*)."""
        depth = 1
        while True:
            t = self.tok
            if t.kind == "EOF":
                self.diags.append(Diagnostic(UNTERMINATED_BLOCK, "block is never closed", "", open_tok.span))
                return False
            self.advance()
            if t.kind == "PUNCT" and t.value == "{":
                depth += 1
            elif t.kind == "PUNCT" and t.value == "}":
                depth -= 1
                if depth == 0:
                    return True

    # -- grammar -----------------------------------------------------------

    def document(self) -> list[RawApp]:
        apps = []
        if self.tok.kind == "EOF":
            self.diags.append(Diagnostic(SYNTAX_ERROR, "expected 'app'", "", self.tok.span))
            return apps
        while self.tok.kind != "EOF":
            if not self.at("app"):
                self.diags.append(Diagnostic(SYNTAX_ERROR, f"expected 'app', found {self.tok.describe()}",
                                             "", self.tok.span))
                # resynchronise on the next top-level 'app'
                self.advance()
                while self.tok.kind != "EOF" and not self.at("app"):
                    self.advance()
                continue
            app = self.app()
            if app is not None:
                apps.append(app)
        return apps

    def app(self) -> Optional[RawApp]:
        app_tok = self.advance()
        try:
            name = self.string()
            open_tok = self.expect("{")
        except _Abort as exc:
            self.diags.append(exc.diag)
            while self.tok.kind != "EOF" and not self.at("app"):
                self.advance()
            return None
        raw = RawApp(app_id=name.value, spans={"app_id": name.span, "app": app_tok.span})
        seen: dict[str, Token] = {}
        while True:
            t = self.tok
            if self.at("}"):
                self.advance()
                break
            if t.kind == "EOF":
                self.diags.append(Diagnostic(UNTERMINATED_BLOCK, f"app {raw.app_id!r} is never closed",
                                             "", open_tok.span))
                return raw
            if t.kind == "KEYWORD" and t.value in SECTIONS:
                self.advance()
                if t.value in seen:
                    self.diags.append(Diagnostic(DUPLICATE_SECTION, f"section '{t.value}' appears twice",
                                                 f"app {raw.app_id}", t.span))
                    target = RawApp(app_id=raw.app_id)  # parse and discard
                else:
                    target = raw
                seen[t.value] = t
                if not self.section(t.value, target):
                    return raw
                continue
            self.diags.append(Diagnostic(
                SYNTAX_ERROR,
                f"expected one of 'vars', 'states', 'functions', 'transitions', '}}', found {t.describe()}",
                f"app {raw.app_id}", t.span))
            # skip a stray token (or a whole stray block)
            self.advance()
            if t.kind == "PUNCT" and t.value == "{" and not self.skip_block(t):
                return raw
        for required in ("states", "transitions"):
            if required not in seen:
                self.diags.append(Diagnostic(SYNTAX_ERROR, f"app {raw.app_id!r} has no '{required}' section",
                                             f"app {raw.app_id}", app_tok.span))
        return raw

    def section(self, kind, raw: RawApp) -> bool:
        """Parse one section body; returns False if input ended inside it."""
        try:
            open_tok = self.expect("{")
        except _Abort as exc:
            self.diags.append(exc.diag)
            return self.tok.kind != "EOF"
        body = getattr(self, f"_{kind}")
        try:
            body(raw)
            self.expect("}")
        except _Abort as exc:
            if exc.diag.code == UNTERMINATED_BLOCK:
                self.diags.append(Diagnostic(UNTERMINATED_BLOCK, f"'{kind}' block is never closed",
                                             f"app {raw.app_id}", open_tok.span))
                return False
            self.diags.append(exc.diag)
            return self.skip_block(open_tok)
        return True

    def _vars(self, raw):
        while self.tok.kind == "IDENT":
            name = self.advance()
            self.expect(":")
            spans = {"name": name.span, "kind": self.tok.span}
            if self.at("bool"):
                self.advance()
                kind, values = "bool", []
            elif self.at("enum"):
                self.advance()
                self.expect("(")
                values = [self.ident("enum literal").value]
                self.expect(",")
                values.append(self.ident("enum literal").value)
                while self.at(","):
                    self.advance()
                    values.append(self.ident("enum literal").value)
                self.expect(")")
                kind = "enum"
            else:
                self.fail(["'bool'", "'enum'"])
            self.expect("=")
            init = self.literal()
            spans["initial"] = init.span
            raw.vars.append(RawVar(name.value, kind, values, init.value, spans))

    def _states(self, raw):
        def one():
            t = self.ident("state name")
            raw.states.append(t.value)
            raw.state_spans.append(t.span)
            if self.at("*"):
                star = self.advance()
                if raw.initial is not None:
                    raise _Abort(Diagnostic(SYNTAX_ERROR, "more than one initial state marked with '*'",
                                            f"state {t.value}", star.span))
                raw.initial = t.value
                raw.spans["initial"] = t.span

        one()
        while self.at(","):
            self.advance()
            one()

    def _functions(self, raw):
        while self.tok.kind == "IDENT":
            name = self.advance()
            spans = {"name": name.span}
            params = []
            if self.at("("):
                spans["params"] = self.advance().span
                params.append(self.ident("parameter name").value)
                while self.at(","):
                    self.advance()
                    params.append(self.ident("parameter name").value)
                self.expect(")")
            desc = ""
            if self.at(":"):
                self.advance()
                d = self.string()
                desc = d.value
                spans["description"] = d.span
            raw.functions.append(RawFunction(name.value, params, desc, spans))

    def _transitions(self, raw):
        while self.tok.kind == "IDENT":
            raw.transitions.append(self.transition())

    def transition(self) -> RawTransition:
        tid = self.advance()
        self.expect(":")
        src = self.ident("source state")
        self.expect("->")
        dst = self.ident("target state")
        self.expect("on")
        ev = self.string()
        t = RawTransition(tid.value, src.value, dst.value, ev.value,
                          spans={"id": tid.span, "source": src.span, "target": dst.span, "event": ev.span})
        if self.at("when"):
            self.advance()
            t.guard.append(self.atom())
            while self.at("and"):
                self.advance()
                t.guard.append(self.atom())
        if self.at("set"):
            self.advance()
            t.update.append(self.assign())
            while self.at(","):
                self.advance()
                t.update.append(self.assign())
        if self.at("does"):
            self.advance()
            fn = self.ident("function name")
            t.action = fn.value
            t.spans["action"] = fn.span
            if self.at("("):
                self.advance()
                args = [self.ident("argument name").value]
                while self.at(","):
                    self.advance()
                    args.append(self.ident("argument name").value)
                self.expect(")")
                t.action_args = args
        return t

    def atom(self) -> RawAtom:
        var = self.ident("variable name")
        if self.at("==") or self.at("!="):
            op = self.advance()
        elif self.at("="):
            self.fail(["'=='", "'!='"], "did you mean '=='?")
        else:
            self.fail(["'=='", "'!='"])
        lit = self.literal()
        return RawAtom(var.value, op.value, lit.value, {"var": var.span, "op": op.span, "value": lit.span})

    def assign(self) -> RawAssign:
        var = self.ident("variable name")
        if self.at("=="):
            self.fail(["'='"], "assignments use a single '='")
        self.expect("=")
        lit = self.literal()
        return RawAssign(var.value, lit.value, {"var": var.span, "value": lit.span})


def parse_model(text: str, file: str = "<string>") -> ModelDocument:
    """Parse model text into a :class:`ModelDocument`.

    Raises :class:`SyntaxErrors` listing every syntax problem; the parser
    resumes at the next block boundary after an error.
    """
    tokens, diags = tokenize(text, file)
    parser = _Parser(tokens, file)
    apps = parser.document()
    diags = diags + parser.diags
    if diags:
        diags.sort(key=lambda d: (d.span.line, d.span.column) if d.span else (0, 0))
        raise SyntaxErrors(diags)
    return ModelDocument(apps, file)


def load_models(path) -> KnowledgeBase:
    """Load a ``.efsm`` file, or every ``.efsm`` file in a directory.

    Files are read in sorted order; apps keep their order within each file.
    Raises :class:`ModelError` with all syntax and validation diagnostics.
    """
    path = Path(path)
    files = sorted(path.glob("*.efsm")) if path.is_dir() else [path]
    apps, diags = [], []
    for f in files:
        try:
            apps.extend(parse_model(f.read_text(encoding="utf-8"), str(f)).apps)
        except ModelError as exc:
            diags.extend(exc.diagnostics)
    try:
        kb = build_knowledge_base(apps)
    except ModelError as exc:
        diags.extend(exc.diagnostics)
    if diags:
        raise ModelError(diags)
    return kb


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _literal_list(items):
    return ", ".join(items)


def serialize_efsm(m) -> str:
    out = [f"app {quote(m.app_id)} {{"]
    if m.vars:
        out.append("  vars {")
        for v in m.vars:
            kind = "bool" if v.kind == "bool" else f"enum({_literal_list(v.values)})"
            out.append(f"    {v.name}: {kind} = {v.initial}")
        out.append("  }")
    states = ", ".join(s + ("*" if s == m.initial else "") for s in m.states)
    out.append("  states {")
    out.append(f"    {states}")
    out.append("  }")
    if m.functions:
        out.append("  functions {")
        for f in m.functions:
            line = f"    {f.name}"
            if f.params:
                line += f"({_literal_list(f.params)})"
            if f.description:
                line += f": {quote(f.description)}"
            out.append(line)
        out.append("  }")
    out.append("  transitions {")
    for t in m.transitions:
        out.append(f"    {t.id}: {t.source} -> {t.target}")
        out.append(f"      on {quote(t.event)}")
        if t.guard:
            atoms = " and ".join(f"{a.var} {a.op} {a.value}" for a in t.guard.atoms)
            out.append(f"      when {atoms}")
        if t.update:
            sets = ", ".join(f"{n} = {v}" for n, v in t.update.assignments)
            out.append(f"      set {sets}")
        if t.action:
            call = f"      does {t.action.function}"
            if t.action.slots:
                call += f"({_literal_list(t.action.slots)})"
            out.append(call)
    out.append("  }")
    out.append("}")
    return "\n".join(out) + "\n"


def serialize_model(kb) -> str:
    """Canonical text for a knowledge base (or a single machine)."""
    machines = [kb] if not isinstance(kb, KnowledgeBase) else list(kb.values())
    return "\n".join(serialize_efsm(m) for m in machines)
