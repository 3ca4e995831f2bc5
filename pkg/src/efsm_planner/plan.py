"""Turning execution paths into numbered natural-language plans."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Optional, Union

from . import prompts
from .efsm import PLACEHOLDER_RE
from .gateway import GatewayError
from .solver import GlobalPath

logger = logging.getLogger(__name__)

FALLBACK_MESSAGE = "No feasible execution path exists."
FALLBACK = "fallback"
ENRICHED = "enriched"

POLISH_REJECTED = "POLISH_REJECTED"
POLISH_SKIPPED = "POLISH_SKIPPED"

MAX_EXTRA_POLISH_STEPS = 2

_OPEN_RE = re.compile(r"^Open the (\S+) application\.$")
_NUMBERED_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*?)\s*$")

# provenance: (segment, step) for path steps, (segment, None) for app switches,
# "fallback", or "enriched" for steps a polish pass added
Provenance = Union[tuple, str]


def open_app_step(app_id: str) -> str:
    return f"Open the {app_id} application."


def parse_open_app_step(text: str) -> Optional[str]:
    m = _OPEN_RE.match(text)
    return m.group(1) if m else None


@dataclass(frozen=True)
class Plan:
    steps: tuple[str, ...]
    provenance: tuple[Provenance, ...]
    preamble: Optional[str] = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.steps) != len(self.provenance):
            raise ValueError("each step needs one provenance entry")

    @property
    def is_fallback(self) -> bool:
        return self.provenance == (FALLBACK,)

    def numbered(self) -> list[str]:
        return [f"{i}. {s}" for i, s in enumerate(self.steps, 1)]

    def text(self) -> str:
        """Preamble line, blank line, then ``N. <step>`` lines."""
        lines = []
        if self.preamble:
            lines += [self.preamble, ""]
        lines += self.numbered()
        return "\n".join(lines) + "\n"


def render_template(path: GlobalPath, instruction) -> Plan:
    """One step per transition, with an app-opening step before each segment.

    The opening step before the first segment is left out only when the
    whole path is empty (nothing to do).
    """
    steps, prov = [], []
    total = len(path)
    for si, seg in enumerate(path.segments):
        if si > 0 or total > 0:
            steps.append(open_app_step(seg.app_id))
            prov.append((si, None))
        for pi, step in enumerate(seg.steps):
            steps.append(step.event)
            prov.append((si, pi))
    text = getattr(instruction, "text", instruction)
    return Plan(tuple(steps), tuple(prov), preamble=f"Task: {text}")


def render_fallback() -> Plan:
    return Plan((FALLBACK_MESSAGE,), (FALLBACK,))


def _check_polished(reply: str, n: int) -> tuple[Optional[list[str]], str]:
    lines = [l for l in reply.splitlines() if l.strip()]
    steps = []
    for expected, line in enumerate(lines, 1):
        m = _NUMBERED_RE.match(line)
        if not m:
            return None, f"line {expected} is not a numbered step"
        if int(m.group(1)) != expected:
            return None, f"numbering is not contiguous at step {expected}"
        if not m.group(2):
            return None, f"step {expected} is empty"
        if PLACEHOLDER_RE.search(m.group(2)):
            return None, f"step {expected} contains an unresolved placeholder"
        steps.append(m.group(2))
    if not n <= len(steps) <= n + MAX_EXTRA_POLISH_STEPS:
        return None, f"{len(steps)} steps for a {n}-step draft"
    return steps, ""


def polish_llm(draft: Plan, instruction, gateway) -> Plan:
    """Best-effort language-model rewrite of a template plan.

    The reply must keep between N and N+2 steps, numbered from 1 without
    gaps, none empty.  Anything else (or a gateway failure) returns *draft*
    unchanged with a note explaining why.
    """
    if draft.is_fallback:
        return draft
    text = getattr(instruction, "text", instruction)
    try:
        reply = gateway.complete(prompts.polish_messages(text, "\n".join(draft.numbered())))
    except GatewayError as exc:
        logger.info("polish skipped: %s", exc)
        return replace(draft, notes=draft.notes + (f"{POLISH_SKIPPED}: {exc}",))
    steps, why = _check_polished(reply, len(draft.steps))
    if steps is None:
        logger.info("polish rejected: %s", why)
        return replace(draft, notes=draft.notes + (f"{POLISH_REJECTED}: {why}",))
    n = len(draft.steps)
    prov = draft.provenance + (ENRICHED,) * (len(steps) - n)
    return Plan(tuple(steps), prov, draft.preamble, draft.notes + ("POLISHED",))
