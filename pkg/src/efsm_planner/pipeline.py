"""Instruction to plan: parse, solve, render (and optionally polish)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .parsing import (
    FunctionCatalog,
    Instruction,
    ParsedIntent,
    build_catalog,
    parse_intent_lexicon,
    parse_intent_llm,
)
from .plan import Plan, polish_llm, render_fallback, render_template
from .solver import GlobalPath, Infeasible, solve_all


@dataclass(frozen=True)
class PlanResult:
    intent: ParsedIntent
    path: Union[GlobalPath, Infeasible]
    plan: Plan

    @property
    def feasible(self) -> bool:
        return isinstance(self.path, GlobalPath)


def plan_from_intent(kb, intent: ParsedIntent, instruction, *, polish_gateway=None) -> PlanResult:
    path = solve_all(kb, intent)
    if isinstance(path, Infeasible):
        # the fallback plan bypasses polishing
        return PlanResult(intent, path, render_fallback())
    plan = render_template(path, instruction)
    if polish_gateway is not None:
        plan = polish_llm(plan, instruction, polish_gateway)
    return PlanResult(intent, path, plan)


def plan_instruction(
    kb,
    instruction,
    *,
    lexicon=None,
    gateway=None,
    polish: bool = False,
    catalog: Optional[FunctionCatalog] = None,
) -> PlanResult:
    """Run the whole planning pipeline for one instruction.

    With a *lexicon* the instruction is parsed by keyword matching,
    otherwise by the model behind *gateway*.  ``polish=True`` sends the
    template plan through *gateway* for rewriting.
    """
    if not isinstance(instruction, Instruction):
        instruction = Instruction(instruction)
    catalog = catalog or build_catalog(kb)
    if lexicon is not None:
        intent = parse_intent_lexicon(instruction, catalog, lexicon)
    elif gateway is not None:
        intent = parse_intent_llm(instruction, catalog, gateway)
    else:
        raise ValueError("need a lexicon or a gateway to parse instructions")
    if polish and gateway is None:
        raise ValueError("polishing needs a gateway")
    return plan_from_intent(kb, intent, instruction, polish_gateway=gateway if polish else None)
