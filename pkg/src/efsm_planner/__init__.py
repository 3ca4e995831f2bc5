"""Symbolic planning for mobile GUI agents over extended finite state machines.

Apps are modelled as guarded state machines (:mod:`.efsm`, written in the
``.efsm`` text format of :mod:`.dsl`).  An instruction is parsed into target
functions (:mod:`.parsing`), a breadth-first search finds the shortest path
invoking them (:mod:`.solver`), the path becomes a numbered plan
(:mod:`.plan`), and :mod:`.harness` runs plan-guided episodes on a simulated
device.
"""

from .dsl import ModelDocument, load_models, parse_model, serialize_model
from .efsm import (
    Configuration,
    Diagnostic,
    Efsm,
    KnowledgeBase,
    ModelError,
    Valuation,
    apply_update,
    eval_guard,
    initial_configuration,
    validate_efsm,
)
from .gateway import GatewayConfig, GatewayError, HttpGateway, ReplayGateway, record_and_replay
from .harness import (
    DeviceAction,
    Episode,
    GoalSpec,
    Observation,
    SimulatedDevice,
    check_goal,
    env_reset,
    oracle_executor,
    run_episode,
    vlm_executor,
)
from .parsing import (
    FunctionCatalog,
    Instruction,
    Lexicon,
    NoMatch,
    ParsedIntent,
    ParseFailure,
    build_catalog,
    parse_intent_lexicon,
    parse_intent_llm,
)
from .pipeline import plan_instruction
from .plan import FALLBACK_MESSAGE, Plan, polish_llm, render_fallback, render_template
from .solver import ExecutionPath, GlobalPath, Infeasible, PathStep, Target, solve, solve_all

__version__ = "0.1.0"
