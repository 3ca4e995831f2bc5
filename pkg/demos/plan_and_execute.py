"""From an instruction to a finished episode on the simulated phone.

The keyword lexicon turns the instruction into target calls, the solver
finds the shortest path in each app, and the template renderer numbers the
steps.  The oracle executor then follows the plan on a simulated device
built from the same models, and the goal check confirms the right
functions were invoked with the right arguments.
"""

from pathlib import Path

from efsm_planner import (
    GoalSpec,
    Lexicon,
    check_goal,
    env_reset,
    load_models,
    oracle_executor,
    parse_model,
    plan_instruction,
    run_episode,
)

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

kb = load_models(FIXTURES)
lexicon = Lexicon.load(FIXTURES / "apps.lex")
instruction = "record a video of 10s then call Ann Lee"

result = plan_instruction(kb, instruction, lexicon=lexicon)
print(result.plan.text())

goal = GoalSpec.from_intent(result.intent)
env, _ = env_reset(kb, goal.calls)
episode = run_episode(env, oracle_executor, instruction, result.plan)

for entry in episode.history:
    print(f"step {entry.step}: {entry.action}")
print("outcome:", episode.outcome)
print("invoked:", episode.invoked)
print("goal met:", check_goal(episode, goal))

# A goal the model cannot reach yields the fallback plan, and the executor
# gives up at once instead of wandering around.
lock = parse_model("""
app "lock" {
  vars { level: enum(low, mid, high) = low }
  states { idle* }
  functions { unlock }
  transitions {
    raise: idle -> idle on "Raise the level." when level == low set level = mid
    open: idle -> idle on "Unlock." when level == high does unlock
  }
}
""").knowledge_base()
blocked = plan_instruction(lock, "unlock the door", lexicon=Lexicon.from_entries([("unlock", "lock.unlock")]))
print()
print(blocked.plan.text())
env, _ = env_reset(lock)
print("outcome:", run_episode(env, oracle_executor, "unlock the door", blocked.plan).outcome)
