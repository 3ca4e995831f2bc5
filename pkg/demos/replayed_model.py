"""The model-backed stages, served from recorded transcripts.

Instruction parsing, plan polishing and the step-by-step executor can all
talk to a chat-completions endpoint.  Here they read replies recorded under
``tests/fixtures`` instead, which is how the test suite stays offline.  One
of the transcripts contains an unusable first reply, to show the repair
round at work.
"""

from pathlib import Path

from efsm_planner import (
    ReplayGateway,
    build_catalog,
    env_reset,
    load_models,
    parse_intent_llm,
    polish_llm,
    render_template,
    run_episode,
    solve_all,
    vlm_executor,
)

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

kb = load_models(FIXTURES / "camera.efsm")
catalog = build_catalog(kb)

intent = parse_intent_llm("record a 5 second clip", catalog, ReplayGateway(FIXTURES / "parse_record_clip.jsonl"))
print("parsed:", intent.calls())

repair = ReplayGateway(FIXTURES / "parse_repair.jsonl")
print("after repair:", parse_intent_llm("take a photo", catalog, repair).calls(),
      f"({len(repair.served)} model calls)")

photo = parse_intent_llm("take a photo", catalog, ReplayGateway(FIXTURES / "parse_repair.jsonl"))
draft = render_template(solve_all(kb, photo), "take a photo")
print()
print("draft plan:")
print(draft.text())
polished = polish_llm(draft, "take a photo", ReplayGateway(FIXTURES / "polish_ok.jsonl"))
print("polished plan:")
print(polished.text())

env, _ = env_reset(kb)
episode = run_episode(env, vlm_executor(ReplayGateway(FIXTURES / "vlm_take_photo.jsonl")), "take a photo", draft)
print("executor actions:", [str(h.action) for h in episode.history])
print("outcome:", episode.outcome)
