"""Prompt texts sent through the gateway.

Changing any text here changes request digests, so recorded transcripts
under ``tests/fixtures`` must be re-recorded.  Bump ``PROMPT_VERSION`` when
that happens.
"""

PROMPT_VERSION = "1"

PARSE_SYSTEM = """\
You turn a user's instruction for a mobile phone into the applications and \
primary functions needed to carry it out.  Only use applications and \
functions from the catalog you are given.

Reply with lines of exactly two forms and nothing else:
APP <app_id>
CALL <function_name> [<param>=<value> ...]

Each APP line is followed by the CALL lines for that application, in the \
order they must happen.  Give every parameter of a function a value; quote \
values containing spaces, e.g. name="Ann Lee".  Prompt version 1."""

PARSE_REPAIR = """\
Your reply could not be used:
{errors}
Reply again using only APP and CALL lines."""

POLISH_SYSTEM = """\
You rewrite a draft execution plan for a mobile GUI agent so it is concise \
and easy to follow while keeping every operation it contains.  You may add \
at most two short steps with context taken from the user's instruction.  \
Reply with the numbered steps only, one per line, as "1. <step>".  \
Prompt version 1."""

EXECUTOR_SYSTEM = """\
You operate a mobile phone to complete the user's task, guided by a plan.  \
At each turn you see the current screen as a list of widgets (id and label) \
and the actions taken so far.  Think step by step about which plan step you \
are on and what it requires, then finish your reply with exactly one line:
ACTION click <widget_id>
ACTION long_press <widget_id>
ACTION input_text <widget_id> <text>
ACTION swipe <up|down|left|right>
ACTION open_app <app_id>
ACTION status <complete|infeasible>
Prompt version 1."""

EXECUTOR_REPAIR = """\
Your last reply could not be executed: {error}
Finish with exactly one valid ACTION line."""


def catalog_text(catalog) -> str:
    lines = []
    for entry in catalog.entries:
        lines.append(f"APP {entry.app_id}")
        if not entry.functions:
            lines.append("  (no functions)")
        for f in entry.functions:
            sig = f"{f.name}({', '.join(f.params)})"
            lines.append(f"  {sig}: {f.description}" if f.description else f"  {sig}")
    return "\n".join(lines)


def parse_messages(instruction: str, catalog) -> list[dict]:
    user = f"Catalog:\n{catalog_text(catalog)}\n\nInstruction: {instruction}"
    return [{"role": "system", "content": PARSE_SYSTEM}, {"role": "user", "content": user}]


def polish_messages(instruction: str, draft_text: str) -> list[dict]:
    user = f"Instruction: {instruction}\n\nDraft plan:\n{draft_text}"
    return [{"role": "system", "content": POLISH_SYSTEM}, {"role": "user", "content": user}]


def executor_messages(instruction: str, plan_text: str, observation_text: str, history_text: str) -> list[dict]:
    user = (
        f"Task: {instruction}\n\nPlan:\n{plan_text}\n\n"
        f"Actions so far:\n{history_text or '(none)'}\n\nScreen:\n{observation_text}"
    )
    return [{"role": "system", "content": EXECUTOR_SYSTEM}, {"role": "user", "content": user}]
