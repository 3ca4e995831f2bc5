"""Generate a batch of random tasks and run them through the command line.

Each task gets its own randomly generated apps, a lexicon entry per
function and an instruction chaining a few calls.  Some tasks are built to
be unsolvable.  The ``run`` command plans and executes every task and
writes a report whose success rate counts only episodes that finished and
performed the expected calls.
"""

import sys
import tempfile
from pathlib import Path

from efsm_planner.cli import main
from efsm_planner.randgen import write_benchmark

with tempfile.TemporaryDirectory() as tmp:
    manifest = write_benchmark(Path(tmp), n_tasks=20, seed=1, infeasible=5)
    code = main(["run", str(manifest), "--jobs", "4"])
    traces = sorted((Path(tmp) / "results" / "traces").iterdir())
    print(f"\n{len(traces)} traces written; first one:")
    print(traces[0].read_text())
    sys.exit(code)
