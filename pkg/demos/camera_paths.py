"""Shortest paths through the camera model.

Taking a photo is one tap from the home screen.  Recording a video needs
video mode, which lives on the settings page, so the solver routes through
settings first.  Asking for a video and then a photo shows that the order
of targets is respected: recording drops the camera back into photo mode,
so the shutter is available straight afterwards.
"""

from pathlib import Path

from efsm_planner import load_models, solve
from efsm_planner.cli import format_path
from efsm_planner.solver import Target

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

camera = load_models(FIXTURES / "camera.efsm")["camera"]

for targets in (
    [Target("take_photo")],
    [Target("record_video", {"duration": "5s"})],
    [Target("record_video", {"duration": "5s"}), Target("take_photo")],
):
    print("targets:", ", ".join(str(t) for t in targets))
    print(format_path(solve(camera, targets)))
