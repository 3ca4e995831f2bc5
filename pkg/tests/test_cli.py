import argparse
import json
import shutil
import subprocess
import sys

import pytest

from efsm_planner import Lexicon, load_models, plan_instruction
from efsm_planner.cli import gateway_config, main
from efsm_planner.randgen import write_benchmark

from conftest import FIXTURES, GOLDEN

CAMERA = str(FIXTURES / "camera.efsm")
LEX = str(FIXTURES / "apps.lex")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys):
    code, out, err = run(capsys, "validate", CAMERA)
    assert code == 0 and "1 app(s) valid" in out and err == ""


def test_validate_reports_unknown_var(capsys, tmp_path):
    bad = tmp_path / "bad.efsm"
    bad.write_text((FIXTURES / "camera.efsm").read_text().replace("when video_mode == false", "when flash == false"))
    code, out, err = run(capsys, "validate", str(bad))
    assert code == 1 and out == ""
    assert "UNKNOWN_VAR" in err and f"{bad}:23:12:" in err


def test_validate_syntax_error_has_span(capsys, tmp_path):
    bad = tmp_path / "bad.efsm"
    bad.write_text((FIXTURES / "camera.efsm").read_text().replace("when video_mode == false", "when video_mode = false"))
    code, out, err = run(capsys, "validate", str(bad))
    assert code == 1 and "SYNTAX_ERROR" in err and "did you mean '=='?" in err


def test_validate_missing_file(capsys, tmp_path):
    code, out, err = run(capsys, "validate", str(tmp_path / "nope.efsm"))
    assert code == 2 and out == ""


def test_validate_directory(capsys):
    code, out, _ = run(capsys, "validate", "--models", str(FIXTURES))
    assert code == 0 and "2 app(s)" in out


def test_plan_golden(capsys):
    code, out, err = run(capsys, "plan", "--models", CAMERA, "--lexicon", LEX, "take a photo")
    assert code == 0
    assert out == (GOLDEN / "camera_take_photo.plan.txt").read_text()
    lib = plan_instruction(load_models(CAMERA), "take a photo", lexicon=Lexicon.load(LEX)).plan.text()
    assert out == lib


def test_plan_unmatched(capsys):
    code, out, err = run(capsys, "plan", "--models", CAMERA, "--lexicon", LEX, "play chess")
    assert code == 1 and out == "" and "no lexicon pattern" in err


def test_plan_unreachable_goal_prints_fallback(capsys, tmp_path):
    (tmp_path / "lock.efsm").write_text(
        'app "lock" {\n  states { a*, b }\n  functions { unlock }\n  transitions {\n'
        '    t: b -> b on "Unlock." does unlock\n  }\n}\n'
    )
    (tmp_path / "lock.lex").write_text("unlock the door\tlock.unlock\n")
    code, out, _ = run(capsys, "plan", "--models", str(tmp_path / "lock.efsm"), "--lexicon",
                       str(tmp_path / "lock.lex"), "unlock the door")
    assert code == 0 and out == "1. No feasible execution path exists.\n"


def test_plan_missing_models(capsys, tmp_path):
    code, out, _ = run(capsys, "plan", "--models", str(tmp_path / "x.efsm"), "--lexicon", LEX, "take a photo")
    assert code == 2 and out == ""


def test_plan_with_model_parser_from_transcript(capsys):
    code, out, _ = run(capsys, "plan", "--models", CAMERA, "--parser", "llm",
                       "--replay", str(FIXTURES / "parse_record_clip.jsonl"), "record a 5 second clip")
    assert code == 0
    assert out == (GOLDEN / "camera_record_video.plan.txt").read_text().replace(
        "record a video of 5s", "record a 5 second clip")


def test_plan_parse_failure_exit(capsys):
    code, out, err = run(capsys, "plan", "--models", CAMERA, "--parser", "llm",
                         "--replay", str(FIXTURES / "parse_failure.jsonl"), "show my latest photo")
    assert code == 1 and out == ""


def test_plan_polish_from_transcript(capsys):
    code, out, _ = run(capsys, "plan", "--models", CAMERA, "--lexicon", LEX, "--polish",
                       "--replay", str(FIXTURES / "polish_ok.jsonl"), "take a photo")
    assert code == 0
    assert out == "Task: take a photo\n\n1. Open the Camera app.\n2. Press the shutter button to take the photo.\n"


def test_plan_without_gateway(capsys, monkeypatch):
    monkeypatch.delenv("SPLANNER_API_BASE", raising=False)
    code, out, err = run(capsys, "plan", "--models", CAMERA, "--parser", "llm", "take a photo")
    assert code == 1 and "no gateway configured" in err


def test_solve_outputs(capsys):
    code, out, _ = run(capsys, "solve", "--models", CAMERA, "--app", "camera", "take_photo")
    assert code == 0 and out == (GOLDEN / "camera_take_photo.path.txt").read_text()
    assert len(out.splitlines()) == 1
    code, out, _ = run(capsys, "solve", "--models", CAMERA, "--app", "camera", "record_video(duration=5s)", "take_photo")
    assert code == 0 and out == (GOLDEN / "camera_record_then_photo.path.txt").read_text()
    code, out, _ = run(capsys, "solve", "--models", CAMERA, "--app", "camera")
    assert code == 0 and out == "empty path (goal already satisfied)\n"


def test_solve_errors(capsys):
    assert run(capsys, "solve", "--models", CAMERA, "--app", "camera", "unknown_fn")[0] == 1
    assert run(capsys, "solve", "--models", CAMERA, "--app", "gallery", "take_photo")[0] == 1
    code, out, _ = run(capsys, "solve", "--models", CAMERA, "--app", "camera", "record_video(5s)")
    assert code == 1 and out == ""


def test_gateway_precedence():
    manifest = {"base_url": "http://127.0.0.1:3/m", "model": "manifest-model"}
    env = {"SPLANNER_API_BASE": "http://127.0.0.1:2/e", "SPLANNER_MODEL": "env-model"}
    flags = argparse.Namespace(gateway_base="http://127.0.0.1:1/f", gateway_model="flag-model", seed=None)
    none = argparse.Namespace(gateway_base=None, gateway_model=None, seed=None)
    assert gateway_config(flags, manifest, env).base_url == "http://127.0.0.1:1/f"
    assert gateway_config(flags, manifest, env).model == "flag-model"
    assert gateway_config(none, manifest, env).base_url == "http://127.0.0.1:2/e"
    assert gateway_config(none, manifest, env).model == "env-model"
    assert gateway_config(none, manifest, {}).base_url == "http://127.0.0.1:3/m"
    assert gateway_config(none, {}, {}) is None


def _bench(tmp_path, n=10, **kw):
    return write_benchmark(tmp_path / "bench", n, seed=5, **kw)


def test_run_generated_tasks(capsys, tmp_path):
    manifest = _bench(tmp_path)
    code, out, _ = run(capsys, "run", str(manifest))
    assert code == 0
    assert out.splitlines()[-1] == "aggregate\ttasks=10\tsuccesses=10\tsuccess_rate=100.0"
    results = tmp_path / "bench" / "results"
    assert (results / "report.txt").read_text() == out
    assert len(list((results / "traces").glob("*.jsonl"))) == 10
    assert len((results / "timings.tsv").read_text().splitlines()) == 10


def test_run_is_deterministic(capsys, tmp_path):
    manifest = _bench(tmp_path, infeasible=3)
    outs = []
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "4")):
        assert run(capsys, "run", str(manifest), "--out", str(tmp_path / name), "--jobs", jobs)[0] == 0
        outs.append(tmp_path / name)
    for other in outs[1:]:
        assert (other / "report.txt").read_bytes() == (outs[0] / "report.txt").read_bytes()
        for trace in (outs[0] / "traces").iterdir():
            assert (other / "traces" / trace.name).read_bytes() == trace.read_bytes()
    assert "successes=10\tsuccess_rate=76.9" in (outs[0] / "report.txt").read_text()


def test_run_vlm_needs_gateway(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("SPLANNER_API_BASE", raising=False)
    manifest = _bench(tmp_path, 1, executor="vlm")
    code, out, err = run(capsys, "run", str(manifest))
    assert code == 1 and out == ""


def test_run_vlm_with_transcript(capsys, tmp_path):
    shutil.copy(FIXTURES / "vlm_take_photo.jsonl", tmp_path / "vlm.jsonl")
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({
        "models": CAMERA,
        "lexicon": LEX,
        "executor": "vlm",
        "replay": "vlm.jsonl",
        "tasks": [{"id": "photo", "instruction": "take a photo", "goal": [["camera", "take_photo", {}]]}],
    }))
    code, out, _ = run(capsys, "run", str(manifest))
    assert code == 0
    assert out.splitlines()[0] == "photo\tsuccess\tsteps=2\tgoal=pass"


def test_run_records_parse_errors_and_continues(capsys, tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({
        "models": CAMERA,
        "lexicon": LEX,
        "tasks": [
            {"id": "a", "instruction": "play chess", "goal": []},
            {"id": "b", "instruction": "take a photo", "goal": [["camera", "take_photo", {}]]},
        ],
    }))
    code, out, _ = run(capsys, "run", str(manifest))
    assert code == 0
    assert out.splitlines()[0] == "a\tparse_error\tsteps=0\tgoal=fail"
    assert out.splitlines()[-1].endswith("success_rate=50.0")


@pytest.mark.parametrize(
    "content, code",
    [
        ("not json", 1),
        ('{"tasks": []}', 1),
        ('{"models": "x", "tasks": [], "colour": 1}', 1),
        ('{"models": "x", "tasks": [{"id": "a", "instruction": "x"}], "executor": "human"}', 1),
        ('{"models": "x", "tasks": [{"id": "a", "instruction": "x"}, {"id": "a", "instruction": "y"}]}', 1),
    ],
)
def test_run_manifest_errors(capsys, tmp_path, content, code):
    manifest = tmp_path / "m.json"
    manifest.write_text(content)
    assert run(capsys, "run", str(manifest))[0] == code


def test_run_missing_manifest(capsys, tmp_path):
    assert run(capsys, "run", str(tmp_path / "missing.json"))[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "efsm_planner", "solve", "--models", CAMERA, "--app", "camera",
                           "take_photo"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout == (GOLDEN / "camera_take_photo.path.txt").read_text()
