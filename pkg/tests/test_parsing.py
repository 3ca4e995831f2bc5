import pytest

from efsm_planner import (
    GatewayError,
    Instruction,
    Lexicon,
    NoMatch,
    ParsedIntent,
    ParseFailure,
    ReplayGateway,
    build_catalog,
    parse_intent_lexicon,
    parse_intent_llm,
    parse_model,
)
from efsm_planner.gateway import ReplayMiss
from efsm_planner.parsing import AmbiguousMatch, IntentValidationError, LexiconError, parse_reply, validate_intent
from efsm_planner.solver import Target

from conftest import FIXTURES


def calls(intent):
    return [(a, f, args) for a, f, args in intent.calls()]


def test_catalog_camera(camera_catalog):
    (entry,) = camera_catalog.entries
    assert entry.app_id == "camera"
    assert [f.name for f in entry.functions] == ["take_photo", "record_video"]
    assert camera_catalog.warnings == ()


def test_catalog_two_apps_in_order(two_app_kb):
    assert [e.app_id for e in build_catalog(two_app_kb).entries] == ["camera", "contacts"]
    assert build_catalog(two_app_kb) == build_catalog(two_app_kb)


def test_catalog_warns_on_app_without_functions():
    kb = parse_model('app "blank" {\n  states { a* }\n  transitions { }\n}\n').knowledge_base()
    cat = build_catalog(kb)
    assert cat.entries[0].functions == ()
    assert [w.code for w in cat.warnings] == ["NO_FUNCTIONS"]


def test_instruction_must_not_be_empty():
    with pytest.raises(ValueError):
        Instruction("   ")


def test_lexicon_direct_hit(camera_catalog, lexicon):
    assert calls(parse_intent_lexicon("take a photo", camera_catalog, lexicon)) == [("camera", "take_photo", {})]


def test_lexicon_slot_capture(camera_catalog, lexicon):
    intent = parse_intent_lexicon("record a video of 5s", camera_catalog, lexicon)
    assert calls(intent) == [("camera", "record_video", {"duration": "5s"})]


def test_lexicon_no_match(camera_catalog, lexicon):
    with pytest.raises(NoMatch):
        parse_intent_lexicon("play chess", camera_catalog, lexicon)


def test_lexicon_multi_app_order(two_app_kb, lexicon):
    cat = build_catalog(two_app_kb)
    intent = parse_intent_lexicon("Call Ann Lee, then take a photo and call Bob", cat, lexicon)
    assert [a for a, _ in intent.entries] == ["contacts", "camera"]
    assert calls(intent) == [
        ("contacts", "call", {"name": "Ann Lee"}),
        ("contacts", "call", {"name": "Bob"}),
        ("camera", "take_photo", {}),
    ]


def test_lexicon_is_case_insensitive_and_keeps_slot_case(two_app_kb, lexicon):
    cat = build_catalog(two_app_kb)
    assert calls(parse_intent_lexicon("ADD Maria to my contacts", cat, lexicon)) == [
        ("contacts", "add_contact", {"name": "Maria"})
    ]


def test_lexicon_longest_match_wins(camera_catalog):
    lex = Lexicon.from_entries([
        ("take a photo", "camera.take_photo"),
        ("take a photo and video of {duration}", "camera.record_video"),
    ])
    intent = parse_intent_lexicon("take a photo and video of 3s", camera_catalog, lex)
    assert calls(intent) == [("camera", "record_video", {"duration": "3s"})]


def test_lexicon_ambiguity_is_reported(camera_catalog):
    lex = Lexicon.from_entries([("snap", "camera.take_photo"), ("snap", "camera.record_video")])
    with pytest.raises(AmbiguousMatch):
        parse_intent_lexicon("snap", camera_catalog, lex)


def test_lexicon_result_is_validated(camera_catalog):
    lex = Lexicon.from_entries([("call {name}", "contacts.call")])
    with pytest.raises(IntentValidationError):
        parse_intent_lexicon("call Bob", camera_catalog, lex)


def test_lexicon_file_format():
    lex = Lexicon.parse("# comment\n\ntake a photo\tcamera.take_photo\n")
    assert lex.to_text() == "take a photo\tcamera.take_photo\n"
    with pytest.raises(LexiconError):
        Lexicon.parse("no tab here camera.take_photo\n")
    with pytest.raises(LexiconError):
        Lexicon.parse("{slot} first\tcamera.take_photo\n")
    with pytest.raises(LexiconError):
        Lexicon.parse("take\tcamera\n")


def test_lexicon_parse_is_pure(two_app_kb, lexicon):
    cat = build_catalog(two_app_kb)
    first = parse_intent_lexicon("call Bob then take a photo", cat, lexicon)
    assert all(parse_intent_lexicon("call Bob then take a photo", cat, lexicon) == first for _ in range(3))


def test_validate_intent_rules(camera_kb):
    good = ParsedIntent([("camera", [Target("record_video", {"duration": "5s"})])])
    assert validate_intent(good, camera_kb) is good
    for bad in (
        [("gallery", [Target("show")])],
        [("camera", [Target("zoom")])],
        [("camera", [Target("record_video")])],
        [("camera", [Target("take_photo", {"flash": "on"})])],
    ):
        with pytest.raises(IntentValidationError):
            validate_intent(ParsedIntent(bad), camera_kb)


def test_parse_reply_schema():
    intent = parse_reply('APP contacts\nCALL call name="Ann Lee"\n\nAPP camera\nCALL take_photo\n')
    assert calls(intent) == [("contacts", "call", {"name": "Ann Lee"}), ("camera", "take_photo", {})]
    for bad in ("Sure! Here you go.", "CALL take_photo", "APP camera", "APP camera\nCALL take_photo flash",
                "APP camera\nAPP camera\nCALL take_photo"):
        with pytest.raises(ValueError):
            parse_reply(bad)


def test_llm_parse_from_transcript(camera_catalog):
    gw = ReplayGateway(FIXTURES / "parse_record_clip.jsonl")
    intent = parse_intent_llm("record a 5 second clip", camera_catalog, gw)
    assert calls(intent) == [("camera", "record_video", {"duration": "5s"})]
    assert len(gw.served) == 1


def test_llm_parse_repair_round(camera_catalog):
    gw = ReplayGateway(FIXTURES / "parse_repair.jsonl")
    intent = parse_intent_llm("take a photo", camera_catalog, gw)
    assert calls(intent) == [("camera", "take_photo", {})]
    assert len(gw.served) == 2


def test_llm_parse_failure_keeps_both_replies(camera_catalog):
    gw = ReplayGateway(FIXTURES / "parse_failure.jsonl")
    with pytest.raises(ParseFailure) as exc:
        parse_intent_llm("show my latest photo", camera_catalog, gw)
    assert exc.value.replies == ["APP gallery\nCALL show_photo"] * 2
    assert any("gallery" in e for e in exc.value.errors)
    assert len(gw.served) == 2


def test_llm_parse_with_retried_request(camera_catalog):
    gw = ReplayGateway(FIXTURES / "parse_retry.jsonl")
    assert calls(parse_intent_llm("take a photo", camera_catalog, gw)) == [("camera", "take_photo", {})]


def test_llm_parse_different_instruction_misses(camera_catalog):
    gw = ReplayGateway(FIXTURES / "parse_record_clip.jsonl")
    with pytest.raises(ReplayMiss):
        parse_intent_llm("record a 6 second clip", camera_catalog, gw)


class TimeoutGateway:
    def complete(self, messages):
        raise GatewayError("timeout", "read timed out")


def test_llm_parse_gateway_timeout(camera_catalog):
    with pytest.raises(GatewayError) as exc:
        parse_intent_llm("take a photo", camera_catalog, TimeoutGateway())
    assert exc.value.kind == "timeout"
    assert not isinstance(exc.value, ParseFailure)
