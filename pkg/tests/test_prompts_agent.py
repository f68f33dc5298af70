import json

import pytest
from conftest import C, M, action_reply, obs, strategy_reply

from novicesim.agent import (
    ScaffoldLevel,
    StageSettings,
    TutorContext,
    TutorKind,
    compose_tutor_prompt,
    generate_tutor_hint,
    record_error_episode,
    run_executor,
    run_off_topic,
    run_strategist,
    scaffold_level,
)
from novicesim.backend import ScriptedBackend
from novicesim.behavior import ProfileLevel
from novicesim.errors import ConfigError, ParseError
from novicesim.knowledge import KnowledgeState
from novicesim.prompts import (
    JUDGE_FIELDS,
    BlockLibrary,
    MemoryBuffer,
    SharedContext,
    StrategyPacket,
    compose_executor_prompt,
    compose_judge_prompt,
    compose_strategist_prompt,
    compose_system_prompt,
    default_blocks,
    parse_action,
    parse_judge_verdict,
    parse_strategy,
    render_context,
    render_fact_sheet,
    render_observation,
)

LOW, HIGH = ProfileLevel.LOW, ProfileLevel.HIGH
PACKET = StrategyPacket("finish update()", "nervous", "add the velocity line and run it")


def ctx(**kw):
    base = dict(prev_code="x = 1\n", filtered_obs=None, constraints="You correctly applied: class definition")
    base.update(kw)
    return SharedContext(**base)


# -- blocks and system prompt -----------------------------------------------------------

def test_every_mandate_cell_has_a_block():
    blocks = default_blocks()
    for m in M:
        for c in C:
            assert compose_system_prompt(LOW, m, c, blocks)


def test_low_reactive_fixing_prompt_contents():
    text = compose_system_prompt(LOW, M.ENACTING, C.DEBUGGING)
    assert "Low Performer" in text
    assert "I don't know..." in text and "Why isn't this working?" in text
    assert "Maybe 3.7" in text and "change this to four" in text


@pytest.mark.parametrize("persona", [LOW, HIGH])
def test_rules_block_forbids_psychic_debugging(persona):
    assert "Code drafted but not executed" in compose_system_prompt(persona, M.PLANNING, C.CONSTRUCTING)


def test_system_prompt_is_deterministic():
    a = compose_system_prompt(HIGH, M.REFLECTING, C.ASSESSING)
    b = compose_system_prompt(HIGH, M.REFLECTING, C.ASSESSING)
    assert a == b


def test_missing_block_is_a_config_error(tmp_path):
    (tmp_path / "base.txt").write_text("base")
    lib = BlockLibrary.load(tmp_path)
    with pytest.raises(ConfigError, match="missing prompt block: performer/low"):
        compose_system_prompt(LOW, M.PLANNING, C.CONSTRUCTING, lib)
    with pytest.raises(ConfigError):
        BlockLibrary.load(tmp_path / "nope")


# -- strategist and executor prompts -------------------------------------------------------

def test_strategist_prompt_without_intervention():
    c = ctx(constraints="CRITICAL CONSTRAINT - You have NEVER heard of and CANNOT use: defining classes.")
    text = compose_strategist_prompt(MemoryBuffer(), c)
    assert c.constraints in text
    assert "Intervention" not in text


def test_strategist_prompt_with_intervention():
    text = compose_strategist_prompt(MemoryBuffer(), ctx(intervention="Check the spelling of velocity."))
    head, _, body = text.partition("### Intervention\n")
    assert body.startswith("Check the spelling of velocity.")


def test_memory_window_renders_oldest_first():
    mem = MemoryBuffer()
    for i in range(4):
        mem.push(StrategyPacket(f"goal {i}", "m", "d"))
    text = compose_strategist_prompt(mem, ctx())
    assert "goal 0" not in text
    assert text.index("goal 1") < text.index("goal 2") < text.index("goal 3")


def test_executor_prompt_contains_directive_verbatim():
    text = compose_executor_prompt(M.ENACTING, PACKET, C.CONSTRUCTING, MemoryBuffer(), ctx())
    assert PACKET.directive in text
    assert "Task: Drafting New Code" in text


def test_render_observation_variants():
    assert render_observation(None) == "(nothing has been run yet)"
    assert render_observation(obs(0, executed=False)) == "(Code drafted but not executed)"
    text = render_observation(obs(1, 4, ["TypeError", "TypeError"]))
    assert "Tests passed: 1/4" in text and "TypeError x2" in text


# -- parsing --------------------------------------------------------------------------

def test_parse_strategy_fields():
    p = parse_strategy("**GOAL:** fix it\nMINDSET: calm\nand focused\nDIRECTIVE: run tests")
    assert p == StrategyPacket("fix it", "calm and focused", "run tests")
    with pytest.raises(ParseError):
        parse_strategy("I will just fix it.")


def test_parse_action_splits_monologue_and_code():
    utterance, code = parse_action(action_reply("x = 2\n", "hmm try two"))
    assert utterance == "hmm try two" and code == "x = 2\n"
    assert parse_action("MONOLOGUE: looks fine") == ("looks fine", None)


# -- strategist and executor calls ------------------------------------------------------

def test_run_strategist_parses_packet_and_grows_memory():
    mem = MemoryBuffer()
    for i in range(5):
        backend = ScriptedBackend.from_replies([strategy_reply(i)])
        packet = run_strategist(M.PLANNING, C.CONSTRUCTING, mem, ctx(), LOW, backend, step=1)
        assert packet.goal == f"get test {i} passing"
        assert len(mem.window) == min(i + 1, 3)


def test_run_strategist_retries_once_then_fails():
    ok = ScriptedBackend.from_replies(["just do it", strategy_reply()])
    run_strategist(M.PLANNING, C.CONSTRUCTING, MemoryBuffer(), ctx(), LOW, ok)
    assert len(ok.requests) == 2
    # the retry shows the bad reply and a format reminder
    assert [m.role for m in ok.requests[1].messages] == ["system", "user", "assistant", "user"]
    bad = ScriptedBackend.from_replies(["just do it", "still prose", strategy_reply()])
    with pytest.raises(ParseError):
        run_strategist(M.PLANNING, C.CONSTRUCTING, MemoryBuffer(), ctx(), LOW, bad)
    assert len(bad.requests) == 2


def test_run_executor_constructing_returns_both_fields():
    backend = ScriptedBackend.from_replies([action_reply("y = 3\n", "writing y")])
    act = run_executor(M.ENACTING, PACKET, C.CONSTRUCTING, MemoryBuffer(), ctx(), LOW, backend)
    assert act.code == "y = 3\n" and act.utterance == "writing y"
    assert PACKET.directive in backend.requests[0].messages[1].content


def test_run_executor_assessing_keeps_previous_code():
    backend = ScriptedBackend.from_replies(["MONOLOGUE: two tests pass, fine"])
    act = run_executor(M.MONITORING, PACKET, C.ASSESSING, MemoryBuffer(), ctx(prev_code="z = 9\n"), HIGH, backend)
    assert act.code == "z = 9\n"


def test_run_executor_debugging_without_code_fails_after_retry():
    backend = ScriptedBackend.from_replies(["MONOLOGUE: hmm", "MONOLOGUE: hmm again"])
    with pytest.raises(ParseError):
        run_executor(M.MONITORING, PACKET, C.DEBUGGING, MemoryBuffer(), ctx(), LOW, backend)


def test_request_carries_composed_messages_in_order():
    backend = ScriptedBackend.from_replies([action_reply("a = 1\n")])
    mem, c = MemoryBuffer(), ctx()
    run_executor(M.ENACTING, PACKET, C.CONSTRUCTING, mem, c, LOW, backend, settings=StageSettings("m1"), step=4)
    req = backend.requests[0]
    assert [m.role for m in req.messages] == ["system", "user"]
    assert req.messages[0].content == compose_system_prompt(LOW, M.ENACTING, C.CONSTRUCTING)
    assert req.messages[1].content == compose_executor_prompt(M.ENACTING, PACKET, C.CONSTRUCTING, MemoryBuffer(), c)
    assert (req.model, req.stage, req.step, req.temperature) == ("m1", "executor", 4, 0.7)


def test_off_topic_keeps_code():
    backend = ScriptedBackend.from_replies(["MONOLOGUE: lunch soon?"])
    act = run_off_topic(M.ENACTING, MemoryBuffer(), ctx(prev_code="q = 1\n"), LOW, backend)
    assert act == type(act)("q = 1\n", "lunch soon?")


# -- episodic memory -----------------------------------------------------------------------

def test_error_episodes_surface_only_for_matching_types():
    mem = MemoryBuffer()
    record_error_episode(mem, "TypeError", "I passed a string where a number goes", False)
    assert len(mem.episodic) == 1
    again = render_context(ctx(filtered_obs=obs(0, 4, ["TypeError"])), mem)
    assert "I passed a string where a number goes" in again
    other = render_context(ctx(filtered_obs=obs(0, 4, ["NameError"])), mem)
    assert "I passed a string" not in other


# -- tutor ---------------------------------------------------------------------------------

@pytest.mark.parametrize("p,fails,level", [
    (0.8, 0, ScaffoldLevel.NONE), (0.6, 0, ScaffoldLevel.MINIMAL), (0.4, 0, ScaffoldLevel.GUIDING),
    (0.2, 0, ScaffoldLevel.EXPLICIT), (0.4, 1, ScaffoldLevel.EXPLICIT), (0.2, 5, ScaffoldLevel.EXPLICIT),
    (0.8, 1, ScaffoldLevel.MINIMAL), (0.8, 9, ScaffoldLevel.GUIDING), (0.7, 0, ScaffoldLevel.MINIMAL),
])
def test_scaffold_level(p, fails, level):
    assert scaffold_level(p, fails) is level


TC = TutorContext("make a particle", "x = 1\n", ["NameError"], M.MONITORING, "help?", 0, {"KC_C2": "math library import"})


def test_no_tutor_gives_no_hint():
    backend = ScriptedBackend.from_replies([])
    assert generate_tutor_hint(TutorKind.NONE, KnowledgeState({"KC_C2": 0.1}), TC, backend) == (None, None)
    assert backend.requests == []


def test_zpd_prompt_targets_weakest_kc_explicitly():
    knowledge = KnowledgeState({"KC_C2": 0.1, "KC_P9": 0.8})
    _, user, target = compose_tutor_prompt(TutorKind.ZPD, knowledge, TC, default_blocks())
    assert target == "KC_C2"
    assert "Target knowledge component: KC_C2" in user and "Scaffold level: Explicit" in user


def test_simple_tutor_passes_reply_through():
    backend = ScriptedBackend.from_replies(["Check line 3."])
    hint, _ = generate_tutor_hint("Simple", KnowledgeState({"KC_C2": 0.1}), TC, backend)
    assert hint == "Check line 3."
    assert backend.requests[0].stage == "tutor"


def test_failing_tutor_backend_yields_no_hint():
    hint, target = generate_tutor_hint(TutorKind.ZPD, KnowledgeState({"KC_C2": 0.1}), TC, ScriptedBackend([]))
    assert hint is None and target == "KC_C2"


# -- judge ---------------------------------------------------------------------------------

def test_judge_prompt_embeds_fact_sheet_values():
    sheet = {"total_steps": 12, "cramped_assignment_ratio": 0.5, "disconnected_fixes": 1}
    system, user = compose_judge_prompt(sheet, [{"t": 1, "metacog": "Planning", "cognitive": "Constructing"}])
    assert system == default_blocks().get("judge/instructions")
    assert "- total_steps: 12" in user and "- cramped_assignment_ratio: 0.5000" in user
    assert render_fact_sheet(sheet) in user


def test_parse_judge_verdict():
    reply = "Here you go:\n" + json.dumps({"justification": "ok", **{f: 3 for f in JUDGE_FIELDS}})
    v = parse_judge_verdict(reply)
    assert (v.realism_score, v.code_quality_realism, v.debugging_pattern_realism, v.language_realism) == (3, 3, 3, 3)
    with pytest.raises(ParseError):
        parse_judge_verdict(json.dumps({f: 4 for f in JUDGE_FIELDS}))
    with pytest.raises(ParseError):
        parse_judge_verdict("no json")
