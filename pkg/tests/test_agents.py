from __future__ import annotations

import math
from pathlib import Path

import pytest

from districtgame.agents import (
    AgentError,
    AgentSpec,
    DecisionContext,
    LlmConfig,
    MalformedResponseError,
    StateProfile,
    TransportError,
    build_choose_prompt,
    build_freeze_prompt,
    call_chat_endpoint,
    choose,
    choose_decision,
    freeze,
    freeze_decision,
    parse_agent_reply,
    parse_agent_spec,
    score_plan_partisan,
)
from districtgame.generation import CandidateSet, GenConfig, generate_candidates
from districtgame.graphs import DualGraph, Edge, Plan, Unit, build_grid_state
from districtgame.streams import derive_rng

from oracles import partisan_score

DATA = Path(__file__).parent / "data"


def ctx(round=1, role="choose", districts_left=2, frozen=(), profile=None):
    return DecisionContext(round=round, role=role, districts_left=districts_left,
                           frozen_summary=tuple(frozen),
                           profile=profile or StateProfile())


def path_graph(unit_votes, pops=None):
    """Path graph from (dem, rep) pairs; pops default to total votes."""
    units = []
    for i, (dem, rep) in enumerate(unit_votes):
        pop = pops[i] if pops else int(dem + rep)
        outer = 3.0 if i in (0, len(unit_votes) - 1) else 2.0
        units.append(Unit(f"u{i}", pop, dem, rep, 1.0, outer))
    edges = [Edge(f"u{i}", f"u{i+1}", 1.0) for i in range(len(unit_votes) - 1)]
    return DualGraph(units, edges)


def plan_of(graph, blocks):
    assignment = {}
    for lab, block in enumerate(blocks, start=1):
        for u in block:
            assignment[u] = lab
    return Plan(frozenset(assignment), len(blocks), assignment)


# The three-candidate set over one 4-path whose partisan scores are exactly
# seats [1, 2, 2] with margin sums [0.1, 0.3, 0.2] for the Democratic side.
SPEC_VOTES = [(37.5, 12.5), (27.5, 22.5), (475.0, 325.0), (20.0, 80.0)]


def spec_candidates():
    graph = path_graph(SPEC_VOTES)
    plans = [
        plan_of(graph, [("u0", "u1", "u2"), ("u3",)]),
        plan_of(graph, [("u0",), ("u1", "u2", "u3")]),
        plan_of(graph, [("u0", "u1"), ("u2", "u3")]),
    ]
    return graph, CandidateSet(1, plans, graph.unit_ids, 2)


# --- scoring -----------------------------------------------------------------


def test_score_simple_win():
    graph = path_graph([(60, 40), (40, 60)])
    plan = plan_of(graph, [("u0",), ("u1",)])
    assert score_plan_partisan(plan, graph, "democrat") == (1, pytest.approx(0.1))


def test_score_tie_wins_for_neither():
    graph = path_graph([(50, 50)])
    plan = plan_of(graph, [("u0",)])
    assert score_plan_partisan(plan, graph, "democrat") == (0, 0.0)
    assert score_plan_partisan(plan, graph, "republican") == (0, 0.0)


def test_score_republican_three_districts():
    graph = path_graph([(45, 55), (52, 48), (30, 70)])
    plan = plan_of(graph, [("u0",), ("u1",), ("u2",)])
    seats, margin = score_plan_partisan(plan, graph, "republican")
    assert seats == 2
    assert margin == pytest.approx(0.25)


def test_score_candidate_construction_matches_spec_numbers():
    graph, cands = spec_candidates()
    scores = [score_plan_partisan(p, graph, "democrat") for p in cands.plans]
    assert [s for s, _ in scores] == [1, 2, 2]
    assert [m for _, m in scores] == [pytest.approx(0.1), pytest.approx(0.3), pytest.approx(0.2)]
    # the independent oracle agrees
    for plan, got in zip(cands.plans, scores):
        want = partisan_score(plan, graph, "democrat")
        assert want[0] == got[0] and got[1] == pytest.approx(want[1])


# --- rule choose ---------------------------------------------------------------


def test_choose_partisan_picks_lexicographic_max():
    graph, cands = spec_candidates()
    agent = AgentSpec("democrat", "rule-partisan")
    assert choose(agent, cands, ctx(), graph) == 1


def test_choose_popdev_tie_breaks_low_index():
    graph = path_graph([(50, 50)] * 4, pops=[100, 100, 102, 98])
    plans = [
        plan_of(graph, [("u0", "u1"), ("u2", "u3")]),   # pops 200/200, PD 0
        plan_of(graph, [("u0",), ("u1", "u2", "u3")]),  # pops 100/300
        plan_of(graph, [("u0", "u1", "u2"), ("u3",)]),  # pops 302/98
    ]
    cands = CandidateSet(1, plans, graph.unit_ids, 2)
    agent = AgentSpec("democrat", "rule-popdev")
    assert choose(agent, cands, ctx(), graph) == 0


def test_choose_compact_argmax(grid22):
    rows = Plan(grid22.unit_ids, 2, {"r0c0": 1, "r0c1": 1, "r1c0": 2, "r1c1": 2})
    # The whole square as one district is more compact than two 1x2 strips,
    # but candidate sets share k; compare strips against an L + unit instead.
    ell = Plan(grid22.unit_ids, 2, {"r0c0": 1, "r0c1": 1, "r1c0": 1, "r1c1": 2})
    cands = CandidateSet(1, [ell, rows], grid22.unit_ids, 2)
    agent = AgentSpec("democrat", "rule-compact")
    assert choose(agent, cands, ctx(), grid22) == 1


def test_choose_empty_set_errors(grid22):
    agent = AgentSpec("democrat", "rule-partisan")
    with pytest.raises(AgentError):
        choose(agent, CandidateSet(1, [], grid22.unit_ids, 2), ctx(), grid22)


# --- rule freeze ----------------------------------------------------------------


def test_freeze_partisan_safest_win():
    graph = path_graph([(30, 70), (55, 45), (48, 52)])
    plan = plan_of(graph, [("u0",), ("u1",), ("u2",)])
    agent = AgentSpec("republican", "rule-partisan")
    assert freeze(agent, plan, ctx(role="freeze", districts_left=3), graph) == 1


def test_freeze_partisan_damage_control():
    graph = path_graph([(60, 40), (55, 45)])
    plan = plan_of(graph, [("u0",), ("u1",)])
    agent = AgentSpec("republican", "rule-partisan")
    assert freeze(agent, plan, ctx(role="freeze"), graph) == 2


def test_freeze_popdev_closest_to_ideal():
    graph = path_graph([(50, 50)] * 4, pops=[105, 102, 91, 102])
    plan = plan_of(graph, [("u0",), ("u1",), ("u2",)])  # partial plan, u3 frozen
    agent = AgentSpec("democrat", "rule-popdev")
    context = ctx(role="freeze", districts_left=3, frozen=[(102, 0.5)])
    # ideal = 400/4 = 100; deviations [5, 2, 9]
    assert freeze(agent, plan, context, graph) == 2


def test_freeze_compact_max_pps(grid33):
    assignment = {u: 2 for u in grid33.unit_ids}
    for u in ("r0c0", "r0c1", "r1c0"):
        assignment[u] = 1  # L-tromino PPS 4π·3/64 ≈ 0.589 beats complement 4π·6/144 ≈ 0.524
    plan = Plan(grid33.unit_ids, 2, assignment)
    agent = AgentSpec("democrat", "rule-compact")
    assert freeze(agent, plan, ctx(role="freeze", districts_left=2), grid33) == 1


def test_freeze_allowed_labels_restricts():
    graph = path_graph([(30, 70), (55, 45), (48, 52)])
    plan = plan_of(graph, [("u0",), ("u1",), ("u2",)])
    agent = AgentSpec("republican", "rule-partisan")
    got = freeze_decision(agent, plan, ctx(role="freeze", districts_left=3), graph,
                          allowed_labels=frozenset({2, 3}))
    assert got.value == 3  # best rep option once label 1 is off the table


def test_rule_policies_pure():
    graph, cands = spec_candidates()
    agent = AgentSpec("democrat", "rule-partisan")
    results = {choose(agent, cands, ctx(), graph) for _ in range(20)}
    assert results == {1}


# --- party mirror symmetry -------------------------------------------------------


def _mirror(graph):
    units = [Unit(u.id, u.population, u.rep_votes, u.dem_votes, u.area, u.outer_boundary)
             for u in graph.units]
    return DualGraph(units, list(graph.edges))


@pytest.mark.parametrize("seed", range(10))
def test_party_mirror_symmetry(seed):
    graph = build_grid_state(4, 4, 100, "clustered(0.65,0.40)", seed=seed)
    cfg = GenConfig(epsilon=0.05, seed=seed)
    cands = generate_candidates(graph.unit_ids, 2, 6, graph, cfg,
                                graph.total_population / 2, derive_rng(seed, "mirror"),
                                require_full=False)
    mirrored_graph = _mirror(graph)
    for policy in ("rule-partisan", "rule-popdev", "rule-compact"):
        dem = AgentSpec("democrat", policy)
        rep = AgentSpec("republican", policy)
        assert choose(dem, cands, ctx(), graph) == choose(rep, cands, ctx(), mirrored_graph)
        plan = cands.plans[0]
        fctx = ctx(role="freeze")
        assert freeze(dem, plan, fctx, graph) == freeze(rep, plan, fctx, mirrored_graph)


# --- reply parsing ---------------------------------------------------------------


def test_parse_reply_examples():
    assert parse_agent_reply("RATIONALE: x\nANSWER: 2", "choose", 3) == 2
    assert parse_agent_reply("ANSWER: 7", "choose", 3) is None
    assert parse_agent_reply("no fields here", "choose", 3) is None
    assert parse_agent_reply("ANSWER: 2", "freeze", [1, 2, 3]) == 2
    assert parse_agent_reply("ANSWER: 9", "freeze", [1, 2, 3]) is None
    assert parse_agent_reply("answer: 1", "choose", 2) == 1  # case-insensitive
    assert parse_agent_reply("ANSWER: 0\n...\nANSWER: 1", "choose", 3) == 1  # last wins


def test_parse_agent_spec_forms():
    spec = parse_agent_spec("democrat", "rule:partisan")
    assert spec.policy == "rule-partisan" and spec.llm is None
    spec = parse_agent_spec("republican", "llm:test-model@http://localhost:9")
    assert spec.policy == "llm"
    assert spec.llm.model == "test-model"
    assert spec.llm.base_url == "http://localhost:9"
    assert spec.to_string() == "llm:test-model@http://localhost:9"
    with pytest.raises(ValueError):
        parse_agent_spec("democrat", "rule:maximal")
    with pytest.raises(ValueError):
        parse_agent_spec("democrat", "llm:no-url")


# --- prompts ----------------------------------------------------------------------


def fixed_ctx():
    profile = StateProfile(name="Midland",
                           background_text="Midland is a competitive two-party state "
                                           "with an urban core and a rural periphery.")
    return DecisionContext(round=2, role="choose", districts_left=3,
                           frozen_summary=((1200, 0.6123),), profile=profile)


def test_choose_prompt_structure():
    messages = build_choose_prompt(fixed_ctx(), ["  district 1: ...", "  district 2: ..."],
                                   party="democrat")
    assert [m["role"] for m in messages] == ["system", "user"]
    assert "candidate 0" in messages[1]["content"]
    assert "candidate 1" in messages[1]["content"]
    assert "Democratic" in messages[0]["content"]
    assert "ANSWER" in messages[0]["content"]


def test_choose_prompt_golden():
    messages = build_choose_prompt(fixed_ctx(), ["  district 1: pop 1200"], party="republican")
    joined = "\n--8<--\n".join(m["role"] + "\n" + m["content"] for m in messages)
    golden = (DATA / "golden_choose_prompt.txt").read_text()
    assert joined == golden


def test_freeze_prompt_golden():
    context = DecisionContext(round=2, role="freeze", districts_left=3,
                              frozen_summary=((1200, 0.6123),), profile=fixed_ctx().profile)
    messages = build_freeze_prompt(context, "  district 1: pop 1200", party="democrat")
    joined = "\n--8<--\n".join(m["role"] + "\n" + m["content"] for m in messages)
    golden = (DATA / "golden_freeze_prompt.txt").read_text()
    assert joined == golden


# --- chat endpoint ------------------------------------------------------------------


def llm_cfg(url, **kw):
    defaults = dict(model="mock-model", max_retries=2, timeout=5.0, backoff_base=0.01)
    defaults.update(kw)
    return LlmConfig(base_url=url, **defaults)


def test_call_endpoint_ok(chat_server):
    chat_server.script_replies("hello there")
    reply = call_chat_endpoint(llm_cfg(chat_server.url), [{"role": "user", "content": "x"}])
    assert reply == "hello there"
    body = chat_server.requests[0]["body"]
    assert body["temperature"] == 0
    assert body["model"] == "mock-model"
    assert chat_server.requests[0]["path"] == "/chat/completions"


def test_call_endpoint_5xx_storm(chat_server):
    chat_server.script((500, {}), (500, {}), (500, {}), (500, {}))
    with pytest.raises(TransportError, match="server error"):
        call_chat_endpoint(llm_cfg(chat_server.url), [])
    assert len(chat_server.requests) == 3  # max_retries=2 -> 3 attempts


def test_call_endpoint_recovers_after_5xx(chat_server):
    chat_server.script((500, {}), (200, {"choices": [{"message": {"content": "ok"}}]}))
    assert call_chat_endpoint(llm_cfg(chat_server.url), []) == "ok"


def test_call_endpoint_malformed_body(chat_server):
    chat_server.script((200, {"unexpected": True}))
    with pytest.raises(MalformedResponseError):
        call_chat_endpoint(llm_cfg(chat_server.url), [])


def test_call_endpoint_4xx_no_retry(chat_server):
    chat_server.script((403, {}))
    with pytest.raises(TransportError, match="403"):
        call_chat_endpoint(llm_cfg(chat_server.url), [])
    assert len(chat_server.requests) == 1


# --- llm decisions -------------------------------------------------------------------


def llm_agent(url, party="democrat", **kw):
    return AgentSpec(party, "llm", llm=llm_cfg(url, **kw))


def profile_ctx(**kw):
    return ctx(profile=StateProfile(name="m", background_text="background"), **kw)


def test_llm_choose_applies_valid_reply(chat_server):
    graph, cands = spec_candidates()
    chat_server.script_replies("RATIONALE: because.\nANSWER: 2")
    decision = choose_decision(llm_agent(chat_server.url), cands, profile_ctx(), graph)
    assert decision.value == 2
    assert not decision.fallback
    assert "because" in decision.rationale


def test_llm_choose_falls_back_after_malformed_replies(chat_server):
    graph, cands = spec_candidates()
    chat_server.script_replies("no answer", "still nothing", "nope")
    decision = choose_decision(llm_agent(chat_server.url), cands, profile_ctx(), graph)
    assert decision.fallback
    assert decision.value == 1  # rule-partisan fallback for the democrat
    assert decision.rationale.startswith("FALLBACK(rule-partisan)")
    assert len(chat_server.requests) == 3


def test_llm_choose_out_of_bounds_counts_as_parse_failure(chat_server):
    graph, cands = spec_candidates()
    chat_server.script_replies("ANSWER: 9", "ANSWER: 9", "ANSWER: 9")
    decision = choose_decision(llm_agent(chat_server.url), cands, profile_ctx(), graph)
    assert decision.fallback


def test_llm_transport_error_without_fallback(chat_server):
    graph, cands = spec_candidates()
    chat_server.script((500, {}), (500, {}), (500, {}))
    agent = llm_agent(chat_server.url, fallback_enabled=False)
    with pytest.raises(TransportError):
        choose_decision(agent, cands, profile_ctx(), graph)


def test_llm_transport_error_with_fallback(chat_server):
    graph, cands = spec_candidates()
    chat_server.script((500, {}), (500, {}), (500, {}))
    decision = choose_decision(llm_agent(chat_server.url), cands, profile_ctx(), graph)
    assert decision.fallback and decision.value == 1


def test_llm_freeze_round_trip(chat_server):
    graph = path_graph([(30, 70), (55, 45), (48, 52)])
    plan = plan_of(graph, [("u0",), ("u1",), ("u2",)])
    chat_server.script_replies("RATIONALE: lock it.\nANSWER: 3")
    decision = freeze_decision(llm_agent(chat_server.url, party="republican"), plan,
                               profile_ctx(role="freeze", districts_left=3), graph)
    assert decision.value == 3
    user_text = chat_server.requests[0]["body"]["messages"][1]["content"]
    assert "district 1" in user_text and "district 3" in user_text


def test_llm_game_replay_stable(chat_server, grid22):
    # A deterministic mock endpoint makes the whole game replayable.
    from districtgame.protocol import GameConfig, run_game

    def scripted():
        chat_server.reset()
        chat_server.script_replies("ANSWER: 0", "ANSWER: 1")
        dem = llm_agent(chat_server.url, party="democrat")
        rep = AgentSpec("republican", "rule-partisan")
        config = GameConfig(num_districts=2, candidates_per_round=2,
                            first_mover="democrat",
                            gen=GenConfig(epsilon=0.0, seed=3, max_attempts=20, stall_samples=10),
                            master_seed=3,
                            profile=StateProfile(name="g", background_text="bg"))
        return run_game(grid22, dem, rep, config).final_plan_hash

    assert scripted() == scripted()
