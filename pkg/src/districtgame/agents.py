"""Partisan decision agents for the choose and freeze roles.

Three deterministic rule policies are provided (partisan advantage,
population deviation, compactness) plus an LLM-backed policy that talks to
any chat-completion endpoint. Rule policies are pure functions; the LLM
policy retries unparseable replies and falls back to the partisan rule
after exhausting its retries (unless fallback is disabled, in which case
it errors).
"""

from __future__ import annotations

import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional, Sequence

import requests

from .generation import CandidateSet
from .graphs import DualGraph, Plan
from .metrics import DistrictGeometry, district_geometry, report_from_geometries

logger = logging.getLogger(__name__)

PARTIES = ("democrat", "republican")
RULE_POLICIES = ("rule-partisan", "rule-popdev", "rule-compact")


class AgentError(RuntimeError):
    """An agent failed to produce a usable decision."""


class TransportError(AgentError):
    """The chat endpoint could not be reached or kept failing."""


class MalformedResponseError(AgentError):
    """The chat endpoint answered 200 with an unusable body."""


@dataclass(frozen=True)
class LlmConfig:
    base_url: str
    model: str
    api_key_env: str = "CHAT_API_KEY"
    max_retries: int = 2
    timeout: float = 30.0
    backoff_base: float = 0.5
    fallback_enabled: bool = True


@dataclass(frozen=True)
class AgentSpec:
    party: str
    policy: str
    llm: Optional[LlmConfig] = None

    def __post_init__(self):
        if self.party not in PARTIES:
            raise ValueError(f"unknown party {self.party!r}")
        if self.policy not in RULE_POLICIES + ("llm",):
            raise ValueError(f"unknown policy {self.policy!r}")
        if (self.policy == "llm") != (self.llm is not None):
            raise ValueError("llm config must be present exactly when policy is 'llm'")

    @property
    def opponent(self) -> str:
        return "republican" if self.party == "democrat" else "democrat"

    def to_string(self) -> str:
        if self.policy == "llm":
            return f"llm:{self.llm.model}@{self.llm.base_url}"
        return "rule:" + self.policy.removeprefix("rule-")


def parse_agent_spec(party: str, text: str) -> AgentSpec:
    """Parse a CLI agent spec: ``rule:partisan``, ``rule:popdev``,
    ``rule:compact``, or ``llm:<model>@<base-url>``.
    """
    text = text.strip()
    if text.startswith("rule:"):
        policy = "rule-" + text.removeprefix("rule:")
        if policy not in RULE_POLICIES:
            raise ValueError(f"unknown rule policy in agent spec {text!r}")
        return AgentSpec(party=party, policy=policy)
    if text.startswith("llm:"):
        body = text.removeprefix("llm:")
        if "@" not in body:
            raise ValueError(f"llm agent spec must be llm:<model>@<base-url>, got {text!r}")
        model, _, base_url = body.partition("@")
        if not model or not base_url:
            raise ValueError(f"llm agent spec must be llm:<model>@<base-url>, got {text!r}")
        return AgentSpec(party=party, policy="llm", llm=LlmConfig(base_url=base_url, model=model))
    raise ValueError(f"unrecognized agent spec {text!r}")


@dataclass(frozen=True)
class StateProfile:
    """Narrative briefing handed to LLM agents; ignored by rule policies."""

    name: str = ""
    background_text: str = ""
    party_shares: Optional[Mapping[str, float]] = None


@dataclass(frozen=True)
class DecisionContext:
    """The information set an agent sees when deciding."""

    round: int
    role: str  # "choose" | "freeze"
    districts_left: int
    frozen_summary: tuple[tuple[int, float], ...]  # (population, pct_dem) per frozen district
    profile: StateProfile

    @property
    def num_districts(self) -> int:
        return self.districts_left + len(self.frozen_summary)


@dataclass(frozen=True)
class Decision:
    value: int
    rationale: str
    fallback: bool = False


# ---------------------------------------------------------------------------
# Partisan scoring
# ---------------------------------------------------------------------------


def _own_opp(geom: DistrictGeometry, party: str) -> tuple[float, float]:
    if party == "democrat":
        return geom.dem_votes, geom.rep_votes
    return geom.rep_votes, geom.dem_votes


def score_plan_partisan(plan: Plan, graph: DualGraph, party: str) -> tuple[int, float]:
    """(seats won, total winning margin) for ``party`` under ``plan``.

    A district is won only on a strict vote majority; ties count for
    neither side. The margin of a won district is its own-party vote share
    minus one half; lost districts contribute zero.
    """
    seats = 0
    margin_sum = 0.0
    for geom in district_geometry(plan, graph):
        own, opp = _own_opp(geom, party)
        total = own + opp
        if total <= 0:
            raise ValueError(f"district {geom.label} has no votes")
        if own > opp:
            seats += 1
            margin_sum += (own - opp) / (2.0 * total)
    return seats, margin_sum


# ---------------------------------------------------------------------------
# Rule policies
# ---------------------------------------------------------------------------


def _ideal_pop(ctx: DecisionContext, graph: DualGraph) -> float:
    return graph.total_population / ctx.num_districts


def _rule_choose(agent: AgentSpec, candidates: CandidateSet, ctx: DecisionContext,
                 graph: DualGraph) -> Decision:
    plans = candidates.plans
    if agent.policy == "rule-partisan":
        scores = [score_plan_partisan(p, graph, agent.party) for p in plans]
        best = max(range(len(plans)), key=lambda i: scores[i])
        return Decision(best, f"rule-partisan: seats={scores[best][0]}, margin={scores[best][1]:.6f}")
    if agent.policy == "rule-popdev":
        reports = [report_from_geometries(district_geometry(p, graph)) for p in plans]
        best = min(range(len(plans)), key=lambda i: reports[i].pd)
        return Decision(best, f"rule-popdev: PD={reports[best].pd:.6f}")
    if agent.policy == "rule-compact":
        reports = [report_from_geometries(district_geometry(p, graph)) for p in plans]
        best = max(range(len(plans)), key=lambda i: reports[i].pps_avg)
        return Decision(best, f"rule-compact: PPS_avg={reports[best].pps_avg:.6f}")
    raise AgentError(f"not a rule policy: {agent.policy}")


def _rule_freeze(agent: AgentSpec, plan: Plan, ctx: DecisionContext,
                 graph: DualGraph, allowed_labels: Optional[frozenset[int]] = None) -> Decision:
    geoms = district_geometry(plan, graph)  # ascending label order
    if allowed_labels is not None:
        geoms = [g for g in geoms if g.label in allowed_labels]
        if not geoms:
            raise AgentError("no freezable district label was offered")
    if agent.policy == "rule-partisan":
        won = [(g, _own_opp(g, agent.party)) for g in geoms]
        winners = [(g, own / (own + opp)) for g, (own, opp) in won if own > opp]
        if winners:
            # Safest own win; ties resolve to the lowest label.
            best, share = max(winners, key=lambda t: t[1])
            return Decision(best.label, f"rule-partisan: safest win, own share {share:.6f}")
        losers = [(g, opp / (own + opp)) for g, (own, opp) in won]
        best, opp_share = min(losers, key=lambda t: t[1])
        return Decision(best.label, f"rule-partisan: damage control, opponent share {opp_share:.6f}")
    if agent.policy == "rule-popdev":
        ideal = _ideal_pop(ctx, graph)
        best = min(geoms, key=lambda g: abs(g.population - ideal))
        return Decision(best.label, f"rule-popdev: |pop-ideal|={abs(best.population - ideal):.3f}")
    if agent.policy == "rule-compact":
        scores = {g.label: 4.0 * math.pi * g.area / (g.perimeter ** 2) for g in geoms}
        best = max(geoms, key=lambda g: scores[g.label])
        return Decision(best.label, f"rule-compact: PPS={scores[best.label]:.6f}")
    raise AgentError(f"not a rule policy: {agent.policy}")


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------


def _template(name: str) -> str:
    return resources.files("districtgame").joinpath("prompts", name).read_text()


def _district_lines(plan: Plan, graph: DualGraph, ideal: float) -> str:
    lines = []
    demo_totals: dict[int, dict[str, int]] = {}
    for uid in plan.region:
        u = graph.unit(uid)
        if u.demographics:
            agg = demo_totals.setdefault(plan.assignment[uid], {})
            for group, count in u.demographics.items():
                agg[group] = agg.get(group, 0) + count
    for g in district_geometry(plan, graph):
        dev = (g.population - ideal) / ideal
        pps = 4.0 * math.pi * g.area / (g.perimeter ** 2)
        line = (
            f"  district {g.label}: pop {g.population} ({dev:+.2%} vs ideal),"
            f" dem share {g.pct_dem:.4f}, compactness {pps:.4f}"
        )
        if g.label in demo_totals:
            groups = ", ".join(f"{k} {v}" for k, v in sorted(demo_totals[g.label].items()))
            line += f", demographics: {groups}"
        lines.append(line)
    return "\n".join(lines)


def _frozen_table(ctx: DecisionContext) -> str:
    if not ctx.frozen_summary:
        return "  (none yet)"
    return "\n".join(
        f"  frozen district {i + 1}: pop {pop}, dem share {pct:.4f}"
        for i, (pop, pct) in enumerate(ctx.frozen_summary)
    )


def _system_message(party: str) -> dict:
    opponent = "Republican" if party == "democrat" else "Democratic"
    content = _template("agent_system.txt").format(party=_party_name(party), opponent=opponent)
    return {"role": "system", "content": content}


def _party_name(party: str) -> str:
    return "Democratic" if party == "democrat" else "Republican"


def build_choose_prompt(ctx: DecisionContext, candidate_summaries: Sequence[str],
                        party: str = "democrat") -> list[dict]:
    """Messages asking the agent to pick one candidate map by index."""
    tables = "\n".join(
        f"candidate {i}:\n{summary}" for i, summary in enumerate(candidate_summaries)
    )
    user = _template("choose_user.txt").format(
        background=ctx.profile.background_text,
        round=ctx.round,
        districts_left=ctx.districts_left,
        frozen_table=_frozen_table(ctx),
        n_candidates=len(candidate_summaries),
        max_index=len(candidate_summaries) - 1,
        candidate_tables=tables,
        party=_party_name(party),
    )
    return [_system_message(party), {"role": "user", "content": user}]


def build_freeze_prompt(ctx: DecisionContext, plan_summary: str,
                        party: str = "democrat") -> list[dict]:
    """Messages asking the agent to pick one district label to freeze."""
    user = _template("freeze_user.txt").format(
        background=ctx.profile.background_text,
        round=ctx.round,
        districts_left=ctx.districts_left,
        frozen_table=_frozen_table(ctx),
        plan_table=plan_summary,
        party=_party_name(party),
    )
    return [_system_message(party), {"role": "user", "content": user}]


# ---------------------------------------------------------------------------
# Chat endpoint client
# ---------------------------------------------------------------------------

# Cap on concurrent requests across all games in this process.
_inflight = threading.Semaphore(4)


def set_inflight_cap(n: int) -> None:
    global _inflight
    if n < 1:
        raise ValueError("in-flight cap must be >= 1")
    _inflight = threading.Semaphore(n)


def call_chat_endpoint(cfg: LlmConfig, messages: Sequence[Mapping]) -> str:
    """POST one chat-completion request, retrying transport errors and 5xx
    responses with exponential backoff. Returns the first choice's content.
    """
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "") if cfg.api_key_env else ""
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {"model": cfg.model, "messages": list(messages), "temperature": 0}

    last_exc: Optional[TransportError] = None
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0:
            time.sleep(cfg.backoff_base * (2 ** (attempt - 1)))
        try:
            with _inflight:
                resp = requests.post(url, json=body, headers=headers, timeout=cfg.timeout)
        except requests.RequestException as exc:
            last_exc = TransportError(f"transport failure: {exc}")
            continue
        if resp.status_code >= 500:
            last_exc = TransportError(f"server error {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise TransportError(f"unexpected status {resp.status_code}")
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"malformed response body: {exc}") from exc
        if not isinstance(content, str) or not content:
            raise MalformedResponseError("response carried no message content")
        return content
    assert last_exc is not None
    raise last_exc


_ANSWER_RE = re.compile(r"ANSWER\s*[:=]\s*(-?\d+)", re.IGNORECASE)


def parse_agent_reply(text: str, kind: str, bounds) -> Optional[int]:
    """Extract the delimited answer from a model reply.

    ``bounds`` is the candidate count for ``kind="choose"`` or an iterable
    of valid labels for ``kind="freeze"``. Returns None when no in-bounds
    answer is present; the caller decides whether to retry or fall back.
    """
    matches = _ANSWER_RE.findall(text or "")
    if not matches:
        return None
    value = int(matches[-1])
    if kind == "choose":
        return value if 0 <= value < int(bounds) else None
    if kind == "freeze":
        return value if value in set(bounds) else None
    raise ValueError(f"unknown reply kind {kind!r}")


# ---------------------------------------------------------------------------
# Decision entry points
# ---------------------------------------------------------------------------


def _llm_decide(agent: AgentSpec, ctx: DecisionContext, graph: DualGraph, kind: str,
                candidates: Optional[CandidateSet], plan: Optional[Plan],
                allowed_labels: Optional[frozenset[int]] = None) -> Decision:
    cfg = agent.llm
    assert cfg is not None
    ideal = _ideal_pop(ctx, graph)
    if kind == "choose":
        summaries = [_district_lines(p, graph, ideal) for p in candidates.plans]
        messages = build_choose_prompt(ctx, summaries, party=agent.party)
        bounds: object = len(candidates.plans)
    else:
        messages = build_freeze_prompt(ctx, _district_lines(plan, graph, ideal), party=agent.party)
        bounds = sorted(allowed_labels) if allowed_labels is not None else list(plan.labels())
        if allowed_labels is not None and set(allowed_labels) != set(plan.labels()):
            note = ("\nOnly these district labels may be frozen this round: "
                    + ", ".join(str(lab) for lab in sorted(allowed_labels)) + ".")
            messages[-1] = {"role": "user", "content": messages[-1]["content"] + note}

    def fall_back(reason: str) -> Decision:
        logger.warning("%s %s agent falling back to rule-partisan: %s", agent.party, kind, reason)
        rule = AgentSpec(party=agent.party, policy="rule-partisan")
        if kind == "choose":
            base = _rule_choose(rule, candidates, ctx, graph)
        else:
            base = _rule_freeze(rule, plan, ctx, graph, allowed_labels)
        return Decision(base.value, f"FALLBACK(rule-partisan): {reason}", fallback=True)

    attempts = cfg.max_retries + 1
    for _ in range(attempts):
        try:
            reply = call_chat_endpoint(cfg, messages)
        except (TransportError, MalformedResponseError) as exc:
            if cfg.fallback_enabled:
                return fall_back(str(exc))
            raise
        value = parse_agent_reply(reply, kind, bounds)
        if value is not None:
            return Decision(value, reply)
    reason = f"no parseable answer in {attempts} replies"
    if cfg.fallback_enabled:
        return fall_back(reason)
    raise AgentError(f"{kind} agent ({agent.party}): {reason}")


def choose_decision(agent: AgentSpec, candidates: CandidateSet, ctx: DecisionContext,
                    graph: DualGraph) -> Decision:
    if not candidates.plans:
        raise AgentError("cannot choose from an empty candidate set")
    if agent.policy == "llm":
        return _llm_decide(agent, ctx, graph, "choose", candidates, None)
    return _rule_choose(agent, candidates, ctx, graph)


def freeze_decision(agent: AgentSpec, plan: Plan, ctx: DecisionContext,
                    graph: DualGraph,
                    allowed_labels: Optional[frozenset[int]] = None) -> Decision:
    if agent.policy == "llm":
        return _llm_decide(agent, ctx, graph, "freeze", None, plan, allowed_labels)
    return _rule_freeze(agent, plan, ctx, graph, allowed_labels)


def choose(agent: AgentSpec, candidates: CandidateSet, ctx: DecisionContext,
           graph: DualGraph) -> int:
    """Index of the candidate plan the agent selects."""
    return choose_decision(agent, candidates, ctx, graph).value


def freeze(agent: AgentSpec, plan: Plan, ctx: DecisionContext, graph: DualGraph) -> int:
    """Label of the district the agent freezes."""
    return freeze_decision(agent, plan, ctx, graph).value
