"""The choose-and-freeze game over a dual graph.

Two partisan agents alternate roles across rounds. Each round a candidate
set of feasible maps is generated over the remaining region; the chooser
picks one map and the freezer permanently fixes one of its districts. The
game recurses on the shrinking remainder until a single district is left,
which is finalized without a round. A full transcript (config echo, every
round's decisions, the final plan and its metrics, and the sample budget)
makes any run replayable from its seeds.

A single game is strictly sequential; independent games may run in
parallel on derived random streams.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import agents as agents_mod
from .agents import AgentSpec, DecisionContext, StateProfile, parse_agent_spec
from .generation import CandidateSet, GenConfig, contiguous, generate_candidates
from .graphs import DualGraph, Plan, plan_hash
from .metrics import MetricsReport, metrics_report
from .streams import derive_rng

logger = logging.getLogger(__name__)


class GameError(RuntimeError):
    """The game could not be played to completion."""


@dataclass(frozen=True)
class GameConfig:
    num_districts: int
    candidates_per_round: int
    first_mover: str  # "democrat" | "republican"
    gen: GenConfig
    master_seed: int
    profile: StateProfile = StateProfile()
    max_redraws: int = 10

    def __post_init__(self):
        if self.num_districts < 1:
            raise ValueError("num_districts must be >= 1")
        if self.candidates_per_round < 1:
            raise ValueError("candidates_per_round must be >= 1")
        if self.first_mover not in agents_mod.PARTIES:
            raise ValueError(f"unknown first mover {self.first_mover!r}")


@dataclass(frozen=True)
class FrozenDistrict:
    label: int  # final district label, assigned in freeze order
    units: frozenset[str]
    round: int


@dataclass(frozen=True)
class GameState:
    round: int
    remaining: frozenset[str]
    frozen: tuple[FrozenDistrict, ...]
    districts_left: int


@dataclass
class RoundRecord:
    round: int
    chooser: str
    freezer: str
    candidate_hashes: list[str]
    chosen_index: int
    chosen_plan_hash: str
    frozen_label: int  # label within the chosen (per-round) plan
    frozen_units: frozenset[str]
    choose_rationale: str
    freeze_rationale: str
    candidates_generated: int
    redraws: int = 0

    def to_json_dict(self) -> dict:
        return {
            "round": self.round,
            "chooser": self.chooser,
            "freezer": self.freezer,
            "candidate_hashes": list(self.candidate_hashes),
            "chosen_index": self.chosen_index,
            "chosen_plan_hash": self.chosen_plan_hash,
            "frozen_label": self.frozen_label,
            "frozen_units": sorted(self.frozen_units),
            "rationales": {"choose": self.choose_rationale, "freeze": self.freeze_rationale},
            "candidates_generated": self.candidates_generated,
            "redraws": self.redraws,
        }


@dataclass
class Transcript:
    config: dict
    rounds: list[RoundRecord]
    final_plan: Plan
    metrics: MetricsReport
    budget: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_plan_hash(self) -> str:
        return plan_hash(self.final_plan)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "rounds": [r.to_json_dict() for r in self.rounds],
            "final_assignment": {u: self.final_plan.assignment[u]
                                 for u in sorted(self.final_plan.region)},
            "final_plan_hash": self.final_plan_hash,
            "metrics": self.metrics.to_json_dict(),
            "budget": self.budget,
            "diagnostics": self.diagnostics,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1) + "\n")


def role_schedule(round: int, first_mover: str) -> tuple[str, str]:
    """(chooser, freezer) for a 1-indexed round; roles alternate each round."""
    if round < 1:
        raise ValueError("rounds are 1-indexed")
    other = "republican" if first_mover == "democrat" else "democrat"
    return (first_mover, other) if round % 2 == 1 else (other, first_mover)


def _frozen_summary(frozen: tuple[FrozenDistrict, ...], graph: DualGraph) -> tuple:
    out = []
    for fd in frozen:
        pop = sum(graph.populations[u] for u in fd.units)
        dem = sum(graph.unit(u).dem_votes for u in fd.units)
        rep = sum(graph.unit(u).rep_votes for u in fd.units)
        total = dem + rep
        out.append((pop, dem / total if total > 0 else 0.5))
    return tuple(out)


def _freezable_labels(plan: Plan, remaining: frozenset[str],
                      graph: DualGraph) -> frozenset[int]:
    """Labels of ``plan`` whose removal keeps the rest of ``remaining``
    contiguous (or empties it)."""
    out = []
    for lab in plan.labels():
        rest = remaining - plan.district_units(lab)
        if not rest or contiguous(rest, graph):
            out.append(lab)
    return frozenset(out)


def play_round(state: GameState, chooser_agent: AgentSpec, freezer_agent: AgentSpec,
               graph: DualGraph, config: GameConfig) -> tuple[GameState, RoundRecord]:
    """Play one choose/freeze round, shrinking the remaining region.

    On the first draw the agents act unconstrained. If the frozen district
    would disconnect the remainder, the round is redrawn with a fresh
    candidate set up to ``config.max_redraws`` times; redraws exclude plans
    with no freezable district and restrict the freezer to labels that keep
    the remainder contiguous (a plan-level filter alone cannot stop a
    deterministic freezer from repeating the same disconnecting pick).
    """
    if state.districts_left < 2:
        raise GameError(f"round {state.round}: nothing to negotiate with "
                        f"{state.districts_left} district left")
    ideal = graph.total_population / config.num_districts

    for attempt in range(config.max_redraws + 1):
        rng = derive_rng(config.master_seed, "round", state.round, attempt)
        cands = generate_candidates(
            state.remaining, state.districts_left, config.candidates_per_round,
            graph, config.gen, ideal, rng, round_index=state.round, require_full=False,
        )
        # The round consumes one batch of c samples from the generator even
        # when fewer distinct plans came back; the offered hashes record the
        # distinct set.
        generated = config.candidates_per_round
        plans = cands.plans
        freezable: dict[int, frozenset[int]] = {}
        if attempt > 0:
            kept = []
            for p in plans:
                labels = _freezable_labels(p, state.remaining, graph)
                if labels:
                    freezable[len(kept)] = labels
                    kept.append(p)
            plans = kept
            if not plans:
                continue
        offered = CandidateSet(cands.round, plans, cands.region, cands.k, cands.diagnostics)

        frozen_summary = _frozen_summary(state.frozen, graph)
        choose_ctx = DecisionContext(
            round=state.round, role="choose", districts_left=state.districts_left,
            frozen_summary=frozen_summary, profile=config.profile,
        )
        try:
            choice = agents_mod.choose_decision(chooser_agent, offered, choose_ctx, graph)
        except agents_mod.AgentError as exc:
            raise type(exc)(f"round {state.round} (choose): {exc}") from exc
        chosen = offered.plans[choice.value]

        freeze_ctx = DecisionContext(
            round=state.round, role="freeze", districts_left=state.districts_left,
            frozen_summary=frozen_summary, profile=config.profile,
        )
        allowed = freezable.get(choice.value) if attempt > 0 else None
        try:
            frozen_choice = agents_mod.freeze_decision(
                freezer_agent, chosen, freeze_ctx, graph, allowed_labels=allowed
            )
        except agents_mod.AgentError as exc:
            raise type(exc)(f"round {state.round} (freeze): {exc}") from exc
        label = frozen_choice.value
        if label not in set(chosen.labels()):
            raise agents_mod.AgentError(
                f"round {state.round} (freeze): label {label} outside chosen plan"
            )

        units = chosen.district_units(label)
        new_remaining = state.remaining - units
        if new_remaining and not contiguous(new_remaining, graph):
            logger.info("round %d: freezing district %d disconnects the remainder; redrawing",
                        state.round, label)
            continue

        record = RoundRecord(
            round=state.round,
            chooser=chooser_agent.party,
            freezer=freezer_agent.party,
            candidate_hashes=offered.hashes(),
            chosen_index=choice.value,
            chosen_plan_hash=plan_hash(chosen),
            frozen_label=label,
            frozen_units=units,
            choose_rationale=choice.rationale,
            freeze_rationale=frozen_choice.rationale,
            candidates_generated=generated,
            redraws=attempt,
        )
        new_state = GameState(
            round=state.round + 1,
            remaining=new_remaining,
            frozen=state.frozen + (FrozenDistrict(len(state.frozen) + 1, units, state.round),),
            districts_left=state.districts_left - 1,
        )
        return new_state, record

    raise GameError(
        f"round {state.round}: every frozen district disconnected the remainder "
        f"in {config.max_redraws + 1} candidate draws"
    )


def finalize(state: GameState, graph: DualGraph) -> Plan:
    """Assemble the full plan once a single district remains.

    Frozen districts keep their freeze-order labels; the remainder becomes
    the last district. The remainder's contiguity is asserted because every
    round already rejected disconnecting freezes.
    """
    if state.districts_left != 1:
        raise GameError(f"finalize called with {state.districts_left} districts left")
    n = len(state.frozen) + 1
    assignment: dict[str, int] = {}
    for fd in state.frozen:
        for u in fd.units:
            assignment[u] = fd.label
    for u in state.remaining:
        assignment[u] = n
    assert not state.remaining or contiguous(state.remaining, graph), \
        "internal invariant: final remainder must be contiguous"
    region = frozenset(assignment)
    return Plan(region=region, k=n, assignment=assignment)


def _config_echo(config: GameConfig, dem_agent: AgentSpec, rep_agent: AgentSpec) -> dict:
    return {
        "num_districts": config.num_districts,
        "candidates_per_round": config.candidates_per_round,
        "first_mover": config.first_mover,
        "epsilon": config.gen.epsilon,
        "method": config.gen.method,
        "chain_thinning": config.gen.chain_thinning,
        "max_attempts": config.gen.max_attempts,
        "stall_samples": config.gen.stall_samples,
        "master_seed": config.master_seed,
        "max_redraws": config.max_redraws,
        "dem_agent": dem_agent.to_string(),
        "rep_agent": rep_agent.to_string(),
        "profile_name": config.profile.name,
        "profile_background": config.profile.background_text,
    }


def run_game(graph: DualGraph, dem_agent: AgentSpec, rep_agent: AgentSpec,
             config: GameConfig) -> Transcript:
    """Play a full game: N-1 choose/freeze rounds, then finalize.

    Deterministic given the master seed and deterministic agents: every
    round derives its own random stream from (master_seed, round, redraw).
    """
    n = config.num_districts
    if n > len(graph):
        raise GameError(f"{n} districts requested for {len(graph)} units")
    if dem_agent.party != "democrat" or rep_agent.party != "republican":
        raise ValueError("agents must carry their respective parties")
    for agent in (dem_agent, rep_agent):
        if agent.policy == "llm" and not config.profile.background_text:
            raise ValueError(f"{agent.party} agent uses the llm policy but the "
                             "state profile has no background text")

    state = GameState(round=1, remaining=graph.unit_ids, frozen=(), districts_left=n)
    records: list[RoundRecord] = []
    while state.districts_left > 1:
        chooser_party, _ = role_schedule(state.round, config.first_mover)
        chooser = dem_agent if chooser_party == "democrat" else rep_agent
        freezer = rep_agent if chooser_party == "democrat" else dem_agent
        state, record = play_round(state, chooser, freezer, graph, config)
        records.append(record)

    final = finalize(state, graph)
    report = metrics_report(final, graph)
    actual = sum(r.candidates_generated for r in records)
    budget = {
        "candidates_actual": actual,
        "candidates_nominal": config.candidates_per_round * n,
        "rounds": len(records),
    }
    diagnostics = {
        "redraws": sum(r.redraws for r in records),
        "fallbacks": sum(
            1 for r in records
            for text in (r.choose_rationale, r.freeze_rationale)
            if text.startswith("FALLBACK(")
        ),
    }
    return Transcript(
        config=_config_echo(config, dem_agent, rep_agent),
        rounds=records,
        final_plan=final,
        metrics=report,
        budget=budget,
        diagnostics=diagnostics,
    )


def config_from_echo(echo: dict) -> tuple[GameConfig, AgentSpec, AgentSpec]:
    """Rebuild a game configuration and agents from a transcript's echo."""
    gen = GenConfig(
        epsilon=echo["epsilon"],
        method=echo["method"],
        chain_thinning=echo["chain_thinning"],
        max_attempts=echo["max_attempts"],
        seed=echo["master_seed"],
        stall_samples=echo.get("stall_samples", 100),
    )
    config = GameConfig(
        num_districts=echo["num_districts"],
        candidates_per_round=echo["candidates_per_round"],
        first_mover=echo["first_mover"],
        gen=gen,
        master_seed=echo["master_seed"],
        profile=StateProfile(name=echo.get("profile_name", ""),
                             background_text=echo.get("profile_background", "")),
        max_redraws=echo.get("max_redraws", 10),
    )
    dem = parse_agent_spec("democrat", echo["dem_agent"])
    rep = parse_agent_spec("republican", echo["rep_agent"])
    return config, dem, rep


def replay_game(transcript: Transcript | dict, graph: DualGraph) -> Transcript:
    """Re-run a game from its transcript's config echo and seeds."""
    echo = transcript.config if isinstance(transcript, Transcript) else transcript["config"]
    config, dem, rep = config_from_echo(echo)
    return run_game(graph, dem, rep, config)
