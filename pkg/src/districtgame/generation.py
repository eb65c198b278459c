"""Feasible plan generation: seeds, chain steps, and candidate sets.

Two Markov-chain proposals are provided over any contiguous region of a
dual graph:

- ``recom_step`` merges a random pair of adjacent districts and re-splits
  their union by cutting a uniform random spanning tree (Wilson's
  algorithm) at a population-feasible edge.
- ``flip_step`` reassigns a single boundary unit between adjacent
  districts, preserving contiguity and balance.

Both proposals self-loop (return the input plan) when no feasible move is
found within ``max_attempts``; exhaustion is only an error at the
candidate-set level. All randomness flows through an explicit
``random.Random`` so identical seeds replay identical chains.
"""

from __future__ import annotations

import logging
import random
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .graphs import DualGraph, Plan, plan_hash, subset_connected
from .streams import derive_rng

logger = logging.getLogger(__name__)


class SeedingError(RuntimeError):
    """Raised when no balanced contiguous seed plan can be constructed."""


class CandidateExhaustionError(RuntimeError):
    """Raised when a chain cannot collect enough distinct candidate plans."""

    def __init__(self, message: str, found: int):
        super().__init__(message)
        self.found = found


@dataclass(frozen=True)
class GenConfig:
    """Knobs for plan generation.

    ``epsilon`` is the population tolerance as a fraction of the ideal
    district population. ``chain_thinning`` is the number of chain steps
    between retained samples; ``max_attempts`` caps proposal rejections
    per step.
    """

    epsilon: float = 0.05
    method: str = "recom"
    chain_thinning: int = 10
    max_attempts: int = 1000
    seed: int = 0
    # Give up collecting candidates after this many consecutive retained
    # samples yield no new distinct plan (small regions run out of maps long
    # before the hard step budget).
    stall_samples: int = 100

    def __post_init__(self):
        if not (0 < self.epsilon < 1) and self.epsilon != 0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.method not in ("recom", "flip"):
            raise ValueError(f"unknown chain method {self.method!r}")
        if self.chain_thinning < 1:
            raise ValueError("chain_thinning must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.stall_samples < 1:
            raise ValueError("stall_samples must be >= 1")


@dataclass
class CandidateSet:
    """Distinct feasible plans over one region for one game round."""

    round: int
    plans: list[Plan]
    region: frozenset[str]
    k: int
    diagnostics: dict = field(default_factory=dict)

    def hashes(self) -> list[str]:
        return [plan_hash(p) for p in self.plans]


def contiguous(unit_set: Iterable[str], graph: DualGraph) -> bool:
    """True iff the induced subgraph on ``unit_set`` is connected."""
    return subset_connected(unit_set, graph)


def balanced(plan: Plan, graph: DualGraph, ideal_pop: float, epsilon: float) -> bool:
    """True iff every district population is within epsilon·ideal of ideal."""
    pops: dict[int, int] = {lab: 0 for lab in plan.labels()}
    for uid, lab in plan.assignment.items():
        pops[lab] += graph.populations[uid]
    tol = epsilon * ideal_pop
    return all(abs(p - ideal_pop) <= tol for p in pops.values())


# ---------------------------------------------------------------------------
# Spanning trees
# ---------------------------------------------------------------------------


def _ridx(rng: random.Random, n: int) -> int:
    # Uniform index draw; one float per call keeps hot loops cheap.
    return int(rng.random() * n)


def _induced_adjacency(units: Iterable[str], graph: DualGraph) -> dict[str, list[str]]:
    members = set(units)
    return {u: [w for w in graph.neighbors[u] if w in members] for u in members}


def wilson_spanning_tree(
    units: frozenset[str] | set[str],
    graph: DualGraph,
    rng: random.Random,
    adj: Optional[dict[str, list[str]]] = None,
) -> dict[str, Optional[str]]:
    """Uniform random spanning tree of the induced subgraph via Wilson's
    loop-erased random walks. Returns parent pointers toward the root
    (root maps to None). The subgraph must be connected. ``adj`` may carry
    a precomputed induced adjacency to amortize repeated draws on the same
    region.
    """
    if adj is None:
        adj = _induced_adjacency(units, graph)
    order = sorted(units)
    rnd = rng.random
    root = order[int(rnd() * len(order))]
    in_tree = {root}
    parent: dict[str, Optional[str]] = {root: None}
    for start in order:
        u = start
        while u not in in_tree:
            nbrs = adj[u]
            nxt = nbrs[int(rnd() * len(nbrs))]
            parent[u] = nxt
            u = nxt
        u = start
        while u not in in_tree:
            in_tree.add(u)
            u = parent[u]
    return parent


def _tree_children(parent: dict[str, Optional[str]]) -> dict[str, list[str]]:
    children: dict[str, list[str]] = {u: [] for u in parent}
    for u, p in parent.items():
        if p is not None:
            children[p].append(u)
    return children


def _subtree_populations(
    parent: dict[str, Optional[str]], children: dict[str, list[str]], graph: DualGraph
) -> dict[str, int]:
    # Post-order accumulation without recursion.
    root = next(u for u, p in parent.items() if p is None)
    pops = {u: graph.populations[u] for u in parent}
    stack = [root]
    order = []
    while stack:
        u = stack.pop()
        order.append(u)
        stack.extend(children[u])
    for u in reversed(order):
        p = parent[u]
        if p is not None:
            pops[p] += pops[u]
    return pops


def _subtree_units(node: str, children: dict[str, list[str]]) -> set[str]:
    out = set()
    stack = [node]
    while stack:
        u = stack.pop()
        out.add(u)
        stack.extend(children[u])
    return out


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def _tree_bipartition(
    units: frozenset[str],
    k1: int,
    k2: int,
    ideal_pop: float,
    epsilon: float,
    graph: DualGraph,
    rng: random.Random,
    max_attempts: int,
) -> tuple[set[str], set[str]]:
    """Split ``units`` into two connected groups destined for ``k1`` and
    ``k2`` districts, each group's population within its own scaled window
    (k_i·ideal ± k_i·epsilon·ideal), by cutting random spanning trees.
    Raises :class:`SeedingError` after ``max_attempts`` trees without a
    feasible cut.
    """
    total = sum(graph.populations[u] for u in units)
    tol1 = k1 * epsilon * ideal_pop
    tol2 = k2 * epsilon * ideal_pop
    target1 = k1 * ideal_pop
    target2 = k2 * ideal_pop
    adj = _induced_adjacency(units, graph)
    for _ in range(max_attempts):
        parent = wilson_spanning_tree(units, graph, rng, adj=adj)
        children = _tree_children(parent)
        pops = _subtree_populations(parent, children, graph)
        # A cut is usable if the subtree can play either group role with the
        # complement taking the other.
        options: list[tuple[str, bool]] = []
        for u in sorted(parent):
            if parent[u] is None:
                continue
            s = pops[u]
            c = total - s
            if abs(s - target1) <= tol1 and abs(c - target2) <= tol2:
                options.append((u, True))
            if k1 != k2 and abs(s - target2) <= tol2 and abs(c - target1) <= tol1:
                options.append((u, False))
        if options:
            node, subtree_is_k1 = options[_ridx(rng, len(options))]
            side = _subtree_units(node, children)
            rest = set(units) - side
            return (side, rest) if subtree_is_k1 else (rest, side)
    raise SeedingError(
        f"no cut into {k1}+{k2} district groups (ideal {ideal_pop:.1f}, "
        f"epsilon {epsilon}) after {max_attempts} trees"
    )


def seed_plan(
    region: Iterable[str],
    k: int,
    graph: DualGraph,
    cfg: GenConfig,
    ideal_pop: float,
    rng: Optional[random.Random] = None,
) -> Plan:
    """Build an initial k-district plan over ``region`` by recursive
    spanning-tree bipartition, splitting k into floor/ceil halves with
    proportional population targets.
    """
    region = frozenset(region)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not region:
        raise ValueError("region is empty")
    if not contiguous(region, graph):
        raise SeedingError("region is not contiguous")
    pop = sum(graph.populations[u] for u in region)
    tol = k * cfg.epsilon * ideal_pop
    if abs(pop - k * ideal_pop) > tol:
        raise SeedingError(
            f"region population {pop} infeasible for {k} districts of {ideal_pop:.1f}"
            f" (tolerance {tol:.1f})"
        )
    if k > len(region):
        raise SeedingError(f"cannot split {len(region)} units into {k} districts")
    if rng is None:
        rng = derive_rng(cfg.seed, "seed-plan")

    def split(units: frozenset[str], parts: int) -> list[set[str]]:
        if parts == 1:
            return [set(units)]
        k1 = parts // 2
        k2 = parts - k1
        side1, side2 = _tree_bipartition(
            units, k1, k2, ideal_pop, cfg.epsilon, graph, rng, cfg.max_attempts
        )
        return split(frozenset(side1), k1) + split(frozenset(side2), k2)

    outer_attempts = 5
    last_error: Optional[SeedingError] = None
    for attempt in range(outer_attempts):
        try:
            parts = split(region, k)
        except SeedingError as exc:
            last_error = exc
            continue
        assignment = {u: i + 1 for i, part in enumerate(parts) for u in part}
        plan = Plan(region=region, k=k, assignment=assignment)
        if balanced(plan, graph, ideal_pop, cfg.epsilon):
            return plan
        last_error = SeedingError("recursive split left an out-of-tolerance district")
    raise SeedingError(f"seeding failed after {outer_attempts} attempts: {last_error}")


# ---------------------------------------------------------------------------
# Chain steps
# ---------------------------------------------------------------------------


def _district_populations(plan: Plan, graph: DualGraph) -> dict[int, int]:
    pops = {lab: 0 for lab in plan.labels()}
    for uid, lab in plan.assignment.items():
        pops[lab] += graph.populations[uid]
    return pops


def _adjacent_label_pairs(plan: Plan, graph: DualGraph) -> list[tuple[int, int]]:
    pairs: set[tuple[int, int]] = set()
    assignment = plan.assignment
    for e in graph.edges:
        la = assignment.get(e.a)
        lb = assignment.get(e.b)
        if la is None or lb is None or la == lb:
            continue
        pairs.add((la, lb) if la < lb else (lb, la))
    return sorted(pairs)


def recom_step(
    plan: Plan,
    graph: DualGraph,
    cfg: GenConfig,
    ideal_pop: float,
    rng: random.Random,
    stats: Optional[dict] = None,
) -> Plan:
    """One recombination proposal: merge a random adjacent district pair and
    re-split via a uniform spanning tree cut that leaves both sides within
    tolerance. Returns the input plan unchanged (self-loop) if every attempt
    fails.
    """
    pairs = _adjacent_label_pairs(plan, graph)
    if not pairs:
        if stats is not None:
            stats["self_loops"] = stats.get("self_loops", 0) + 1
        return plan
    tol = cfg.epsilon * ideal_pop
    districts = plan.districts()
    cache: dict[tuple[int, int], tuple[frozenset[str], dict[str, list[str]], int]] = {}
    for _ in range(cfg.max_attempts):
        la, lb = pairs[_ridx(rng, len(pairs))]
        if (la, lb) not in cache:
            merged = frozenset(districts[la] | districts[lb])
            cache[la, lb] = (merged, _induced_adjacency(merged, graph),
                             sum(graph.populations[u] for u in merged))
        merged, adj, merged_pop = cache[la, lb]
        parent = wilson_spanning_tree(merged, graph, rng, adj=adj)
        children = _tree_children(parent)
        pops = _subtree_populations(parent, children, graph)
        cuts = [
            u
            for u in sorted(parent)
            if parent[u] is not None
            and abs(pops[u] - ideal_pop) <= tol
            and abs((merged_pop - pops[u]) - ideal_pop) <= tol
        ]
        if not cuts:
            if stats is not None:
                stats["recom_rejections"] = stats.get("recom_rejections", 0) + 1
            continue
        node = cuts[_ridx(rng, len(cuts))]
        side = _subtree_units(node, children)
        assignment = dict(plan.assignment)
        for u in merged:
            assignment[u] = la if u in side else lb
        return Plan(region=plan.region, k=plan.k, assignment=assignment)
    if stats is not None:
        stats["self_loops"] = stats.get("self_loops", 0) + 1
    return plan


def flip_step(
    plan: Plan,
    graph: DualGraph,
    cfg: GenConfig,
    ideal_pop: float,
    rng: random.Random,
    stats: Optional[dict] = None,
) -> Plan:
    """One boundary-flip proposal: move one unit across a random cut edge if
    the donor district stays nonempty and contiguous and both districts stay
    within tolerance. Self-loops after ``max_attempts`` rejections.
    """
    assignment = plan.assignment
    proposals: list[tuple[str, str]] = []
    for e in graph.edges:
        la = assignment.get(e.a)
        lb = assignment.get(e.b)
        if la is None or lb is None or la == lb:
            continue
        proposals.append((e.a, e.b))
        proposals.append((e.b, e.a))
    if not proposals:
        if stats is not None:
            stats["self_loops"] = stats.get("self_loops", 0) + 1
        return plan

    tol = cfg.epsilon * ideal_pop
    pops = _district_populations(plan, graph)
    districts = plan.districts()
    for _ in range(cfg.max_attempts):
        mover, anchor = proposals[_ridx(rng, len(proposals))]
        src = assignment[mover]
        dst = assignment[anchor]
        donor = districts[src]
        if len(donor) <= 1:
            _bump(stats, "flip_rejections")
            continue
        moved_pop = graph.populations[mover]
        if abs(pops[src] - moved_pop - ideal_pop) > tol or abs(pops[dst] + moved_pop - ideal_pop) > tol:
            _bump(stats, "flip_rejections")
            continue
        if not subset_connected(donor - {mover}, graph):
            _bump(stats, "flip_rejections")
            continue
        new_assignment = dict(assignment)
        new_assignment[mover] = dst
        return Plan(region=plan.region, k=plan.k, assignment=new_assignment)
    if stats is not None:
        stats["self_loops"] = stats.get("self_loops", 0) + 1
    return plan


def _bump(stats: Optional[dict], key: str) -> None:
    if stats is not None:
        stats[key] = stats.get(key, 0) + 1


_STEPPERS = {"recom": recom_step, "flip": flip_step}


def generate_candidates(
    region: Iterable[str],
    k: int,
    c: int,
    graph: DualGraph,
    cfg: GenConfig,
    ideal_pop: float,
    rng: random.Random,
    round_index: int = 0,
    require_full: bool = True,
) -> CandidateSet:
    """Collect ``c`` distinct feasible plans over ``region``.

    A fresh seed plan starts a single chain; every ``chain_thinning``-th
    state is retained when its canonical hash is new. Fewer than ``c``
    plans within the step budget raises :class:`CandidateExhaustionError`
    unless ``require_full`` is false, in which case the short set is
    returned with a warning (small regions can simply run out of feasible
    maps).
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    region = frozenset(region)
    stats: dict = {}
    plan = seed_plan(region, k, graph, cfg, ideal_pop, rng=rng)
    plans = [plan]
    seen = {plan_hash(plan)}

    if k == 1:
        if c > 1:
            warnings.warn("k=1 region has a single feasible plan; candidate set collapsed")
        stats["steps"] = 0
        return CandidateSet(round_index, plans, region, k, stats)

    step = _STEPPERS[cfg.method]
    max_steps = c * cfg.max_attempts * cfg.chain_thinning
    steps = 0
    stalled = 0
    while len(plans) < c and steps < max_steps and stalled < cfg.stall_samples:
        for _ in range(cfg.chain_thinning):
            plan = step(plan, graph, cfg, ideal_pop, rng, stats)
            steps += 1
        h = plan_hash(plan)
        if h not in seen:
            seen.add(h)
            plans.append(plan)
            stalled = 0
        else:
            stalled += 1
    stats["steps"] = steps

    if len(plans) < c:
        msg = (
            f"found {len(plans)} of {c} distinct plans on {len(region)} units"
            f" (k={k}) within {steps} chain steps"
        )
        if require_full:
            raise CandidateExhaustionError(f"candidate exhaustion: {msg}", found=len(plans))
        warnings.warn(f"candidate set collapsed: {msg}")
        logger.info("candidate set collapsed: %s", msg)
    return CandidateSet(round_index, plans, region, k, stats)
