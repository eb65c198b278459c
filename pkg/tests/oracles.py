"""Independent brute-force oracles used to check the engine.

Everything here works from first principles on the raw unit/edge lists
(never through the package's own traversal or scoring helpers) so that a
bug in the engine cannot hide in its own test oracle.
"""

from __future__ import annotations

import itertools
from collections import deque


def adjacency_from_edges(graph) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {u.id: set() for u in graph.units}
    for e in graph.edges:
        adj[e.a].add(e.b)
        adj[e.b].add(e.a)
    return adj


def connected(units, adj) -> bool:
    members = set(units)
    if not members:
        return False
    start = next(iter(members))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w in members and w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(members)


def partition_signature(plan) -> frozenset[frozenset[str]]:
    """Label-free identity of a plan: the set of its district unit sets."""
    blocks: dict[int, set[str]] = {}
    for uid, lab in plan.assignment.items():
        blocks.setdefault(lab, set()).add(uid)
    return frozenset(frozenset(b) for b in blocks.values())


def enumerate_partitions(graph, region, k, ideal, epsilon) -> set[frozenset[frozenset[str]]]:
    """All contiguous, balanced, unordered k-partitions of ``region``."""
    adj = adjacency_from_edges(graph)
    pops = {u.id: u.population for u in graph.units}
    region = sorted(region)
    tol = epsilon * ideal
    out: set[frozenset[frozenset[str]]] = set()

    def feasible_block(block) -> bool:
        pop = sum(pops[u] for u in block)
        return abs(pop - ideal) <= tol and connected(block, adj)

    def recurse(remaining: list[str], blocks: list[frozenset[str]], parts_left: int):
        if parts_left == 1:
            block = frozenset(remaining)
            if block and feasible_block(block):
                out.add(frozenset(blocks + [block]))
            return
        # Anchor on the smallest remaining unit to avoid permuted duplicates.
        anchor = remaining[0]
        rest = remaining[1:]
        max_extra = len(remaining) - parts_left
        for size in range(0, max_extra + 1):
            for combo in itertools.combinations(rest, size):
                block = frozenset((anchor,) + combo)
                if not feasible_block(block):
                    continue
                next_remaining = [u for u in rest if u not in block]
                recurse(next_remaining, blocks + [block], parts_left - 1)

    recurse(region, [], k)
    return out


def tally_district(units, graph) -> tuple[int, float, float]:
    """(population, dem votes, rep votes) by direct unit summation."""
    pop = dem = rep = 0
    for u in graph.units:
        if u.id in units:
            pop += u.population
            dem += u.dem_votes
            rep += u.rep_votes
    return pop, dem, rep


def partisan_score(plan, graph, party) -> tuple[int, float]:
    """Independent (seats, margin sum) tally for a party."""
    seats = 0
    margin = 0.0
    for lab in range(1, plan.k + 1):
        units = {u for u, l in plan.assignment.items() if l == lab}
        _, dem, rep = tally_district(units, graph)
        own, opp = (dem, rep) if party == "democrat" else (rep, dem)
        if own > opp:
            seats += 1
            margin += own / (own + opp) - 0.5
    return seats, margin
