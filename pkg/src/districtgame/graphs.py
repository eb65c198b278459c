"""Dual graphs of population units, district plans, and their on-disk formats.

A state is modeled as an adjacency graph of population units (precincts,
census blocks, or synthetic grid cells). Geometry is carried as precomputed
scalars: every unit knows its area, its share of the state's exterior
boundary, and every edge knows the length of the shared border. No GIS
dependency is needed; loaders only validate and index.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
import re
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class GraphFormatError(ValueError):
    """Raised when an input file cannot be parsed under its declared format."""


class GraphValidationError(ValueError):
    """Raised when a parsed graph violates a structural invariant."""


class PlanValidationError(ValueError):
    """Raised when a district assignment violates a plan invariant."""


@dataclass(frozen=True)
class Unit:
    """One population unit (graph node).

    Lengths are km, areas km². ``outer_boundary`` is the length of this
    unit's border lying on the state exterior.
    """

    id: str
    population: int
    dem_votes: float
    rep_votes: float
    area: float
    outer_boundary: float
    demographics: Optional[Mapping[str, int]] = None

    def issues(self) -> list[str]:
        out = []
        if self.population < 0:
            out.append(f"unit {self.id!r}: negative population {self.population}")
        if self.area <= 0:
            out.append(f"unit {self.id!r}: non-positive area {self.area}")
        if self.outer_boundary < 0:
            out.append(f"unit {self.id!r}: negative outer_boundary {self.outer_boundary}")
        if self.dem_votes < 0 or self.rep_votes < 0:
            out.append(f"unit {self.id!r}: negative vote count")
        return out


@dataclass(frozen=True)
class Edge:
    """Adjacency between two units sharing a border of positive length (km)."""

    a: str
    b: str
    shared_boundary: float

    def key(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)


class DualGraph:
    """Immutable adjacency graph of units with geometry and vote counts.

    Construction validates connectivity, edge endpoints, duplicate edges,
    and positive total population unless ``validate=False`` (used by
    :func:`validate_graph` to inspect broken inputs).

    Safe to share across threads/processes after construction.
    """

    def __init__(self, units: Sequence[Unit], edges: Sequence[Edge], validate: bool = True):
        self.units: tuple[Unit, ...] = tuple(units)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self._unit_by_id: dict[str, Unit] = {u.id: u for u in self.units}
        self.unit_ids: frozenset[str] = frozenset(self._unit_by_id)

        nbrs: dict[str, list[str]] = {u.id: [] for u in self.units}
        shared: dict[tuple[str, str], float] = {}
        for e in self.edges:
            if e.a in nbrs and e.b in nbrs and e.a != e.b and e.key() not in shared:
                nbrs[e.a].append(e.b)
                nbrs[e.b].append(e.a)
            shared.setdefault(e.key(), e.shared_boundary)
        # Sorted neighbor lists give a canonical traversal order regardless
        # of input edge order.
        self.neighbors: dict[str, tuple[str, ...]] = {
            uid: tuple(sorted(ns)) for uid, ns in nbrs.items()
        }
        self.shared_boundary: dict[tuple[str, str], float] = shared
        self.populations: dict[str, int] = {u.id: u.population for u in self.units}
        self.total_population: int = sum(self.populations.values())
        self.total_area: float = sum(u.area for u in self.units)

        if validate:
            problems = validate_graph(self)
            if problems:
                raise GraphValidationError("; ".join(problems))

    def unit(self, uid: str) -> Unit:
        return self._unit_by_id[uid]

    def __contains__(self, uid: str) -> bool:
        return uid in self._unit_by_id

    def __len__(self) -> int:
        return len(self.units)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DualGraph):
            return NotImplemented
        return self.units == other.units and self.edges == other.edges

    def __repr__(self) -> str:
        return f"DualGraph(units={len(self.units)}, edges={len(self.edges)})"

    def to_json_dict(self) -> dict:
        units = []
        for u in self.units:
            d = {
                "id": u.id,
                "population": u.population,
                "dem_votes": u.dem_votes,
                "rep_votes": u.rep_votes,
                "area": u.area,
                "outer_boundary": u.outer_boundary,
            }
            if u.demographics is not None:
                d["demographics"] = dict(u.demographics)
            units.append(d)
        edges = [
            {"a": e.a, "b": e.b, "shared_boundary": e.shared_boundary} for e in self.edges
        ]
        return {"units": units, "edges": edges}


def subset_connected(unit_set: Iterable[str], graph: DualGraph) -> bool:
    """Breadth-first reachability check on the induced subgraph."""
    members = set(unit_set)
    if not members:
        raise ValueError("connectivity of the empty set is undefined")
    start = next(iter(members))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in graph.neighbors[u]:
            if w in members and w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(members)


def validate_graph(graph: DualGraph) -> list[str]:
    """Every invariant violation in ``graph``; empty iff the graph is valid."""
    problems: list[str] = []
    seen_ids: set[str] = set()
    for u in graph.units:
        if u.id in seen_ids:
            problems.append(f"duplicate unit id {u.id!r}")
        seen_ids.add(u.id)
        problems.extend(u.issues())
    seen_edges: set[tuple[str, str]] = set()
    for i, e in enumerate(graph.edges):
        for endpoint in (e.a, e.b):
            if endpoint not in seen_ids:
                problems.append(f"edge {i} references unknown unit id {endpoint!r}")
        if e.a == e.b:
            problems.append(f"edge {i} is a self-loop on {e.a!r}")
        if e.key() in seen_edges:
            problems.append(f"duplicate edge between {e.a!r} and {e.b!r}")
        seen_edges.add(e.key())
        if e.shared_boundary <= 0:
            problems.append(f"edge {e.a!r}-{e.b!r}: non-positive shared_boundary")
    if graph.units and not problems:
        if not subset_connected(graph.unit_ids, graph):
            problems.append("disconnected: not all units are mutually reachable")
    if graph.total_population <= 0:
        problems.append("total population must be positive")
    if not graph.units:
        problems.append("graph has no units")
    return problems


@dataclass(frozen=True)
class Plan:
    """Assignment of every unit in ``region`` to a district label in 1..k."""

    region: frozenset[str]
    k: int
    assignment: Mapping[str, int]

    def labels(self) -> range:
        return range(1, self.k + 1)

    def district_units(self, label: int) -> frozenset[str]:
        return frozenset(u for u, lab in self.assignment.items() if lab == label)

    def districts(self) -> dict[int, set[str]]:
        out: dict[int, set[str]] = {lab: set() for lab in self.labels()}
        for u, lab in self.assignment.items():
            out[lab].add(u)
        return out


def plan_hash(plan: Plan) -> str:
    """Canonical hash, invariant under district label permutation.

    Labels are renumbered in order of the smallest unit id each district
    contains before hashing, so two assignments describing the same map
    collide.
    """
    renumber: dict[int, int] = {}
    for uid in sorted(plan.region):
        lab = plan.assignment[uid]
        if lab not in renumber:
            renumber[lab] = len(renumber) + 1
    payload = ";".join(f"{uid}={renumber[plan.assignment[uid]]}" for uid in sorted(plan.region))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def validate_plan(plan: Plan, graph: DualGraph, check_contiguity: bool = True) -> list[str]:
    """Plan invariant violations; empty iff the plan is valid over ``graph``."""
    problems: list[str] = []
    missing = plan.region - graph.unit_ids
    if missing:
        problems.append(f"region contains unknown unit ids: {sorted(missing)[:5]}")
    assigned = set(plan.assignment)
    if assigned != set(plan.region):
        uncovered = sorted(plan.region - assigned)[:5]
        extra = sorted(assigned - plan.region)[:5]
        if uncovered:
            problems.append(f"uncovered units: {uncovered}")
        if extra:
            problems.append(f"assignment covers units outside region: {extra}")
    used = set(plan.assignment.values())
    expected = set(plan.labels())
    if used != expected:
        problems.append(f"labels used {sorted(used)} != expected 1..{plan.k}")
    if check_contiguity and not problems:
        for lab in plan.labels():
            members = plan.district_units(lab)
            if members and not subset_connected(members, graph):
                problems.append(f"district {lab} is not contiguous")
    return problems


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------

_REQUIRED_UNIT_FIELDS = ("id", "population", "dem_votes", "rep_votes", "area", "outer_boundary")


def _unit_from_record(rec: Mapping, where: str) -> Unit:
    for f in _REQUIRED_UNIT_FIELDS:
        if f not in rec or rec[f] in (None, ""):
            raise GraphFormatError(f"{where}: missing field {f!r}")
    try:
        demographics = rec.get("demographics")
        return Unit(
            id=str(rec["id"]),
            population=int(rec["population"]),
            dem_votes=float(rec["dem_votes"]),
            rep_votes=float(rec["rep_votes"]),
            area=float(rec["area"]),
            outer_boundary=float(rec["outer_boundary"]),
            demographics=dict(demographics) if demographics else None,
        )
    except (TypeError, ValueError) as exc:
        raise GraphFormatError(f"{where}: {exc}") from exc


def _edge_from_record(rec: Mapping, where: str) -> Edge:
    for f in ("a", "b", "shared_boundary"):
        if f not in rec or rec[f] in (None, ""):
            raise GraphFormatError(f"{where}: missing field {f!r}")
    try:
        return Edge(a=str(rec["a"]), b=str(rec["b"]), shared_boundary=float(rec["shared_boundary"]))
    except (TypeError, ValueError) as exc:
        raise GraphFormatError(f"{where}: {exc}") from exc


def load_dual_graph(path: str | Path, format: str = "canonical-json") -> DualGraph:
    """Load a dual graph from disk.

    ``canonical-json``: a single JSON object with ``units`` and ``edges``
    arrays. ``node-edge-csv``: ``path`` is a directory holding ``units.csv``
    and ``edges.csv``.
    """
    path = Path(path)
    if format == "canonical-json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict) or "units" not in data or "edges" not in data:
            raise GraphFormatError(f"{path}: expected object with 'units' and 'edges'")
        units = [_unit_from_record(r, f"{path}: units[{i}]") for i, r in enumerate(data["units"])]
        edges = [_edge_from_record(r, f"{path}: edges[{i}]") for i, r in enumerate(data["edges"])]
    elif format == "node-edge-csv":
        units_path, edges_path = path / "units.csv", path / "edges.csv"
        for p in (units_path, edges_path):
            if not p.exists():
                raise GraphFormatError(f"{p}: file not found")
        with open(units_path, newline="") as fh:
            units = [
                _unit_from_record(row, f"{units_path}: row {i + 2}")
                for i, row in enumerate(csv.DictReader(fh))
            ]
        with open(edges_path, newline="") as fh:
            edges = [
                _edge_from_record(row, f"{edges_path}: row {i + 2}")
                for i, row in enumerate(csv.DictReader(fh))
            ]
    else:
        raise ValueError(f"unknown graph format {format!r}")
    return DualGraph(units, edges)


def save_dual_graph(graph: DualGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph.to_json_dict(), indent=1) + "\n")


def load_assignment(path: str | Path, graph: DualGraph, allow_discontiguous: bool = False) -> Plan:
    """Load a full-state district assignment CSV (``unit_id,district``).

    Labels must be the dense integers 1..k. Contiguity is always checked;
    a violation raises unless ``allow_discontiguous`` is set, in which case
    it is reported as a warning (enacted plans sometimes break contiguity
    under a given adjacency, and their metrics are still well defined).
    """
    path = Path(path)
    assignment: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"unit_id", "district"}:
            raise GraphFormatError(f"{path}: expected header 'unit_id,district'")
        for i, row in enumerate(reader):
            uid = row["unit_id"]
            if uid not in graph:
                raise PlanValidationError(f"{path}: row {i + 2}: unknown unit id {uid!r}")
            if uid in assignment:
                raise PlanValidationError(f"{path}: row {i + 2}: unit {uid!r} assigned twice")
            try:
                label = int(row["district"])
            except ValueError as exc:
                raise GraphFormatError(f"{path}: row {i + 2}: bad district label") from exc
            if label < 1:
                raise PlanValidationError(f"{path}: row {i + 2}: label must be positive")
            assignment[uid] = label

    uncovered = graph.unit_ids - set(assignment)
    if uncovered:
        raise PlanValidationError(f"uncovered unit(s): {sorted(uncovered)[:5]}")
    labels = set(assignment.values())
    k = max(labels)
    if labels != set(range(1, k + 1)):
        missing = sorted(set(range(1, k + 1)) - labels)
        raise PlanValidationError(f"label gap: labels must be dense 1..{k}, missing {missing}")

    plan = Plan(region=graph.unit_ids, k=k, assignment=assignment)
    problems = validate_plan(plan, graph, check_contiguity=True)
    contiguity = [p for p in problems if "contiguous" in p]
    other = [p for p in problems if "contiguous" not in p]
    if other:
        raise PlanValidationError("; ".join(other))
    if contiguity:
        if not allow_discontiguous:
            raise PlanValidationError("; ".join(contiguity))
        warnings.warn(f"{path}: accepted non-contiguous plan ({'; '.join(contiguity)})")
    return plan


def save_assignment(plan: Plan, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "district"])
        for uid in sorted(plan.region):
            writer.writerow([uid, plan.assignment[uid]])


# ---------------------------------------------------------------------------
# Synthetic grid states
# ---------------------------------------------------------------------------

_CLUSTERED_RE = re.compile(r"^clustered\(\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\)$")
# The clustered model places two metro cores in opposite corners (real
# states tend to have a small number of urban centers at their edges, e.g.
# Philadelphia/Pittsburgh). The radius fraction keeps each metro a bit
# under one ideal district so the statewide split stays competitive and
# districting choices, not geography alone, decide seat outcomes.
_CORE_RADIUS_FRACTION = 0.35
_SHARE_NOISE = 0.002


def build_grid_state(
    rows: int,
    cols: int,
    pop_per_unit: int,
    vote_model: str = "uniform-5050",
    seed: int = 0,
) -> DualGraph:
    """Synthesize a rows×cols 4-adjacent grid state.

    Each unit has area 1 km², interior borders are 1 km, and border units
    carry an outer boundary equal to their count of missing neighbors.
    Vote shares are drawn deterministically from ``seed``:

    - ``uniform-5050``: per-unit Democratic share uniform in [0.35, 0.65].
    - ``clustered(p_core, p_fringe)``: units inside two metro disks (in
      opposite corners) lean ``p_core``, the rest ``p_fringe``, each with
      small uniform noise — a stylized two-metro state.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if pop_per_unit < 0:
        raise ValueError("pop_per_unit must be nonnegative")

    m = _CLUSTERED_RE.match(vote_model.strip()) if vote_model != "uniform-5050" else None
    if vote_model != "uniform-5050" and m is None:
        raise ValueError(f"unknown vote model {vote_model!r}")
    if m is not None:
        p_core, p_fringe = float(m.group(1)), float(m.group(2))
        if not (0 <= p_core <= 1 and 0 <= p_fringe <= 1):
            raise ValueError("clustered shares must lie in [0, 1]")

    rng = random.Random(seed)
    metros = ((0.0, 0.0), (float(rows - 1), float(cols - 1)))
    core_radius = _CORE_RADIUS_FRACTION * min(rows, cols)

    units: list[Unit] = []
    for i in range(rows):
        for j in range(cols):
            if vote_model == "uniform-5050":
                share = rng.uniform(0.35, 0.65)
            else:
                in_core = any(math.hypot(i - mr, j - mc) <= core_radius for mr, mc in metros)
                base = p_core if in_core else p_fringe
                share = min(0.99, max(0.01, base + rng.uniform(-_SHARE_NOISE, _SHARE_NOISE)))
            degree = sum(1 for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                         if 0 <= i + di < rows and 0 <= j + dj < cols)
            units.append(
                Unit(
                    id=f"r{i}c{j}",
                    population=pop_per_unit,
                    dem_votes=share * pop_per_unit,
                    rep_votes=(1.0 - share) * pop_per_unit,
                    area=1.0,
                    outer_boundary=float(4 - degree),
                )
            )

    edges: list[Edge] = []
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                edges.append(Edge(f"r{i}c{j}", f"r{i}c{j + 1}", 1.0))
            if i + 1 < rows:
                edges.append(Edge(f"r{i}c{j}", f"r{i + 1}c{j}", 1.0))
    return DualGraph(units, edges)
