"""Evaluation metrics for district plans.

Four measures are computed per plan: population deviation (balance),
Polsby-Popper score (compactness), partisan bias (signed, positive favors
the Democratic column), and unfairness (population-weighted share of
residents whose preferred party lost their district).

All functions are pure over immutable inputs and safe to call in parallel.
Partisan quantities are computed directly from vote quotients (e.g.
``(dem - rep) / (dem + rep)``) so that swapping the two vote columns
mirrors every result exactly, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .graphs import DualGraph, Plan


@dataclass(frozen=True)
class DistrictGeometry:
    """Aggregated geometry and tallies for one district."""

    label: int
    area: float
    perimeter: float
    population: int
    dem_votes: float
    rep_votes: float

    @property
    def total_votes(self) -> float:
        return self.dem_votes + self.rep_votes

    @property
    def pct_dem(self) -> float:
        total = self.total_votes
        if total <= 0:
            raise ValueError(f"district {self.label} has no votes")
        return self.dem_votes / total


@dataclass(frozen=True)
class MetricsReport:
    """All four metrics for one plan."""

    pd: float
    pps_per_district: tuple[float, ...]
    pps_avg: float
    pps_min: float
    bias: float
    unfairness: float

    CSV_HEADER = ("PD", "PPS_avg", "PPS_min", "Bias", "Unfairness")

    def as_row(self) -> tuple[float, float, float, float, float]:
        return (self.pd, self.pps_avg, self.pps_min, self.bias, self.unfairness)

    def to_json_dict(self) -> dict:
        return {
            "PD": self.pd,
            "PPS_per_district": list(self.pps_per_district),
            "PPS_avg": self.pps_avg,
            "PPS_min": self.pps_min,
            "Bias": self.bias,
            "Unfairness": self.unfairness,
        }


def district_geometry(plan: Plan, graph: DualGraph) -> list[DistrictGeometry]:
    """Per-district area, perimeter, population, and vote totals.

    A district's perimeter is the sum of its member units' exterior
    boundaries plus every border segment shared with a unit outside the
    district (whether that unit belongs to another district of the plan or
    lies outside the plan's region entirely).
    """
    area = [0.0] * (plan.k + 1)
    pop = [0] * (plan.k + 1)
    dem = [0.0] * (plan.k + 1)
    rep = [0.0] * (plan.k + 1)
    perim = [0.0] * (plan.k + 1)

    assignment = plan.assignment
    for uid in plan.region:
        u = graph.unit(uid)
        lab = assignment[uid]
        area[lab] += u.area
        pop[lab] += u.population
        dem[lab] += u.dem_votes
        rep[lab] += u.rep_votes
        perim[lab] += u.outer_boundary

    for e in graph.edges:
        la = assignment.get(e.a)
        lb = assignment.get(e.b)
        if la == lb:
            continue
        if la is not None:
            perim[la] += e.shared_boundary
        if lb is not None:
            perim[lb] += e.shared_boundary

    return [
        DistrictGeometry(lab, area[lab], perim[lab], pop[lab], dem[lab], rep[lab])
        for lab in plan.labels()
    ]


def population_deviation(plan: Plan, graph: DualGraph, raw: bool = False) -> float:
    """Mean absolute deviation of district populations from the ideal.

    By default the deviation is expressed as a fraction of the ideal
    district population (total / k); ``raw=True`` reports persons instead.
    """
    geoms = district_geometry(plan, graph)
    return _pd_from_geometries(geoms, raw=raw)


def _pd_from_geometries(geoms: Sequence[DistrictGeometry], raw: bool = False) -> float:
    n = len(geoms)
    total = sum(g.population for g in geoms)
    ideal = total / n
    mean_abs = sum(abs(g.population - ideal) for g in geoms) / n
    return mean_abs if raw else mean_abs / ideal


def polsby_popper(plan: Plan, graph: DualGraph) -> tuple[list[float], float, float]:
    """Per-district 4πA/P² scores with their unweighted mean and minimum."""
    geoms = district_geometry(plan, graph)
    scores = _pps_from_geometries(geoms)
    return scores, sum(scores) / len(scores), min(scores)


def _pps_from_geometries(geoms: Sequence[DistrictGeometry]) -> list[float]:
    scores = []
    for g in geoms:
        if g.perimeter <= 0:
            raise ValueError(f"district {g.label} has zero perimeter (degenerate geometry)")
        scores.append(4.0 * math.pi * g.area / (g.perimeter * g.perimeter))
    return scores


def partisan_bias(plan: Plan, graph: DualGraph) -> float:
    """Mean signed Democratic margin over districts, in [-1, 1].

    Per district the margin is (dem - rep) / (dem + rep), i.e.
    2·pct_dem - 1. Positive values favor the Democratic column.
    """
    geoms = district_geometry(plan, graph)
    return _bias_from_geometries(geoms)


def _bias_from_geometries(geoms: Sequence[DistrictGeometry]) -> float:
    acc = 0.0
    for g in geoms:
        total = g.total_votes
        if total <= 0:
            raise ValueError(f"district {g.label} has no votes")
        acc += (g.dem_votes - g.rep_votes) / total
    return acc / len(geoms)


def unfairness(plan: Plan, graph: DualGraph) -> float:
    """Population-weighted share of residents on the losing side.

    In a Democratic-won district the Republican vote share of its
    population counts as unhappy, and vice versa; a tied district counts
    half its population either way.
    """
    geoms = district_geometry(plan, graph)
    return _unfairness_from_geometries(geoms)


def _unfairness_from_geometries(geoms: Sequence[DistrictGeometry]) -> float:
    unhappy = 0.0
    total_pop = 0
    for g in geoms:
        total = g.total_votes
        if total <= 0:
            raise ValueError(f"district {g.label} has no votes")
        loser_share = g.rep_votes / total if g.dem_votes > g.rep_votes else g.dem_votes / total
        unhappy += loser_share * g.population
        total_pop += g.population
    return unhappy / total_pop


def metrics_report(plan: Plan, graph: DualGraph, raw_pd: bool = False) -> MetricsReport:
    """Compute all four metrics in one pass over the plan."""
    geoms = district_geometry(plan, graph)
    return report_from_geometries(geoms, raw_pd=raw_pd)


def report_from_geometries(
    geoms: Sequence[DistrictGeometry], raw_pd: bool = False
) -> MetricsReport:
    scores = _pps_from_geometries(geoms)
    return MetricsReport(
        pd=_pd_from_geometries(geoms, raw=raw_pd),
        pps_per_district=tuple(scores),
        pps_avg=sum(scores) / len(scores),
        pps_min=min(scores),
        bias=_bias_from_geometries(geoms),
        unfairness=_unfairness_from_geometries(geoms),
    )
