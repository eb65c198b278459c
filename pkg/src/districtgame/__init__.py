"""Turn-based choose-and-freeze redistricting engine.

Subpackages by concern: :mod:`districtgame.graphs` (dual graphs, plans,
file formats), :mod:`districtgame.metrics` (fairness metrics),
:mod:`districtgame.generation` (seed plans and chain proposals),
:mod:`districtgame.agents` (rule and LLM decision policies),
:mod:`districtgame.protocol` (the game loop and transcripts), and
:mod:`districtgame.harness` (batch experiments).
"""

from .graphs import DualGraph, Edge, Plan, Unit, build_grid_state, load_dual_graph, plan_hash
from .metrics import MetricsReport, metrics_report
from .generation import GenConfig, generate_candidates
from .agents import AgentSpec, StateProfile, parse_agent_spec
from .protocol import GameConfig, Transcript, run_game
from .harness import ExperimentConfig, run_experiment

__all__ = [
    "AgentSpec",
    "DualGraph",
    "Edge",
    "ExperimentConfig",
    "GameConfig",
    "GenConfig",
    "MetricsReport",
    "Plan",
    "StateProfile",
    "Transcript",
    "Unit",
    "build_grid_state",
    "generate_candidates",
    "load_dual_graph",
    "metrics_report",
    "parse_agent_spec",
    "plan_hash",
    "run_experiment",
    "run_game",
]

__version__ = "0.1.0"
