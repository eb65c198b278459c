"""Command-line interface.

Subcommands:
  make-grid       synthesize a grid state file
  evaluate        metrics for a graph + assignment
  run-game        play one choose-and-freeze game, write a transcript
  run-ensemble    sample a plain chain ensemble, write a runs CSV
  run-experiment  full batch driver from a JSON config
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agents import parse_agent_spec, StateProfile
from .generation import GenConfig
from .graphs import build_grid_state, load_assignment, load_dual_graph, save_dual_graph
from .harness import (
    GAME_METHOD,
    METRIC_COLUMNS,
    ExperimentConfig,
    run_ensemble_baseline,
    run_experiment,
    write_runs_csv,
)
from .metrics import metrics_report
from .protocol import GameConfig, run_game

_PARTY = {"dem": "democrat", "rep": "republican",
          "democrat": "democrat", "republican": "republican"}


def _add_gen_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=0.05,
                   help="population tolerance as a fraction of the ideal (default 0.05)")
    p.add_argument("--method", choices=["recom", "flip"], default="recom")
    p.add_argument("--thinning", type=int, default=10, help="chain steps between samples")
    p.add_argument("--max-attempts", type=int, default=1000)


def _graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="graph file (or directory for csv format)")
    p.add_argument("--format", choices=["canonical-json", "node-edge-csv"],
                   default="canonical-json")


def cmd_make_grid(args) -> int:
    graph = build_grid_state(args.rows, args.cols, args.pop, args.vote_model, args.seed)
    save_dual_graph(graph, args.out)
    print(f"wrote {args.rows}x{args.cols} grid ({len(graph)} units, "
          f"total pop {graph.total_population}) to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    graph = load_dual_graph(args.graph, args.format)
    plan = load_assignment(args.assignment, graph, allow_discontiguous=args.allow_discontiguous)
    report = metrics_report(plan, graph, raw_pd=args.raw_pd)
    print(",".join(METRIC_COLUMNS))
    print(",".join(f"{v:.12g}" for v in report.as_row()))
    print()
    width = max(len(m) for m in METRIC_COLUMNS)
    for name, value in zip(METRIC_COLUMNS, report.as_row()):
        print(f"  {name:<{width}}  {value:.6g}")
    return 0


def cmd_run_game(args) -> int:
    graph = load_dual_graph(args.graph, args.format)
    profile = StateProfile()
    if args.profile:
        data = json.loads(Path(args.profile).read_text())
        profile = StateProfile(name=data.get("name", ""),
                               background_text=data.get("background_text", ""))
    config = GameConfig(
        num_districts=args.districts,
        candidates_per_round=args.candidates,
        first_mover=_PARTY[args.first_mover],
        gen=GenConfig(epsilon=args.epsilon, method=args.method,
                      chain_thinning=args.thinning, max_attempts=args.max_attempts,
                      seed=args.seed),
        master_seed=args.seed,
        profile=profile,
    )
    dem = parse_agent_spec("democrat", args.dem_agent)
    rep = parse_agent_spec("republican", args.rep_agent)
    transcript = run_game(graph, dem, rep, config)
    transcript.save(args.out)
    print(f"game complete: {config.num_districts} districts in "
          f"{len(transcript.rounds)} rounds, {transcript.budget['candidates_actual']} "
          f"candidate plans; transcript at {args.out}")
    for name, value in zip(METRIC_COLUMNS, transcript.metrics.as_row()):
        print(f"  {name}: {value:.6g}")
    return 0


def cmd_run_ensemble(args) -> int:
    graph = load_dual_graph(args.graph, args.format)
    cfg = GenConfig(epsilon=args.epsilon, method=args.method,
                    chain_thinning=args.thinning, max_attempts=args.max_attempts,
                    seed=args.seed)
    diagnostics: dict = {}
    reports = run_ensemble_baseline(graph, args.districts, args.method, args.budget,
                                    cfg, diagnostics=diagnostics)
    rows = [(args.state, args.method, i) + m.as_row() for i, m in enumerate(reports)]
    write_runs_csv(rows, Path(args.out))
    print(f"wrote {len(reports)} plans to {args.out} (diagnostics: {diagnostics or 'none'})")
    return 0


def cmd_run_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config, seed_override=args.seed)
    report = run_experiment(cfg)
    print(f"experiment {report.state}: {len(report.game_metrics)} {GAME_METHOD} runs, "
          + ", ".join(f"{m}: {len(v)} plans" for m, v in report.baseline_metrics.items()))
    for method, summary in report.summaries.items():
        mean, std = summary["Unfairness"]
        std_text = "n/a" if std is None else f"{std:.6g}"
        print(f"  {method}: Unfairness mean {mean:.6g} std {std_text}")
    if cfg.out_dir is not None:
        print(f"artifacts in {cfg.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="districtgame",
                                     description="Choose-and-freeze redistricting engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-grid", help="synthesize a grid state")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--pop", type=int, default=100, help="population per unit")
    p.add_argument("--vote-model", default="uniform-5050",
                   help="'uniform-5050' or 'clustered(p_core,p_fringe)'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_grid)

    p = sub.add_parser("evaluate", help="metrics for a plan")
    _graph_args(p)
    p.add_argument("--assignment", required=True, help="CSV of unit_id,district")
    p.add_argument("--raw-pd", action="store_true",
                   help="report population deviation in persons instead of fractions")
    p.add_argument("--allow-discontiguous", action="store_true",
                   help="accept non-contiguous enacted plans with a warning")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-game", help="play one game")
    _graph_args(p)
    p.add_argument("--districts", type=int, required=True)
    p.add_argument("--candidates", type=int, required=True, help="candidate maps per round")
    p.add_argument("--first-mover", choices=sorted(_PARTY), default="dem")
    p.add_argument("--dem-agent", default="rule:partisan")
    p.add_argument("--rep-agent", default="rule:partisan")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="transcript JSON path")
    p.add_argument("--profile", help="JSON file with name/background_text for LLM agents")
    _add_gen_args(p)
    p.set_defaults(func=cmd_run_game)

    p = sub.add_parser("run-ensemble", help="plain chain ensemble")
    _graph_args(p)
    p.add_argument("--districts", type=int, required=True)
    p.add_argument("--budget", type=int, required=True, help="number of plans to evaluate")
    p.add_argument("--state", default="state", help="state column value for the CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="runs CSV path")
    _add_gen_args(p)
    p.set_defaults(func=cmd_run_ensemble)

    p = sub.add_parser("run-experiment", help="batch driver")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config's master seed")
    p.set_defaults(func=cmd_run_experiment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean one-liner; stack traces stay in logs
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
