"""Batch experiment driver.

Runs repeated games, matched-budget ensemble baselines, and an optional
enacted plan over one state graph; summarizes every method with mean and
sample standard deviation; and exports ``runs.csv``, ``summary.csv``, a
readable ``summary.md``, per-game transcripts, and a diagnostics ledger.

Determinism: every run and baseline chain owns a random stream derived
from the experiment master seed, so a re-execution writes byte-identical
artifacts. Runs may execute in parallel worker processes without changing
any output.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .agents import StateProfile, parse_agent_spec
from .generation import GenConfig, flip_step, recom_step, seed_plan
from .graphs import DualGraph, load_assignment, load_dual_graph
from .metrics import MetricsReport, metrics_report
from .protocol import GameConfig, Transcript, run_game
from .streams import derive_rng, derive_seed

logger = logging.getLogger(__name__)

GAME_METHOD = "choose-freeze"
METRIC_COLUMNS = ("PD", "PPS_avg", "PPS_min", "Bias", "Unfairness")
RUNS_HEADER = ("state", "method", "run") + METRIC_COLUMNS

DEFAULT_SCALING = {"PD": 1e-3, "PPS_avg": 1e-2, "PPS_min": 1e-2,
                   "Bias": "auto", "Unfairness": 1e-1}


@dataclass(frozen=True)
class BaselineSpec:
    method: str  # "recom" | "flip"
    budget: int


@dataclass
class ExperimentConfig:
    state: str
    districts: int
    runs: int
    candidates_per_round: int
    first_mover: str = "democrat"
    dem_agent: str = "rule:partisan"
    rep_agent: str = "rule:partisan"
    epsilon: float = 0.05
    method: str = "recom"
    chain_thinning: int = 10
    max_attempts: int = 1000
    master_seed: int = 0
    baselines: list[BaselineSpec] = field(default_factory=list)
    out_dir: Optional[Path] = None
    graph: Optional[DualGraph] = None
    graph_path: Optional[str] = None
    graph_format: str = "canonical-json"
    enacted_assignment: Optional[str] = None
    scaling: dict = field(default_factory=lambda: dict(DEFAULT_SCALING))
    workers: int = 1
    profile: StateProfile = field(default_factory=StateProfile)
    max_redraws: int = 10

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.graph is None and self.graph_path is None:
            raise ValueError("either graph or graph_path is required")
        self.scaling = {**DEFAULT_SCALING, **(self.scaling or {})}

    def default_baseline_budget(self) -> int:
        # Matched budget: same total number of plans the games consume
        # nominally (c per round, one round per district, R repeats).
        return self.candidates_per_round * self.districts * self.runs

    def gen_config(self, seed: int) -> GenConfig:
        return GenConfig(epsilon=self.epsilon, method=self.method,
                         chain_thinning=self.chain_thinning,
                         max_attempts=self.max_attempts, seed=seed)

    def game_config(self, run_index: int) -> GameConfig:
        seed = derive_seed(self.master_seed, "run", run_index)
        return GameConfig(
            num_districts=self.districts,
            candidates_per_round=self.candidates_per_round,
            first_mover=self.first_mover,
            gen=self.gen_config(seed),
            master_seed=seed,
            profile=self.profile,
            max_redraws=self.max_redraws,
        )

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path = Path("."),
                  seed_override: Optional[int] = None) -> "ExperimentConfig":
        data = dict(data)
        baselines = []
        for b in data.get("baselines", []):
            budget = b.get("budget")
            if budget is None:
                budget = (data["candidates_per_round"] * data["districts"] * data["runs"])
            baselines.append(BaselineSpec(method=b["method"], budget=int(budget)))
        profile = StateProfile(name=data.get("profile_name", data.get("state", "")),
                               background_text=data.get("profile_background", ""))
        graph_path = data.get("graph")
        if graph_path is not None and not Path(graph_path).is_absolute():
            graph_path = str(base_dir / graph_path)
        enacted = data.get("enacted_assignment")
        if enacted and not Path(enacted).is_absolute():
            enacted = str(base_dir / enacted)
        out_dir = data.get("out_dir")
        if out_dir is not None and not Path(out_dir).is_absolute():
            out_dir = base_dir / out_dir
        return cls(
            state=data["state"],
            districts=int(data["districts"]),
            runs=int(data["runs"]),
            candidates_per_round=int(data["candidates_per_round"]),
            first_mover=data.get("first_mover", "democrat"),
            dem_agent=data.get("dem_agent", "rule:partisan"),
            rep_agent=data.get("rep_agent", "rule:partisan"),
            epsilon=float(data.get("epsilon", 0.05)),
            method=data.get("method", "recom"),
            chain_thinning=int(data.get("chain_thinning", 10)),
            max_attempts=int(data.get("max_attempts", 1000)),
            master_seed=int(seed_override if seed_override is not None
                            else data.get("master_seed", 0)),
            baselines=baselines,
            out_dir=Path(out_dir) if out_dir is not None else None,
            graph_path=graph_path,
            graph_format=data.get("graph_format", "canonical-json"),
            enacted_assignment=enacted,
            scaling={**DEFAULT_SCALING, **data.get("scaling", {})},
            workers=int(data.get("workers", 1)),
            profile=profile,
            max_redraws=int(data.get("max_redraws", 10)),
        )

    @classmethod
    def from_json(cls, path: str | Path, seed_override: Optional[int] = None) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent,
                             seed_override=seed_override)


@dataclass
class ExperimentReport:
    state: str
    game_metrics: list[MetricsReport]
    baseline_metrics: dict[str, list[MetricsReport]]
    enacted_metrics: Optional[MetricsReport]
    summaries: dict[str, dict[str, tuple[float, Optional[float]]]]
    budget: dict
    transcripts: list[Transcript]
    scaling: dict


def run_ensemble_baseline(
    graph: DualGraph,
    n_districts: int,
    method: str,
    budget: int,
    cfg: GenConfig,
    rng=None,
    diagnostics: Optional[dict] = None,
) -> list[MetricsReport]:
    """Evaluate ``budget`` thinned chain states of a full-state chain.

    A seed plan starts the chain; every ``cfg.chain_thinning`` steps the
    current state is evaluated, until exactly ``budget`` plans were seen.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if method not in ("recom", "flip"):
        raise ValueError(f"unknown baseline method {method!r}")
    rng = rng if rng is not None else derive_rng(cfg.seed, "ensemble", method)
    cfg = replace(cfg, method=method)
    ideal = graph.total_population / n_districts
    stats: dict = {}
    plan = seed_plan(graph.unit_ids, n_districts, graph, cfg, ideal, rng=rng)
    step = recom_step if method == "recom" else flip_step
    out: list[MetricsReport] = []
    for _ in range(budget):
        for _ in range(cfg.chain_thinning):
            plan = step(plan, graph, cfg, ideal, rng, stats)
        out.append(metrics_report(plan, graph))
    if diagnostics is not None:
        diagnostics.update(stats)
    return out


def summarize(samples: list[MetricsReport]) -> dict[str, tuple[float, Optional[float]]]:
    """Per-metric (mean, sample std); std is None with fewer than 2 samples."""
    if not samples:
        raise ValueError("summarize needs at least one sample")
    out: dict[str, tuple[float, Optional[float]]] = {}
    columns = {name: [s.as_row()[i] for s in samples] for i, name in enumerate(METRIC_COLUMNS)}
    for name, values in columns.items():
        mean = statistics.fmean(values)
        std = statistics.stdev(values) if len(values) >= 2 else None
        out[name] = (mean, std)
    return out


def _run_one_game(args) -> Transcript:
    graph, dem_spec, rep_spec, game_cfg = args
    dem = parse_agent_spec("democrat", dem_spec)
    rep = parse_agent_spec("republican", rep_spec)
    return run_game(graph, dem, rep, game_cfg)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run R games plus baselines, summarize, and export artifacts.

    On a failed run, everything collected so far is flushed next to a
    ``failure.json`` marker before the error propagates.
    """
    graph = cfg.graph if cfg.graph is not None else load_dual_graph(cfg.graph_path, cfg.graph_format)
    out_dir = Path(cfg.out_dir) if cfg.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    transcripts: list[Transcript] = []
    tasks = [(graph, cfg.dem_agent, cfg.rep_agent, cfg.game_config(i)) for i in range(cfg.runs)]
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                transcripts = list(pool.map(_run_one_game, tasks))
        else:
            for task in tasks:
                transcripts.append(_run_one_game(task))
    except Exception as exc:
        if out_dir is not None:
            _flush_failure(cfg, graph, transcripts, out_dir, exc)
        raise

    game_metrics = [t.metrics for t in transcripts]

    baseline_metrics: dict[str, list[MetricsReport]] = {}
    baseline_diag: dict[str, dict] = {}
    for spec in cfg.baselines:
        rng = derive_rng(cfg.master_seed, "baseline", spec.method)
        diag: dict = {}
        baseline_metrics[spec.method] = run_ensemble_baseline(
            graph, cfg.districts, spec.method, spec.budget,
            cfg.gen_config(cfg.master_seed), rng=rng, diagnostics=diag,
        )
        baseline_diag[spec.method] = diag

    enacted = None
    if cfg.enacted_assignment:
        plan = load_assignment(cfg.enacted_assignment, graph, allow_discontiguous=True)
        enacted = metrics_report(plan, graph)

    summaries = {GAME_METHOD: summarize(game_metrics)}
    for method, ms in baseline_metrics.items():
        summaries[method] = summarize(ms)
    if enacted is not None:
        summaries["enacted"] = summarize([enacted])

    budget = {
        "runs": cfg.runs,
        "candidates_per_run_nominal": cfg.candidates_per_round * cfg.districts,
        "game_candidates_actual": sum(t.budget["candidates_actual"] for t in transcripts),
        "game_candidates_expected": cfg.runs * cfg.candidates_per_round * (cfg.districts - 1),
        "baseline_plans": {m: len(ms) for m, ms in baseline_metrics.items()},
        "baseline_budgets": {b.method: b.budget for b in cfg.baselines},
    }

    report = ExperimentReport(
        state=cfg.state,
        game_metrics=game_metrics,
        baseline_metrics=baseline_metrics,
        enacted_metrics=enacted,
        summaries=summaries,
        budget=budget,
        transcripts=transcripts,
        scaling=cfg.scaling,
    )
    if out_dir is not None:
        export(report, out_dir, diagnostics_extra=baseline_diag)
    return report


def _flush_failure(cfg, graph, transcripts, out_dir: Path, exc: Exception) -> None:
    rows = _runs_rows(cfg.state, [t.metrics for t in transcripts], {}, None)
    write_runs_csv(rows, out_dir / "runs.partial.csv")
    (out_dir / "failure.json").write_text(json.dumps({
        "failed": True,
        "completed_runs": len(transcripts),
        "error": f"{type(exc).__name__}: {exc}",
    }, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _runs_rows(state, game_metrics, baseline_metrics, enacted) -> list[tuple]:
    rows = []
    for i, m in enumerate(game_metrics):
        rows.append((state, GAME_METHOD, i) + m.as_row())
    for method in sorted(baseline_metrics):
        for i, m in enumerate(baseline_metrics[method]):
            rows.append((state, method, i) + m.as_row())
    if enacted is not None:
        rows.append((state, "enacted", 0) + enacted.as_row())
    return rows


def write_runs_csv(rows, path: Path) -> None:
    """Write rows of (state, method, run, *metrics) under the runs.csv schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNS_HEADER)
        for row in rows:
            writer.writerow([row[0], row[1], row[2]] + [_fmt(v) for v in row[3:]])


def _bias_scale(summaries) -> float:
    biggest = max((abs(s["Bias"][0]) for s in summaries.values()), default=0.0)
    return 1e-2 if biggest >= 1e-2 else 1e-3


def resolve_scaling(scaling: dict, summaries: dict) -> dict[str, float]:
    out = {}
    for name in METRIC_COLUMNS:
        value = scaling.get(name, 1.0)
        out[name] = _bias_scale(summaries) if value == "auto" else float(value)
    return out


def _scale_label(scale: float) -> str:
    return f"1e{round(math.log10(scale))}" if scale != 1.0 else "1"


def export(report: ExperimentReport, out_dir: str | Path,
           diagnostics_extra: Optional[dict] = None) -> dict[str, Path]:
    """Write runs.csv, summary.csv, summary.md, transcripts, diagnostics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    rows = _runs_rows(report.state, report.game_metrics, report.baseline_metrics,
                      report.enacted_metrics)
    paths["runs"] = out_dir / "runs.csv"
    write_runs_csv(rows, paths["runs"])

    paths["summary_csv"] = out_dir / "summary.csv"
    with open(paths["summary_csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "method", "metric", "mean", "std", "n"])
        for method in report.summaries:
            if method == GAME_METHOD:
                n = len(report.game_metrics)
            elif method == "enacted":
                n = 1
            else:
                n = len(report.baseline_metrics[method])
            for metric, (mean, std) in report.summaries[method].items():
                writer.writerow([report.state, method, metric, _fmt(mean),
                                 "" if std is None else _fmt(std), n])

    scales = resolve_scaling(report.scaling, report.summaries)
    methods = list(report.summaries)
    lines = [f"# {report.state}", "", "| Metric | " + " | ".join(methods) + " |",
             "| --- | " + " | ".join("---" for _ in methods) + " |"]
    for metric in METRIC_COLUMNS:
        scale = scales[metric]
        cells = []
        for method in methods:
            mean, std = report.summaries[method][metric]
            cell = f"{mean / scale:.4g}"
            cell += " ± n/a" if std is None else f" ± {std / scale:.4g}"
            cells.append(cell)
        lines.append(f"| {metric} ({_scale_label(scale)}) | " + " | ".join(cells) + " |")
    paths["summary_md"] = out_dir / "summary.md"
    paths["summary_md"].write_text("\n".join(lines) + "\n")

    tdir = out_dir / "transcripts"
    tdir.mkdir(exist_ok=True)
    for i, t in enumerate(report.transcripts):
        t.save(tdir / f"run_{i:03d}.json")
    paths["transcripts"] = tdir

    diagnostics = {
        "budget": report.budget,
        "game": {
            "redraws": sum(t.diagnostics.get("redraws", 0) for t in report.transcripts),
            "fallbacks": sum(t.diagnostics.get("fallbacks", 0) for t in report.transcripts),
        },
        "baselines": diagnostics_extra or {},
    }
    paths["diagnostics"] = out_dir / "diagnostics.json"
    paths["diagnostics"].write_text(json.dumps(diagnostics, indent=1, sort_keys=True) + "\n")
    return paths
