"""Repeated-trial experiments: one shared problem, independent noise per trial."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..baselines import CentralizedSolution, solve_baseline
from ..engine import DivergenceError, TrajectoryRecord, run_trajectory
from ..topology import MixingGraph, build_graph
from .config import RunConfig

log = logging.getLogger(__name__)

FIELDS = ("consensus_err", "tracker_dispersion", "mean_opt_err", "objective_gap")


class ExperimentError(RuntimeError):
    pass


@dataclass
class AggregatedMetrics:
    """Per-iteration mean and (population) standard deviation across trials."""

    k: np.ndarray
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    trials: int
    failures: list[tuple[int, int]] = field(default_factory=list)
    config_hash: str = ""
    trajectories: list[np.ndarray] | None = None

    def __len__(self):
        return len(self.k)


@dataclass
class ExperimentContext:
    graph: MixingGraph
    problem: object
    baseline: CentralizedSolution | None


def records_to_array(records: list[TrajectoryRecord]) -> np.ndarray:
    """``(K+1, 4)`` array in :data:`FIELDS` order; missing metrics become nan."""
    out = np.full((len(records), len(FIELDS)), np.nan)
    for row, rec in zip(out, records):
        for j, name in enumerate(FIELDS):
            v = getattr(rec, name)
            if v is not None:
                row[j] = v
    return out


def aggregate(trajectories: list[np.ndarray], failures=(), config_hash="") -> AggregatedMetrics:
    if not trajectories:
        raise ExperimentError("no trial completed")
    stack = np.stack(trajectories)
    mean = stack.mean(axis=0)
    std = stack.std(axis=0)
    return AggregatedMetrics(
        k=np.arange(stack.shape[1]),
        mean={name: mean[:, j] for j, name in enumerate(FIELDS)},
        std={name: std[:, j] for j, name in enumerate(FIELDS)},
        trials=len(trajectories),
        failures=list(failures),
        config_hash=config_hash,
    )


def prepare(config: RunConfig) -> ExperimentContext:
    """Build the graph, the shared problem and its baseline."""
    graph = build_graph(config.graph, config.graph_seed)
    problem = config.problem.build()
    method = config.resolved_baseline
    baseline = None if method == "none" else solve_baseline(problem, method)
    return ExperimentContext(graph, problem, baseline)


def _trial(args):
    problem, graph, config, trial_index, x_star = args
    try:
        return records_to_array(run_trajectory(problem, graph, config, trial_index, x_star)), None
    except DivergenceError as exc:
        return None, exc.iteration


def run_trials(config: RunConfig, ctx: ExperimentContext, keep_trajectories=False) -> AggregatedMetrics:
    x_star = None if ctx.baseline is None else ctx.baseline.x_star
    jobs = [(ctx.problem, ctx.graph, config, t, x_star) for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(job) for job in jobs]

    trajectories, failures = [], []
    for t, (traj, failed_at) in enumerate(results):
        if traj is None:
            log.warning("trial %d diverged at iteration %d; excluded", t, failed_at)
            failures.append((t, failed_at))
        else:
            trajectories.append(traj)
    if not trajectories:
        raise ExperimentError(f"all {config.trials} trials diverged (first at iteration {failures[0][1]})")
    metrics = aggregate(trajectories, failures, config.digest())
    if keep_trajectories:
        metrics.trajectories = trajectories
    return metrics


def run_experiment(config: RunConfig, write=True, keep_trajectories=False) -> AggregatedMetrics:
    """Run every trial, aggregate, and (by default) write CSV, manifest and figures."""
    ctx = prepare(config)
    metrics = run_trials(config, ctx, keep_trajectories)
    if write:
        from .io import write_csv, write_manifest
        from .plotting import render_convergence_plot, render_topology_plot

        out = config.output_dir
        out.mkdir(parents=True, exist_ok=True)
        write_csv(metrics, out / "metrics.csv")
        write_manifest(config, ctx.problem.digest(), ctx.baseline, path=out / "manifest.txt", ctx=ctx, metrics=metrics)
        render_convergence_plot(metrics, out / "convergence.svg")
        render_topology_plot(ctx.graph, out / "topology.svg", title=f"{config.graph.kind.value}, n={ctx.graph.n}")
    return metrics
