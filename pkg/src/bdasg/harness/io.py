"""Plain-text outputs: metrics CSV, run manifest and problem-data dumps."""

from __future__ import annotations

import csv
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..engine import EngineError, step_size_interval, theta
from .experiment import FIELDS, AggregatedMetrics

CSV_COLUMNS = {
    "consensus_err": "consensus_err",
    "tracker_dispersion": "tracker_disp",
    "mean_opt_err": "opt_err",
    "objective_gap": "obj_gap",
}
CSV_HEADER = ["k"] + [f"{CSV_COLUMNS[f]}_{s}" for f in FIELDS for s in ("mean", "std")]


def _num(v) -> str:
    return format(float(v), ".17g")


def write_csv(metrics: AggregatedMetrics, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for i, k in enumerate(metrics.k):
                row = [str(int(k))]
                for f in FIELDS:
                    row += [_num(metrics.mean[f][i]), _num(metrics.std[f][i])]
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def read_csv(path) -> AggregatedMetrics:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path} does not start with the metrics header")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(CSV_HEADER))
    mean = {f: data[:, 1 + 2 * j] for j, f in enumerate(FIELDS)}
    std = {f: data[:, 2 + 2 * j] for j, f in enumerate(FIELDS)}
    return AggregatedMetrics(data[:, 0].astype(int), mean, std, trials=0)


# -- manifest -----------------------------------------------------------------


def _fmt_vec(x):
    return "[" + ", ".join(_num(v) for v in np.asarray(x).ravel()) + "]"


def theory_summary(config, graph, problem):
    """theta, the admissible step-size interval and the gamma/tau used for it."""
    sigma2 = graph.sigma2
    gamma = config.gamma if config.gamma is not None else 0.5 * (sigma2 + 1.0)
    tau = config.tau if config.tau is not None else 0.5 * (gamma - sigma2)
    out = {"gamma": gamma, "tau": tau}
    try:
        out["theta"] = theta(config.alpha, problem.mu_lambda, problem.L_bar, problem.n)
    except EngineError as exc:
        out["theta"] = f"undefined ({exc})"
    try:
        out["interval"] = step_size_interval(problem.mu_lambda, problem.L_bar, sigma2, tau, gamma, problem.n)
    except EngineError as exc:
        out["interval"] = None
        out["interval_error"] = str(exc)
    return out


def manifest_warnings(config, graph, problem, theory, failures=()):
    warns = list(problem.warnings)
    interval = theory.get("interval")
    if interval is None or not interval.contains(config.alpha):
        warns.append(f"alpha={config.alpha!r} lies outside the certified step-size interval ({interval or 'unavailable'})")
    risk = config.alpha * problem.L_max
    if risk >= 0.5:
        warns.append(f"alpha * max_i L_i = {risk:.3g} >= 0.5: the tracking recursion is likely unstable")
    for trial, it in failures:
        warns.append(f"trial {trial} diverged at iteration {it} and was excluded")
    return warns


def write_manifest(config, problem_digest, baseline, git_like_version=__version__, path="manifest.txt", ctx=None, metrics=None, timestamp=None):
    """Structured ``key: value`` record of everything needed to reproduce a run.

    Only the ``created`` line depends on wall-clock time.
    """
    from .experiment import prepare

    ctx = ctx or prepare(config)
    graph, problem = ctx.graph, ctx.problem
    failures = metrics.failures if metrics is not None else []
    theory = theory_summary(config, graph, problem)
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")

    lines = ["# bdasg run manifest", f"created: {stamp}", f"version: {git_like_version}", f"config_hash: {config.digest()}", ""]
    lines.append("[config]")
    lines += [f"{k} = {v}" for k, v in config.resolved.items()]
    lines.append(f"defaulted: {', '.join(config.defaulted) or '-'}")
    lines += ["", "[seeds]", f"master_seed: {config.master_seed}", f"graph_seed: {config.graph_seed}",
              f"problem_seed: {config.problem.seed}",
              "trial_streams: SeedSequence(master_seed, spawn_key=(0, trial)) -> (noise, x0)"]
    lines += ["", "[problem]", f"kind: {problem.name}", f"n: {problem.n}", f"d: {problem.d}",
              f"lambda: {problem.lam!r}", f"digest: {problem_digest}", f"L_bar: {_num(problem.L_bar)}",
              f"L_max: {_num(problem.L_max)}", f"mu_lambda: {_num(problem.mu_lambda)}"]
    hist = ", ".join(f"{d}:{c}" for d, c in graph.degree_histogram().items())
    lines += ["", "[graph]", f"kind: {config.graph.kind.value}", f"n: {graph.n}", f"edges: {graph.edge_count}",
              f"degree_histogram: {hist}", f"sigma2: {_num(graph.sigma2)}"]
    lines += ["", "[baseline]"]
    if baseline is None:
        lines.append("method: none")
    else:
        lines += [f"method: {baseline.method.value}", f"residual: {_num(baseline.residual)}",
                  f"iterations: {baseline.iterations_used}", f"x_star: {_fmt_vec(baseline.x_star)}"]
    th = theory["theta"]
    interval = theory["interval"]
    lines += ["", "[theory]", f"gamma: {_num(theory['gamma'])}", f"tau: {_num(theory['tau'])}",
              f"theta: {_num(th) if isinstance(th, float) else th}",
              f"interval: {interval if interval is not None else 'unavailable (' + theory['interval_error'] + ')'}",
              f"alpha_in_interval: {'yes' if interval is not None and interval.contains(config.alpha) else 'no'}"]
    noise = config.noise
    lines += ["", "[noise]"]
    if noise.disabled:
        lines.append("status: disabled")
    else:
        r = noise.radius(problem.d)
        lines += ["status: enabled", f"sigma_f: {noise.sigma_f!r}", f"sigma_g: {noise.sigma_g!r}",
                  f"clip_radius: {'inf' if math.isinf(r) else _num(r)}"]
    lines += ["", "[trials]", f"configured: {config.trials}", f"completed: {config.trials - len(failures)}",
              f"failed: {len(failures)}"]
    lines += ["", "[warnings]"]
    lines += [f"- {w}" for w in manifest_warnings(config, graph, problem, theory, failures)] or ["- none"]
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest to {path}: {exc}") from exc


# -- problem dumps ------------------------------------------------------------

DUMP_HEADER = """\
# bdasg problem dump
# Each block starts with a line '# block <name> <rows> <cols>' followed by
# <rows> lines of <cols> whitespace-separated values (row-major, 17 significant digits).
"""


def dump_problem(problem, path) -> None:
    meta = " ".join(f"{k}={v}" for k, v in problem.params.items())
    parts = [DUMP_HEADER, f"# problem: kind={problem.name} {meta} digest={problem.digest()}\n"]
    for name, block in problem.data_blocks():
        block = np.atleast_2d(block)
        parts.append(f"# block {name} {block.shape[0]} {block.shape[1]}\n")
        for row in block:
            parts.append(" ".join(_num(v) for v in row) + "\n")
    Path(path).write_text("".join(parts))


def load_problem_dump(path) -> dict[str, np.ndarray]:
    blocks: dict[str, np.ndarray] = {}
    lines = Path(path).read_text().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.startswith("# block "):
            continue
        _, _, name, rows, cols = line.split()
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[i + r].split()] for r in range(rows)]
        blocks[name] = np.array(data, dtype=float).reshape(rows, cols)
        i += rows
    return blocks
