"""Command line entry point.

Exit status: 0 on success, 1 for invalid configuration, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineError, solve_baseline
from .engine import DivergenceError
from .harness.config import ConfigError, load_config
from .harness.experiment import ExperimentError, run_experiment
from .harness.io import dump_problem
from .problems import ProblemError
from .topology import TopologyError, build_graph

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _load(args):
    overrides = {}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    return load_config(args.config, overrides)


def cmd_run(args):
    config = _load(args)
    metrics = run_experiment(config)
    out = config.output_dir
    final = metrics.mean["mean_opt_err"][-1]
    print(f"trials completed: {metrics.trials}/{config.trials}")
    if not np.isnan(final):
        print(f"final mean ||x_bar - x*||: {final:.6e}")
    for name in ("metrics.csv", "manifest.txt", "convergence.svg", "topology.svg"):
        print(f"wrote {out / name}")


def cmd_graph_info(args):
    config = _load(args)
    graph = build_graph(config.graph, config.graph_seed)
    print(f"kind: {config.graph.kind.value}")
    print(f"n: {graph.n}")
    print(f"edges: {graph.edge_count}")
    print("degree histogram:")
    for deg, count in graph.degree_histogram().items():
        print(f"  {deg}: {count}")
    print(f"sigma2: {graph.sigma2:.17g}")


def cmd_baseline(args):
    config = _load(args)
    problem = config.problem.build()
    method = config.resolved_baseline
    if method == "none":
        print("baseline: none configured")
        return
    sol = solve_baseline(problem, method)
    print(f"method: {sol.method.value}")
    print(f"residual: {sol.residual:.3e}")
    print(f"iterations: {sol.iterations_used}")
    print("x_star: " + " ".join(format(v, ".17g") for v in sol.x_star))


def cmd_problem_dump(args):
    config = _load(args)
    problem = config.problem.build()
    path = Path(args.out) if args.out else config.output_dir / "problem.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_problem(problem, path)
    print(f"wrote {path}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are validation errors, not runtime failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="bdasg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a full experiment")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("graph-info", help="print graph statistics")
    p.add_argument("config")
    p.set_defaults(func=cmd_graph_info)

    p = sub.add_parser("baseline", help="print the centralized reference solution")
    p.add_argument("config")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("problem", help="problem data utilities")
    psub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    d = psub.add_parser("dump", help="write the generated matrices to a text file")
    d.add_argument("config")
    d.add_argument("-o", "--out")
    d.add_argument("--output-dir")
    d.set_defaults(func=cmd_problem_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ExperimentError, BaselineError, TopologyError, ProblemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
