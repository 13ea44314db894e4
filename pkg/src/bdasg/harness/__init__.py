from .config import ConfigError, RunConfig, load_config, parse_config
from .experiment import AggregatedMetrics, ExperimentError, aggregate, prepare, run_experiment, run_trials
from .io import CSV_HEADER, dump_problem, load_problem_dump, read_csv, write_csv, write_manifest
from .plotting import render_convergence_plot, render_topology_plot
