"""Run configuration: a flat ``key = value`` file with dotted section prefixes.

Example::

    # sensor network, section IV setup
    graph.kind = random
    graph.n = 150
    problem.kind = sensor
    problem.d = 30
    problem.m = 1
    problem.lambda = 0.01
    alpha = 0.01
    noise.sigma = 0.01
    trials = 50

Blank lines and ``#`` comments are ignored.  Every key is validated and
typed; unknown or repeated keys are errors that name the key and line.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine import Given, UniformBox, Zeros
from ..problems import NoiseModel, ProblemError, make_regression_problem, make_sensor_problem
from ..topology import GraphKind, GraphSpec, TopologyError


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where += f"key '{key}'"
        if line is not None:
            where += f"{' ' if where else ''}(line {line})"
        super().__init__(f"{where}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    n: int
    d: int
    m: int
    lam: float
    seed: int
    deficient_agent: int = 0
    normalize_rows: bool = False

    def build(self):
        if self.kind == "sensor":
            return make_sensor_problem(self.n, self.d, self.m, self.lam, self.seed, self.normalize_rows)
        return make_regression_problem(self.n, self.d, self.m, self.lam, self.seed, self.deficient_agent)


@dataclass(frozen=True)
class RunConfig:
    graph: GraphSpec
    problem: ProblemSpec
    alpha: float
    noise: NoiseModel
    iterations: int = 3000
    trials: int = 1
    master_seed: int = 0
    x0_policy: object = Zeros()
    baseline: str = "auto"
    output_dir: Path = Path("out")
    workers: int = 1
    graph_seed: int = 0
    gamma: float | None = None
    tau: float | None = None
    resolved: dict = field(default_factory=dict, compare=False)
    defaulted: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.graph.n != self.problem.n:
            raise ConfigError(f"graph has {self.graph.n} nodes but the problem has {self.problem.n} agents", "problem.n")
        if self.trials < 1:
            raise ConfigError("must be >= 1", "trials")
        if self.iterations < 1:
            raise ConfigError("must be >= 1", "iterations")
        if not self.alpha > 0:
            raise ConfigError("must be > 0", "alpha")

    @property
    def resolved_baseline(self) -> str:
        if self.baseline != "auto":
            return self.baseline
        return "ridge" if self.problem.kind == "sensor" else "ista"

    def digest(self) -> str:
        text = "\n".join(f"{k} = {v}" for k, v in sorted(self.resolved.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


# -- value parsers ------------------------------------------------------------


def _int(text):
    return int(text)


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text):
        low = text.lower()
        if low not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return low

    return parse


def _auto_float(text):
    return None if text.lower() == "auto" else _float(text)


def _edges(text):
    edges = []
    for tok in text.replace(",", " ").split():
        a, sep, b = tok.partition("-")
        if not sep:
            raise ValueError(f"edge {tok!r} is not of the form i-j")
        edges.append((int(a), int(b)))
    return tuple(edges)


def _x0(text):
    head, _, arg = text.partition(":")
    head = head.strip().lower()
    if head == "zeros" and not arg:
        return "zeros", None
    if head == "uniform":
        r = _float(arg)
        if not r > 0:
            raise ValueError("uniform box radius must be > 0")
        return "uniform", r
    if head == "file" and arg:
        return "file", arg.strip()
    raise ValueError(f"expected zeros, uniform:<radius> or file:<path>, got {text!r}")


SCHEMA = {
    "alpha": _float,
    "iterations": _int,
    "trials": _int,
    "master_seed": _int,
    "x0": _x0,
    "baseline": _choice("auto", "pinv", "ridge", "ista", "none"),
    "output_dir": str,
    "workers": _int,
    "graph.kind": _choice(*(k.value for k in GraphKind)),
    "graph.n": _int,
    "graph.edge_probability": _float,
    "graph.edges": _edges,
    "problem.kind": _choice("sensor", "regression"),
    "problem.n": _int,
    "problem.d": _int,
    "problem.m": _int,
    "problem.lambda": _float,
    "problem.seed": _int,
    "problem.deficient_agent": _int,
    "problem.normalize_rows": _bool,
    "noise.sigma": _float,
    "noise.sigma_f": _float,
    "noise.sigma_g": _float,
    "noise.clip_radius": str,
    "theory.gamma": _auto_float,
    "theory.tau": _auto_float,
}

REQUIRED = ("alpha", "graph.kind", "graph.n", "problem.kind", "problem.d", "problem.m", "problem.lambda")

DEFAULTS = {
    "iterations": "3000",
    "trials": "1",
    "master_seed": "0",
    "x0": "zeros",
    "baseline": "auto",
    "output_dir": "out",
    "workers": "1",
    "noise.sigma": "0",
    "noise.clip_radius": "auto",
    "problem.deficient_agent": "0",
    "problem.normalize_rows": "false",
    "theory.gamma": "auto",
    "theory.tau": "auto",
}


def parse_pairs(text: str) -> dict[str, tuple[str, int]]:
    """Split config text into ``{key: (raw value, line number)}``."""
    pairs: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        if key not in SCHEMA:
            raise ConfigError("unknown key", key, lineno)
        if key in pairs:
            raise ConfigError(f"repeated (first set on line {pairs[key][1]})", key, lineno)
        if value == "":
            raise ConfigError("missing value", key, lineno)
        pairs[key] = (value, lineno)
    return pairs


def derive_seed(master_seed: int, stream: int) -> int:
    """Integer seed for a named harness stream (1 = graph, 2 = problem)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(1, stream))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent, overrides=overrides)


def parse_config(text: str, base_dir=Path("."), overrides: dict | None = None) -> RunConfig:
    pairs = parse_pairs(text)
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError("unknown key", key)
        pairs[key] = (str(value), None)
    for key in REQUIRED:
        if key not in pairs:
            raise ConfigError("required key is missing", key)

    values: dict[str, object] = {}
    lines: dict[str, int | None] = {}
    defaulted = []
    for key, parse in SCHEMA.items():
        if key in pairs:
            raw, lineno = pairs[key]
        elif key in DEFAULTS:
            raw, lineno = DEFAULTS[key], None
            defaulted.append(key)
        else:
            continue
        try:
            values[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(str(exc), key, lineno) from None
        lines[key] = lineno

    def fail(message, key):
        raise ConfigError(message, key, lines.get(key))

    for key in ("iterations", "trials", "workers"):
        if values[key] < 1:
            fail("must be >= 1", key)
    if not values["alpha"] > 0:
        fail("must be > 0", "alpha")

    n = values["graph.n"]
    if values.setdefault("problem.n", n) != n:
        fail(f"must equal graph.n ({n})", "problem.n")
    if "problem.n" not in pairs:
        defaulted.append("problem.n")

    kind = values["graph.kind"]
    if "graph.edge_probability" in values and kind != "random":
        fail("only applies to graph.kind = random", "graph.edge_probability")
    if "graph.edges" in values and kind != "edges":
        fail("only applies to graph.kind = edges", "graph.edges")
    if kind == "edges" and "graph.edges" not in values:
        raise ConfigError("required when graph.kind = edges", "graph.edges")
    try:
        graph = GraphSpec(kind, n, values.get("graph.edge_probability"), values.get("graph.edges", ()))
    except TopologyError as exc:
        key = "graph.edges" if "edge" in str(exc) else "graph.n"
        fail(str(exc), key)

    master_seed = values["master_seed"]
    if "problem.seed" not in values:
        values["problem.seed"] = derive_seed(master_seed, 2)
        defaulted.append("problem.seed")
    pkind = values["problem.kind"]
    for key in ("problem.d", "problem.m"):
        if values[key] < 1:
            fail("must be >= 1", key)
    if not values["problem.lambda"] > 0:
        fail("must be > 0", "problem.lambda")
    if pkind == "regression":
        if not 0 <= values["problem.deficient_agent"] < n:
            fail(f"must lie in 0..{n - 1}", "problem.deficient_agent")
        if values["problem.d"] < 2:
            fail("regression needs d >= 2", "problem.d")
        if values["problem.m"] < values["problem.d"] - 1:
            fail("regression needs m >= d - 1 for a rank d-1 agent", "problem.m")
    problem = ProblemSpec(
        pkind,
        n,
        values["problem.d"],
        values["problem.m"],
        values["problem.lambda"],
        values["problem.seed"],
        values["problem.deficient_agent"],
        values["problem.normalize_rows"],
    )

    sigma = values["noise.sigma"]
    sigma_f = values.get("noise.sigma_f", sigma)
    sigma_g = values.get("noise.sigma_g", sigma)
    clip_raw = values["noise.clip_radius"].lower()
    try:
        clip = None if clip_raw == "auto" else (math.inf if clip_raw in ("inf", "none") else float(clip_raw))
        noise = NoiseModel(sigma_f, sigma_g, clip)
    except (ValueError, ProblemError) as exc:
        bad = "noise.clip_radius" if "clip" in str(exc) or "float" in str(exc) else "noise.sigma"
        fail(str(exc), bad)

    x0_kind, x0_arg = values["x0"]
    if x0_kind == "zeros":
        x0 = Zeros()
    elif x0_kind == "uniform":
        x0 = UniformBox(x0_arg)
    else:
        x0_path = Path(base_dir) / x0_arg
        try:
            X0 = np.atleast_2d(np.loadtxt(x0_path, dtype=float))
        except (OSError, ValueError) as exc:
            fail(f"cannot load initial matrix {x0_path}: {exc}", "x0")
        if X0.shape != (n, problem.d):
            fail(f"initial matrix has shape {X0.shape}, expected {(n, problem.d)}", "x0")
        x0 = Given(X0)

    baseline = values["baseline"]
    if baseline in ("pinv", "ridge") and pkind != "sensor":
        fail("pinv and ridge baselines apply to sensor problems", "baseline")
    if baseline == "ista" and pkind != "regression":
        fail("the ista baseline applies to regression problems", "baseline")

    gamma, tau = values["theory.gamma"], values["theory.tau"]
    if gamma is not None and not 0 < gamma < 1:
        fail("must lie in (0, 1)", "theory.gamma")
    if tau is not None and not tau > 0:
        fail("must be > 0", "theory.tau")

    resolved = {}
    for key in SCHEMA:
        if key in values:
            v = values[key]
            if key == "x0":
                v = x0.describe() if x0_kind != "file" else f"file:{x0_arg}"
            elif key == "graph.edges":
                v = " ".join(f"{a}-{b}" for a, b in v)
            resolved[key] = "auto" if v is None else v
    if kind == "random":
        resolved["graph.edge_probability"] = graph.resolved_edge_probability
        if "graph.edge_probability" not in values:
            defaulted.append("graph.edge_probability")
    resolved["graph.seed"] = derive_seed(master_seed, 1)

    return RunConfig(
        graph=graph,
        problem=problem,
        alpha=values["alpha"],
        noise=noise,
        iterations=values["iterations"],
        trials=values["trials"],
        master_seed=master_seed,
        x0_policy=x0,
        baseline=baseline,
        output_dir=Path(values["output_dir"]),
        workers=values["workers"],
        graph_seed=resolved["graph.seed"],
        gamma=gamma,
        tau=tau,
        resolved=resolved,
        defaulted=tuple(sorted(set(defaulted))),
    )
