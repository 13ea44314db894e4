"""Synchronous BDASG iteration and the theory-side calculators.

The update runs in stacked matrix form::

    X(k+1) = W X(k) - alpha Y(k)
    Y(k+1) = W Y(k) + H(X(k+1)) - H(X(k))

where row ``i`` of ``H(X)`` is agent ``i``'s noisy aggregated gradient.  The
``H(X(k))`` subtracted in the tracker update is the cached sample from the
previous step, never a fresh draw, so ``1^T Y(k) = 1^T H(X(k))`` holds for
every ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .problems import BilevelProblem, NoiseModel, aggregated_grad
from .topology import MixingGraph


class EngineError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Non-finite iterate.  ``records`` holds the trajectory up to the failure."""

    def __init__(self, iteration: int, records=None):
        super().__init__(f"non-finite state at iteration {iteration}")
        self.iteration = iteration
        self.records = list(records or [])


# -- initial-state policies ---------------------------------------------------


@dataclass(frozen=True)
class Zeros:
    def matrix(self, n, d, rng):
        return np.zeros((n, d))

    def describe(self):
        return "zeros"


@dataclass(frozen=True)
class UniformBox:
    radius: float

    def matrix(self, n, d, rng):
        return rng.uniform(-self.radius, self.radius, size=(n, d))

    def describe(self):
        return f"uniform:{self.radius!r}"


@dataclass(frozen=True, eq=False)
class Given:
    X0: np.ndarray

    def matrix(self, n, d, rng):
        X0 = np.array(self.X0, dtype=float)
        if X0.shape != (n, d):
            raise EngineError(f"initial matrix has shape {X0.shape}, expected {(n, d)}")
        return X0

    def describe(self):
        return f"given{np.shape(self.X0)}"


# -- state and records ----------------------------------------------------------


@dataclass
class AgentNetworkState:
    k: int
    X: np.ndarray
    Y: np.ndarray
    H_prev: np.ndarray


@dataclass(frozen=True)
class TrajectoryRecord:
    k: int
    consensus_err: float
    tracker_dispersion: float
    mean_opt_err: float | None = None
    objective_gap: float | None = None


@dataclass(frozen=True)
class StepSizeInterval:
    lower: float
    upper: float
    empty: bool

    def contains(self, alpha: float) -> bool:
        return not self.empty and self.lower <= alpha <= self.upper

    def __str__(self):
        if self.empty:
            return "empty"
        return f"[{self.lower!r}, {self.upper!r}]"


def stochastic_gradients(problem: BilevelProblem, X, noise: NoiseModel, rng) -> np.ndarray:
    """Stacked ``h_i(x_i)``: exact aggregated gradients plus one noise draw per agent."""
    return problem.grad_B(X) + noise.draw(rng, X.shape, problem.lam)


def _check_dims(problem, graph):
    if problem.n != graph.n:
        raise EngineError(f"problem has {problem.n} agents but the graph has {graph.n} nodes")


def bdasg_init(problem, graph, noise, x0_policy=Zeros(), rng=None, x0_rng=None) -> AgentNetworkState:
    _check_dims(problem, graph)
    rng = np.random.default_rng() if rng is None else rng
    X = x0_policy.matrix(problem.n, problem.d, rng if x0_rng is None else x0_rng)
    H = stochastic_gradients(problem, X, noise, rng)
    return AgentNetworkState(0, X, H.copy(), H)


def _per_agent_step(state, problem, graph, alpha, xi):
    # message-passing form of the same update; only used to cross-check the matrix path
    W = graph.weights
    n = graph.n
    X = np.empty_like(state.X)
    for i in range(n):
        acc = W[i, i] * state.X[i]
        for j in graph.neighbors(i):
            acc = acc + W[i, j] * state.X[j]
        X[i] = acc - alpha * state.Y[i]
    H = np.stack([aggregated_grad(problem, i, X[i]) for i in range(n)]) + xi
    Y = np.empty_like(state.Y)
    for i in range(n):
        acc = W[i, i] * state.Y[i]
        for j in graph.neighbors(i):
            acc = acc + W[i, j] * state.Y[j]
        Y[i] = acc + H[i] - state.H_prev[i]
    return X, Y, H


def bdasg_step(state, problem, graph, alpha, noise, rng, per_agent=False) -> AgentNetworkState:
    # alpha = 0 is allowed and reduces to pure averaging
    if not alpha >= 0:
        raise EngineError(f"step size must be >= 0, got {alpha}")
    # overflow is reported below as a DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        if per_agent:
            xi = noise.draw(rng, state.X.shape, problem.lam)
            X, Y, H = _per_agent_step(state, problem, graph, alpha, xi)
        else:
            W = graph.weights
            X = W @ state.X - alpha * state.Y
            H = stochastic_gradients(problem, X, noise, rng)
            Y = W @ state.Y + H - state.H_prev
    k = state.k + 1
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise DivergenceError(k)
    return AgentNetworkState(k, X, Y, H)


def _fro(A) -> float:
    a = A.ravel()
    return math.sqrt(float(a @ a))


def record(state: AgentNetworkState, problem=None, x_star=None, b_star=None) -> TrajectoryRecord:
    # states close to divergence may overflow the metrics; the next step reports it
    with np.errstate(over="ignore", invalid="ignore"):
        n = state.X.shape[0]
        x_bar = state.X.sum(axis=0) / n
        y_bar = state.Y.sum(axis=0) / n
        opt = gap = None
        if x_star is not None:
            opt = _fro(x_bar - x_star)
            if problem is not None:
                if b_star is None:
                    b_star = problem.objective(x_star)
                gap = problem.objective(x_bar) - b_star
        return TrajectoryRecord(
            state.k,
            _fro(state.X - x_bar),
            _fro(state.Y - y_bar),
            opt,
            gap,
        )


def iter_trajectory(
    problem,
    graph,
    alpha,
    noise,
    iterations,
    x0_policy=Zeros(),
    rng=None,
    x_star=None,
    x0_rng=None,
    per_agent=False,
) -> Iterator[TrajectoryRecord]:
    """Yield one record per iteration, ``k = 0 .. iterations``."""
    rng = np.random.default_rng() if rng is None else rng
    b_star = problem.objective(x_star) if x_star is not None else None
    state = bdasg_init(problem, graph, noise, x0_policy, rng, x0_rng)
    yield record(state, problem, x_star, b_star)
    for _ in range(iterations):
        state = bdasg_step(state, problem, graph, alpha, noise, rng, per_agent=per_agent)
        yield record(state, problem, x_star, b_star)


def trial_streams(master_seed: int, trial_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (noise, initial-state) generators owned by one trial."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(0, trial_index))
    noise_ss, x0_ss = ss.spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(x0_ss)


def run_trajectory(problem, graph, config, trial_index, x_star=None) -> list[TrajectoryRecord]:
    """Run one trial as configured; ``config`` supplies alpha, noise, iterations, x0_policy, master_seed."""
    if config.iterations < 0:
        raise EngineError("iterations must be >= 0")
    rng, x0_rng = trial_streams(config.master_seed, trial_index)
    records: list[TrajectoryRecord] = []
    try:
        for rec in iter_trajectory(
            problem, graph, config.alpha, config.noise, config.iterations, config.x0_policy, rng, x_star, x0_rng
        ):
            records.append(rec)
    except DivergenceError as exc:
        raise DivergenceError(exc.iteration, records) from None
    return records


# -- theory calculators -----------------------------------------------------------


def theta(alpha, mu_lambda, L_bar, n) -> float:
    """Contraction factor ``sqrt(1 - (alpha mu^2 / n)(2/L_bar - alpha/n))`` of the averaged iterate."""
    if not alpha / n > 0:
        raise EngineError("theta requires alpha/n > 0")
    if not alpha / n < 2.0 / L_bar:
        raise EngineError(f"theta requires alpha/n < 2/L_bar (alpha/n={alpha / n:g}, 2/L_bar={2.0 / L_bar:g})")
    if mu_lambda > L_bar:
        raise EngineError(f"theta requires mu_lambda <= L_bar ({mu_lambda:g} > {L_bar:g})")
    sq = 1.0 - (alpha * mu_lambda**2 / n) * (2.0 / L_bar - alpha / n)
    if not sq > 0:
        raise EngineError("theta degenerates to 0 (mu_lambda = L_bar at alpha = n/L_bar)")
    return math.sqrt(sq)


def step_size_interval(mu_lambda, L_bar, sigma2, tau, gamma, n) -> StepSizeInterval:
    """Admissible step sizes for target rate ``gamma`` and slack ``tau``.

    ``n/L + n sqrt(((sigma2+tau)^2-1)/mu + 1/L^2) <= alpha <= n/L + n sqrt((gamma^2-1)/mu + 1/L^2)``
    """
    if not gamma > sigma2:
        raise EngineError(f"gamma must exceed sigma2 ({gamma:g} <= {sigma2:g})")
    if not gamma < 1:
        raise EngineError(f"gamma must be < 1, got {gamma:g}")
    if not tau > 0:
        raise EngineError(f"tau must be > 0, got {tau:g}")
    nan = float("nan")
    if not mu_lambda > 0:
        return StepSizeInterval(nan, nan, True)
    base = n / L_bar
    lo_rad = ((sigma2 + tau) ** 2 - 1.0) / mu_lambda + 1.0 / L_bar**2
    hi_rad = (gamma**2 - 1.0) / mu_lambda + 1.0 / L_bar**2
    if lo_rad < 0 or hi_rad < 0:
        return StepSizeInterval(
            base + n * math.sqrt(lo_rad) if lo_rad >= 0 else nan,
            base + n * math.sqrt(hi_rad) if hi_rad >= 0 else nan,
            True,
        )
    lower = base + n * math.sqrt(lo_rad)
    upper = base + n * math.sqrt(hi_rad)
    return StepSizeInterval(lower, upper, lower > upper)


def gradient_reduction_envelope(values, gamma, tail_fraction=0.2) -> tuple[float, float]:
    """Fit ``(D, B)`` with ``values[k] <= D gamma^k + B`` for every recorded ``k``.

    ``B`` is the largest value in the trailing ``tail_fraction`` of the sequence;
    ``D`` is then the smallest coefficient covering the rest.  Accepts raw
    values or a list of :class:`TrajectoryRecord` (uses ``tracker_dispersion``).
    """
    if not 0 < gamma < 1:
        raise EngineError("gamma must lie in (0, 1)")
    vals = [v.tracker_dispersion if isinstance(v, TrajectoryRecord) else v for v in values]
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        raise EngineError("empty trajectory")
    start = min(vals.size - 1, int(math.floor((1.0 - tail_fraction) * vals.size)))
    B = max(0.0, float(vals[start:].max()))
    excess = vals - B
    k = np.arange(vals.size)
    pos = excess > 0
    if not pos.any():
        return 0.0, B
    with np.errstate(over="ignore"):
        D = float(np.max(np.exp(np.log(excess[pos]) - k[pos] * math.log(gamma))))
    return D, B


def geometric_fit(values, k_start=0, k_stop=None) -> tuple[float, float]:
    """Least-squares line through ``log(values[k])``; returns ``(rate, r_squared)``.

    ``rate = exp(slope)`` is the per-iteration geometric factor.
    """
    vals = np.asarray(values, dtype=float)
    k_stop = vals.size - 1 if k_stop is None else k_stop
    k = np.arange(k_start, k_stop + 1)
    y = np.log(vals[k_start : k_stop + 1])
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(slope)), r2
