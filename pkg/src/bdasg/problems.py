"""Bilevel problem instances: per-agent objective pairs, gradients and noise.

Every agent ``i`` holds an upper-level objective ``f_i`` and a lower-level
objective ``g_i``.  The algorithm only ever consumes the aggregated gradient
``grad g_i + lam * grad f_i`` and noisy samples of it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ProblemError(ValueError):
    pass


def _check_vector(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ProblemError(f"dimension mismatch: expected a vector of length {d}, got shape {x.shape}")
    return x


def _lmax(M):
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(M.T @ M)[-1])


# -- per-agent objectives ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class SensorQuadratic:
    """``f(x) = ||x||^2`` and ``g(x) = ||z - H x||^2``."""

    H: np.ndarray
    z: np.ndarray
    kind = "sensor"
    smooth_f = True

    @property
    def d(self):
        return self.H.shape[1]

    def f(self, x):
        return float(x @ x)

    def grad_f(self, x):
        return 2.0 * x

    def g(self, x):
        r = self.z - self.H @ x
        return float(r @ r)

    def grad_g(self, x):
        return 2.0 * self.H.T @ (self.H @ x - self.z)

    @property
    def L_f(self):
        return 2.0

    @property
    def L_g(self):
        return 2.0 * _lmax(self.H)


@dataclass(frozen=True, eq=False)
class RegressionL1:
    """``f(x) = w ||x||_1`` and ``g(x) = ||A x - b||^2``.

    ``grad_f`` returns the sign subgradient (zero at zero); ``f`` is not
    smooth, so ``L_f`` is reported as 0.
    """

    A: np.ndarray
    b: np.ndarray
    l1_weight: float = 1.0
    kind = "regression"
    smooth_f = False

    @property
    def d(self):
        return self.A.shape[1]

    def f(self, x):
        return self.l1_weight * float(np.abs(x).sum())

    def grad_f(self, x):
        return self.l1_weight * np.sign(x)

    def g(self, x):
        r = self.A @ x - self.b
        return float(r @ r)

    def grad_g(self, x):
        return 2.0 * self.A.T @ (self.A @ x - self.b)

    @property
    def L_f(self):
        return 0.0

    @property
    def L_g(self):
        return 2.0 * _lmax(self.A)


@dataclass(frozen=True, eq=False)
class LinearConstraintPenalty:
    """Penalty form of ``A x = b, x_j >= 0 for j in J``.

    ``g(x) = 1/2 ||A x - b||^2 + 1/(2n) sum_J max(0, -x_j)^2`` with the
    minimum-energy upper level ``f(x) = ||x||^2 / n``.
    """

    A: np.ndarray
    b: np.ndarray
    nonneg_indices: tuple[int, ...]
    n_agents: int
    kind = "constrained"
    smooth_f = True

    @property
    def d(self):
        return self.A.shape[1]

    def _hinge(self, x):
        out = np.zeros_like(x)
        idx = list(self.nonneg_indices)
        out[idx] = np.maximum(0.0, -x[idx])
        return out

    def f(self, x):
        return float(x @ x) / self.n_agents

    def grad_f(self, x):
        return 2.0 * x / self.n_agents

    def g(self, x):
        r = self.A @ x - self.b
        h = self._hinge(x)
        return 0.5 * float(r @ r) + float(h @ h) / (2.0 * self.n_agents)

    def grad_g(self, x):
        return self.A.T @ (self.A @ x - self.b) - self._hinge(x) / self.n_agents

    @property
    def L_f(self):
        return 2.0 / self.n_agents

    @property
    def L_g(self):
        return _lmax(self.A) + (1.0 / self.n_agents if self.nonneg_indices else 0.0)


@dataclass(frozen=True, eq=False)
class CustomObjective:
    d: int
    f: Callable[[np.ndarray], float]
    grad_f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], float]
    grad_g: Callable[[np.ndarray], np.ndarray]
    L_f: float
    L_g: float
    smooth_f: bool = True
    kind = "custom"


AgentObjective = SensorQuadratic | RegressionL1 | LinearConstraintPenalty | CustomObjective


_TINY = np.finfo(float).tiny

# -- noise ---------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian gradient noise, norm-clipped per sampled vector.

    ``clip_radius=None`` resolves to ``6 * max(sigma_f, sigma_g) * sqrt(d)``;
    pass ``math.inf`` to disable clipping.
    """

    sigma_f: float = 0.0
    sigma_g: float = 0.0
    clip_radius: float | None = None

    def __post_init__(self):
        if self.sigma_f < 0 or self.sigma_g < 0:
            raise ProblemError("noise standard deviations must be >= 0")
        if self.clip_radius is not None and not self.clip_radius > 0:
            raise ProblemError("clip_radius must be > 0")

    @property
    def disabled(self) -> bool:
        return self.sigma_f == 0 and self.sigma_g == 0

    def radius(self, d: int) -> float:
        if self.clip_radius is not None:
            return float(self.clip_radius)
        if self.disabled:
            return math.inf
        return 6.0 * max(self.sigma_f, self.sigma_g) * math.sqrt(d)

    def sample_pair(self, rng: np.random.Generator, shape) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``(xi_g, xi_f)``, each clipped along the last axis.

        Both components come from one standard-normal block of shape ``(2, *shape)``.
        """
        shape = tuple(np.atleast_1d(shape))
        if self.disabled:
            return np.zeros(shape), np.zeros(shape)
        scale = np.array([self.sigma_g, self.sigma_f]).reshape((2,) + (1,) * len(shape))
        xi = scale * rng.standard_normal((2,) + shape)
        r = self.radius(shape[-1])
        if math.isfinite(r):
            norms = np.sqrt(np.einsum("...i,...i->...", xi, xi))[..., None]
            xi = xi * np.minimum(1.0, r / np.maximum(norms, _TINY))
        return xi[0], xi[1]

    def draw(self, rng: np.random.Generator, shape, lam: float) -> np.ndarray:
        """Combined noise ``xi_g + lam * xi_f``; consumes no randomness when disabled."""
        xi_g, xi_f = self.sample_pair(rng, shape)
        return xi_g + lam * xi_f


# -- the problem ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BilevelProblem:
    agents: tuple
    lam: float
    mu_lambda: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ProblemError("a problem needs at least one agent")
        dims = {a.d for a in self.agents}
        if len(dims) != 1:
            raise ProblemError(f"agents disagree on the decision dimension: {sorted(dims)}")
        if self.lam < 0:
            raise ProblemError("lambda must be >= 0")
        object.__setattr__(self, "_stack", _stack_quadratics(self.agents))

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def d(self) -> int:
        return self.agents[0].d

    def L_i(self, i: int) -> float:
        a = self.agents[i]
        return a.L_g + self.lam * a.L_f

    @property
    def L_bar(self) -> float:
        return float(sum(self.L_i(i) for i in range(self.n)))

    @property
    def L_max(self) -> float:
        return max(self.L_i(i) for i in range(self.n))

    def objective(self, x) -> float:
        """``b(x) = sum_i g_i(x) + lam * f_i(x)``."""
        x = _check_vector(x, self.d)
        if self._stack is not None:
            M, v = self._stack
            r = np.matmul(M, x) - v
            if self.agents[0].kind == "sensor":
                upper = self.n * float(x @ x)
            else:
                upper = sum(a.l1_weight for a in self.agents) * float(np.abs(x).sum())
            return float((r * r).sum()) + self.lam * upper
        return float(sum(a.g(x) + self.lam * a.f(x) for a in self.agents))

    # stacked evaluations, row i belongs to agent i

    def grad_G(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self._stack is not None:
            M, v = self._stack
            r = np.matmul(M, X[:, :, None])[..., 0] - v
            return 2.0 * np.matmul(r[:, None, :], M)[:, 0, :]
        return np.stack([a.grad_g(x) for a, x in zip(self.agents, X)])

    def grad_F(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        kinds = {a.kind for a in self.agents}
        if kinds == {"sensor"}:
            return 2.0 * X
        if kinds == {"regression"}:
            w = np.array([a.l1_weight for a in self.agents])[:, None]
            return w * np.sign(X)
        return np.stack([a.grad_f(x) for a, x in zip(self.agents, X)])

    def grad_B(self, X) -> np.ndarray:
        return self.grad_G(X) + self.lam * self.grad_F(X)

    def stacked_data(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate the measurement blocks of quadratic agents into ``(M, v)``."""
        Ms, vs = [], []
        for a in self.agents:
            if a.kind == "sensor":
                Ms.append(a.H), vs.append(a.z)
            elif a.kind in ("regression", "constrained"):
                Ms.append(a.A), vs.append(a.b)
            else:
                raise ProblemError("custom agents carry no measurement data")
        return np.vstack(Ms), np.concatenate(vs)

    def data_blocks(self) -> list[tuple[str, np.ndarray]]:
        blocks = []
        for i, a in enumerate(self.agents):
            if a.kind == "sensor":
                blocks += [(f"H[{i}]", a.H), (f"z[{i}]", a.z[:, None])]
            elif a.kind in ("regression", "constrained"):
                blocks += [(f"A[{i}]", a.A), (f"b[{i}]", a.b[:, None])]
        return blocks

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.name};n={self.n};d={self.d};lam={self.lam!r}".encode())
        for label, block in self.data_blocks():
            h.update(label.encode())
            h.update(np.ascontiguousarray(block, dtype="<f8").tobytes())
        return h.hexdigest()


def _stack_quadratics(agents):
    kinds = {a.kind for a in agents}
    if kinds == {"sensor"}:
        Ms = [a.H for a in agents]
        vs = [a.z for a in agents]
    elif kinds == {"regression"}:
        Ms = [a.A for a in agents]
        vs = [a.b for a in agents]
    else:
        return None
    if len({M.shape for M in Ms}) != 1:
        return None
    return np.stack(Ms), np.stack(vs)


# -- per-agent gradient queries ------------------------------------------------


def _agent(problem, agent):
    if not 0 <= agent < problem.n:
        raise ProblemError(f"agent index {agent} outside 0..{problem.n - 1}")
    return problem.agents[agent]


def grad_f_i(problem: BilevelProblem, agent: int, x) -> np.ndarray:
    return _agent(problem, agent).grad_f(_check_vector(x, problem.d))


def grad_g_i(problem: BilevelProblem, agent: int, x) -> np.ndarray:
    return _agent(problem, agent).grad_g(_check_vector(x, problem.d))


def aggregated_grad(problem: BilevelProblem, agent: int, x) -> np.ndarray:
    return grad_g_i(problem, agent, x) + problem.lam * grad_f_i(problem, agent, x)


def sample_stochastic_grad(problem, agent, x, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One noisy query ``grad b_i(x) + xi_g + lam * xi_f``."""
    grad = aggregated_grad(problem, agent, x)
    return grad + noise.draw(rng, (problem.d,), problem.lam)


# -- generators -----------------------------------------------------------------


def make_sensor_problem(n, d, m, lam, seed, normalize_rows=False) -> BilevelProblem:
    """Random sensor-network instance with ``f_i = ||x||^2``, ``g_i = ||z_i - H_i x||^2``.

    ``H_i`` has standard normal entries, scaled by ``1/sqrt(d)`` when
    ``normalize_rows`` is set so every measurement row has unit expected
    squared norm.  ``z_i = H_i x_true + e_i`` with standard normal ``e_i``.
    """
    if min(n, d, m) < 1 or lam <= 0:
        raise ProblemError("make_sensor_problem needs positive n, d, m and lambda")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    H = rng.standard_normal((n, m, d))
    if normalize_rows:
        H /= math.sqrt(d)
    z = np.einsum("imd,d->im", H, x_true) + rng.standard_normal((n, m))
    agents = [SensorQuadratic(H[i], z[i]) for i in range(n)]
    return BilevelProblem(
        agents,
        lam,
        mu_lambda=2.0 * lam * n,
        name="sensor",
        params=dict(n=n, d=d, m=m, lam=lam, seed=seed, normalize_rows=normalize_rows),
    )


def _rank_deficient(rng, m, d, attempts=20):
    for _ in range(attempts):
        A = rng.standard_normal((m, d))
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        # A (I - v v^T) annihilates v, so rank <= d - 1
        A = A - np.outer(A @ v, v)
        if np.linalg.matrix_rank(A) == d - 1:
            return A
    raise ProblemError("could not draw a rank d-1 matrix")


def make_regression_problem(n, d, m, lam, seed, deficient_agent=0) -> BilevelProblem:
    """Distributed lasso ``sum ||A_i x - b_i||^2 + lam ||x||_1`` with one rank-deficient agent.

    The l1 term is split evenly, ``f_i = ||x||_1 / n``.
    """
    if d < 2:
        raise ProblemError("rank deficiency needs d >= 2")
    if m < d - 1:
        raise ProblemError(f"m={m} rows cannot reach rank d-1={d - 1}")
    if not 0 <= deficient_agent < n:
        raise ProblemError(f"deficient_agent={deficient_agent} must be in 0..{n - 1}")
    if lam < 0:
        raise ProblemError("lambda must be >= 0")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    A = rng.standard_normal((n, m, d))
    A[deficient_agent] = _rank_deficient(rng, m, d)
    b = np.einsum("imd,d->im", A, x_true) + rng.standard_normal((n, m))
    agents = [RegressionL1(A[i], b[i], 1.0 / n) for i in range(n)]
    stacked = A.reshape(n * m, d)
    # g alone is strongly convex when the stacked data has full column rank
    mu = 2.0 * max(0.0, float(np.linalg.eigvalsh(stacked.T @ stacked)[0]))
    return BilevelProblem(
        agents,
        lam,
        mu_lambda=mu,
        name="regression",
        params=dict(n=n, d=d, m=m, lam=lam, seed=seed, deficient_agent=deficient_agent),
        warnings=("upper-level l1 term is nonsmooth; sign subgradient used, L_f recorded as 0",),
    )


def make_constrained_problem(A_blocks: Sequence, b_blocks: Sequence, nonneg_indices, lam) -> BilevelProblem:
    """Minimum-energy point of ``{A_i x = b_i, x_J >= 0}`` in bilevel penalty form."""
    n = len(A_blocks)
    if n != len(b_blocks) or n == 0:
        raise ProblemError("need matching, non-empty A and b block lists")
    agents = []
    for A, b in zip(A_blocks, b_blocks):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ProblemError(f"A block has {A.shape[0]} rows but b has {b.shape[0]}")
        agents.append(LinearConstraintPenalty(A, b, tuple(sorted(set(nonneg_indices))), n))
    d = agents[0].d
    if any(not 0 <= j < d for j in nonneg_indices):
        raise ProblemError(f"nonneg_indices must lie in 0..{d - 1}")
    # f = sum ||x||^2 / n = ||x||^2 is 2-strongly convex
    return BilevelProblem(agents, lam, mu_lambda=2.0 * lam, name="constrained", params=dict(n=n, d=d, lam=lam))
