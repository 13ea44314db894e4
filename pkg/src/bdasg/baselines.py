"""Centralized reference solutions for the error metric."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class BaselineMethod(str, Enum):
    PSEUDO_INVERSE = "pinv"
    RIDGE = "ridge"
    PROXIMAL_GRADIENT = "ista"


@dataclass(frozen=True)
class CentralizedSolution:
    x_star: np.ndarray
    method: BaselineMethod
    residual: float
    iterations_used: int = 0


class BaselineError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


def min_norm_least_squares(H, z, rcond=1e-12) -> CentralizedSolution:
    """Smallest-norm minimizer of ``||H x - z||^2`` via a truncated SVD.

    Singular values below ``rcond * s_max`` are treated as zero.  The residual
    is the normal-equation violation ``||H^T (H x - z)||``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    keep = s > rcond * (s[0] if s.size else 0.0)
    x = Vt[keep].T @ ((U[:, keep].T @ z) / s[keep])
    residual = float(np.linalg.norm(H.T @ (H @ x - z)))
    return CentralizedSolution(x, BaselineMethod.PSEUDO_INVERSE, residual)


def ridge_solution(H, z, lam, n) -> CentralizedSolution:
    """Minimizer of ``||H x - z||^2 + lam * n * ||x||^2``."""
    if not lam > 0:
        raise ValueError("ridge_solution needs lambda > 0")
    H = np.atleast_2d(np.asarray(H, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    G = H.T @ H + lam * n * np.eye(H.shape[1])
    rhs = H.T @ z
    x = np.linalg.solve(G, rhs)
    return CentralizedSolution(x, BaselineMethod.RIDGE, float(np.linalg.norm(G @ x - rhs)))


def soft_threshold(v, t):
    if t < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_objective(A, b, lam, x) -> float:
    r = A @ x - b
    return float(r @ r) + lam * float(np.abs(x).sum())


def proximal_gradient_lasso(A, b, lam, step=None, max_iter=10**6, tol=1e-12, x0=None, history=None):
    """ISTA for ``||A x - b||^2 + lam ||x||_1``.

    The default step is ``1 / (2 lmax(A^T A))``, the largest the objective's
    smoothness allows.  Stops when ``||x_{t+1} - x_t|| <= tol``.  When
    ``history`` is a list, the objective after every iterate is appended to it.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    L = 2.0 * float(np.linalg.eigvalsh(A.T @ A)[-1])
    if step is None:
        step = 1.0 / L
    elif step > 1.0 / L * (1 + 1e-12):
        raise ValueError(f"step {step:g} exceeds 1/(2 lmax(A^T A)) = {1.0 / L:g}")
    AtA, Atb = A.T @ A, A.T @ b
    x = np.zeros(A.shape[1]) if x0 is None else np.array(x0, dtype=float)
    if history is not None:
        history.append(lasso_objective(A, b, lam, x))
    residual = np.inf
    for t in range(1, max_iter + 1):
        x_new = soft_threshold(x - step * 2.0 * (AtA @ x - Atb), step * lam)
        residual = float(np.linalg.norm(x_new - x))
        x = x_new
        if history is not None:
            history.append(lasso_objective(A, b, lam, x))
        if residual <= tol:
            return CentralizedSolution(x, BaselineMethod.PROXIMAL_GRADIENT, residual, t)
    sol = CentralizedSolution(x, BaselineMethod.PROXIMAL_GRADIENT, residual, max_iter)
    raise BaselineError(f"ISTA did not reach tol={tol:g} in {max_iter} iterations (residual {residual:.3e})", sol)


def regularization_path_check(problem, lambda_grid) -> list[tuple[float, float]]:
    """Distance ``||x*_lam - x*||`` from the ridge path to the min-norm solution.

    ``problem`` is a sensor-type :class:`~bdasg.problems.BilevelProblem`, or a
    ``(H, z, n)`` triple.
    """
    grid = [float(v) for v in lambda_grid]
    if any(v <= 0 for v in grid) or any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda_grid must be strictly decreasing and positive")
    if isinstance(problem, tuple):
        H, z, n = problem
    else:
        H, z = problem.stacked_data()
        n = problem.n
    x_star = min_norm_least_squares(H, z).x_star
    return [(lam, float(np.linalg.norm(ridge_solution(H, z, lam, n).x_star - x_star))) for lam in grid]


def solve_baseline(problem, method) -> CentralizedSolution:
    """Reference solution for a generated problem."""
    method = BaselineMethod(method)
    if method is BaselineMethod.PROXIMAL_GRADIENT:
        if problem.name != "regression":
            raise ValueError("the ISTA baseline applies to regression problems")
        A, b = problem.stacked_data()
        return proximal_gradient_lasso(A, b, problem.lam)
    if problem.name != "sensor":
        raise ValueError(f"the {method.value} baseline applies to sensor problems")
    H, z = problem.stacked_data()
    if method is BaselineMethod.PSEUDO_INVERSE:
        return min_norm_least_squares(H, z)
    return ridge_solution(H, z, problem.lam, problem.n)
