import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdasg.baselines import ridge_solution
from bdasg.engine import (
    DivergenceError,
    EngineError,
    Given,
    TrajectoryRecord,
    UniformBox,
    Zeros,
    bdasg_init,
    bdasg_step,
    geometric_fit,
    gradient_reduction_envelope,
    iter_trajectory,
    run_trajectory,
    step_size_interval,
    theta,
    trial_streams,
)
from bdasg.problems import BilevelProblem, NoiseModel, SensorQuadratic, make_regression_problem, make_sensor_problem
from bdasg.topology import GraphSpec, build_graph

QUIET = NoiseModel()


def two_agent_example():
    agents = [SensorQuadratic(np.array([[1.0]]), np.array([0.0])), SensorQuadratic(np.array([[1.0]]), np.array([2.0]))]
    return BilevelProblem(agents, 0.0, name="sensor"), build_graph(GraphSpec("complete", 2))


def test_hand_computed_two_steps():
    p, g = two_agent_example()
    alpha = 0.1
    rng = np.random.default_rng(0)
    s0 = bdasg_init(p, g, QUIET, Given(np.array([[0.0], [2.0]])), rng)
    np.testing.assert_array_equal(s0.Y, [[0.0], [0.0]])
    s1 = bdasg_step(s0, p, g, alpha, QUIET, rng)
    np.testing.assert_allclose(s1.X, [[1.0], [1.0]], atol=1e-15)
    np.testing.assert_allclose(s1.Y, [[2.0], [-2.0]], atol=1e-15)
    s2 = bdasg_step(s1, p, g, alpha, QUIET, rng)
    np.testing.assert_allclose(s2.X, [[1 - 2 * alpha], [1 + 2 * alpha]], atol=1e-15)
    assert s2.k == 2


def test_init_examples():
    p = make_sensor_problem(4, 3, 2, 0.1, seed=1)
    g = build_graph(GraphSpec("ring", 4))
    s = bdasg_init(p, g, QUIET, Zeros())
    np.testing.assert_array_equal(s.X, 0.0)
    expected = np.stack([-2 * a.H.T @ a.z for a in p.agents])
    np.testing.assert_allclose(s.Y, expected, rtol=1e-14)
    assert np.array_equal(s.H_prev, s.Y)
    rec = next(iter_trajectory(p, g, 0.01, QUIET, 0, Given(np.tile([1.0, 2.0, 3.0], (4, 1)))))
    assert rec.consensus_err == 0.0
    with pytest.raises(EngineError):
        bdasg_init(p, g, QUIET, Given(np.zeros((3, 3))))
    with pytest.raises(EngineError):
        bdasg_init(p, build_graph(GraphSpec("ring", 5)), QUIET)


def test_uniform_box_uses_x0_stream():
    p = make_sensor_problem(3, 2, 1, 0.1, seed=1)
    g = build_graph(GraphSpec("ring", 3))
    s = bdasg_init(p, g, QUIET, UniformBox(0.5), x0_rng=np.random.default_rng(2))
    assert np.abs(s.X).max() <= 0.5
    assert np.array_equal(s.X, np.random.default_rng(2).uniform(-0.5, 0.5, (3, 2)))


def test_alpha_zero_is_pure_averaging():
    p = make_sensor_problem(5, 3, 2, 0.1, seed=2)
    g = build_graph(GraphSpec("ring", 5))
    rng = np.random.default_rng(0)
    s = bdasg_init(p, g, NoiseModel(0.1, 0.1), UniformBox(1.0), rng, np.random.default_rng(1))
    s1 = bdasg_step(s, p, g, 0.0, NoiseModel(0.1, 0.1), rng)
    np.testing.assert_array_equal(s1.X, g.weights @ s.X)
    np.testing.assert_allclose(s1.X.mean(axis=0), s.X.mean(axis=0), atol=1e-14)
    with pytest.raises(EngineError):
        bdasg_step(s, p, g, -0.1, QUIET, rng)


def test_single_agent_is_gradient_descent():
    p = make_sensor_problem(1, 4, 6, 0.05, seed=3)
    g = build_graph(GraphSpec("complete", 1))
    alpha = 0.5 / p.L_bar
    x0 = np.random.default_rng(0).standard_normal((1, 4))
    s = bdasg_init(p, g, QUIET, Given(x0))
    x = x0[0].copy()
    for _ in range(100):
        s = bdasg_step(s, p, g, alpha, QUIET, None)
        x = x - alpha * p.grad_B(x[None])[0]
    assert np.abs(s.X[0] - x).max() <= 1e-12


def test_single_agent_error_strictly_decreases():
    p = make_sensor_problem(1, 3, 5, 0.1, seed=4)
    g = build_graph(GraphSpec("complete", 1))
    H, z = p.stacked_data()
    x_star = ridge_solution(H, z, p.lam, 1).x_star
    errs = [r.mean_opt_err for r in iter_trajectory(p, g, 1.0 / p.L_bar, QUIET, 60, x_star=x_star)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_fixed_point_stays_put():
    # identical agents, so every local gradient vanishes at x*_lambda and Y(0) = 0
    base = make_sensor_problem(1, 3, 2, 0.1, seed=5).agents[0]
    p = BilevelProblem([base] * 6, 0.1, name="sensor")
    g = build_graph(GraphSpec("ring", 6))
    H, z = p.stacked_data()
    x_star = ridge_solution(H, z, p.lam, p.n).x_star
    recs = list(iter_trajectory(p, g, 0.01, QUIET, 50, Given(np.tile(x_star, (6, 1))), x_star=x_star))
    assert max(r.consensus_err for r in recs) <= 1e-10
    assert max(r.mean_opt_err for r in recs) <= 1e-10


def test_zero_iterations_gives_one_record():
    p = make_sensor_problem(3, 2, 1, 0.1, seed=0)
    g = build_graph(GraphSpec("ring", 3))
    cfg = SimpleNamespace(alpha=0.01, noise=QUIET, iterations=0, x0_policy=Zeros(), master_seed=0)
    recs = run_trajectory(p, g, cfg, 0)
    assert len(recs) == 1 and recs[0].k == 0
    assert recs[0].mean_opt_err is None and recs[0].objective_gap is None


def _random_case(seed, noisy):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    kind = ["ring", "star", "complete", "random"][int(rng.integers(0, 4))]
    if kind == "ring" and n < 3:
        kind = "complete"
    g = build_graph(GraphSpec(kind, n), seed=seed)
    if rng.random() < 0.5:
        p = make_sensor_problem(n, 3, 2, 0.1, seed=seed, normalize_rows=True)
    else:
        p = make_regression_problem(n, 3, 3, 0.1, seed=seed)
    alpha = 0.2 / p.L_max
    noise = NoiseModel(0.05, 0.05) if noisy else QUIET
    return p, g, alpha, noise


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_tracking_conservation_and_averaged_dynamics(seed, noisy):
    p, g, alpha, noise = _random_case(seed, noisy)
    rng = np.random.default_rng(seed)
    s = bdasg_init(p, g, noise, UniformBox(1.0), rng, np.random.default_rng(seed + 1))
    for _ in range(150):
        col_h = s.H_prev.sum(axis=0)
        assert np.linalg.norm(s.Y.sum(axis=0) - col_h) <= 1e-9 * (1 + np.linalg.norm(col_h))
        nxt = bdasg_step(s, p, g, alpha, noise, rng)
        np.testing.assert_allclose(nxt.X.mean(axis=0), s.X.mean(axis=0) - alpha * s.Y.mean(axis=0), rtol=0, atol=1e-12)
        s = nxt


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_per_agent_loop_matches_matrix_form(seed):
    p, g, alpha, _ = _random_case(seed, True)
    noise = NoiseModel(0.05, 0.05)
    ra, rb = np.random.default_rng(seed), np.random.default_rng(seed)
    a = bdasg_init(p, g, noise, UniformBox(1.0), ra, np.random.default_rng(0))
    b = bdasg_init(p, g, noise, UniformBox(1.0), rb, np.random.default_rng(0))
    for _ in range(40):
        a = bdasg_step(a, p, g, alpha, noise, ra)
        b = bdasg_step(b, p, g, alpha, noise, rb, per_agent=True)
    np.testing.assert_allclose(a.X, b.X, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.Y, b.Y, rtol=0, atol=1e-12)


def test_trajectories_are_deterministic_per_trial():
    p = make_regression_problem(9, 3, 3, 0.1, seed=0)
    g = build_graph(GraphSpec("ring", 9))
    cfg = SimpleNamespace(alpha=0.001, noise=NoiseModel(0.001, 0.001), iterations=50, x0_policy=UniformBox(1.0), master_seed=7)
    a = run_trajectory(p, g, cfg, 3, np.zeros(3))
    b = run_trajectory(p, g, cfg, 3, np.zeros(3))
    c = run_trajectory(p, g, cfg, 4, np.zeros(3))
    assert a == b
    assert a != c
    n1, x1 = trial_streams(7, 3)
    n2, x2 = trial_streams(7, 3)
    assert n1.random() == n2.random() and x1.random() == x2.random()


def test_divergence_keeps_partial_trajectory():
    p = make_sensor_problem(4, 3, 2, 0.1, seed=0)
    g = build_graph(GraphSpec("ring", 4))
    cfg = SimpleNamespace(alpha=50.0, noise=QUIET, iterations=5000, x0_policy=Zeros(), master_seed=0)
    with pytest.raises(DivergenceError) as info:
        run_trajectory(p, g, cfg, 0)
    err = info.value
    assert 0 < err.iteration < 5000
    assert len(err.records) == err.iteration
    assert f"iteration {err.iteration}" in str(err)


# -- theory calculators


def test_theta_examples():
    L, n, mu = 4.0, 2, 1.5
    assert theta(n / L, mu, L, n) == pytest.approx(math.sqrt(1 - mu**2 / L**2), rel=1e-14)
    assert theta(0.3, 0.0, L, n) == 1.0
    eps = 1e-6
    assert theta(n / L, L - eps, L, n) == pytest.approx(math.sqrt(1 - ((L - eps) / L) ** 2), rel=1e-8)
    with pytest.raises(EngineError):
        theta(n / L, L, L, n)


@pytest.mark.parametrize(
    "args, match",
    [((0.0, 1.0, 4.0, 2), "alpha/n > 0"), ((1.0, 1.0, 4.0, 2), "2/L_bar"), ((0.1, 5.0, 4.0, 2), "mu_lambda <= L_bar")],
)
def test_theta_names_the_failed_bound(args, match):
    with pytest.raises(EngineError, match=match):
        theta(*args)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 50), st.integers(1, 20), st.floats(0.01, 1.0))
def test_theta_is_minimized_at_n_over_l(L, n, frac):
    mu = frac * L
    grid = np.linspace(0, 2 * n / L, 402)[1:-1]
    vals = np.array([theta(a, mu, L, n) for a in grid])
    i = int(np.argmin(vals))
    assert abs(grid[i] - n / L) <= 2 * (grid[1] - grid[0])
    assert (np.diff(vals[: i + 1]) <= 1e-15).all()
    assert (np.diff(vals[i:]) >= -1e-15).all()
    assert ((vals > 0) & (vals < 1)).all()


def test_step_size_interval_examples():
    iv = step_size_interval(1.0, 1.0, 0.0, 0.1, 0.9, 1)
    assert not iv.empty
    assert iv.lower == pytest.approx(1.1, abs=1e-12)
    assert iv.upper == pytest.approx(1.9, abs=1e-12)
    assert iv.contains(1.5) and not iv.contains(2.0)
    assert step_size_interval(1.0, 10.0, 0.0, 0.1, 0.9, 1).empty
    assert str(step_size_interval(1.0, 10.0, 0.0, 0.1, 0.9, 1)) == "empty"
    assert step_size_interval(0.0, 10.0, 0.0, 0.1, 0.9, 1).empty


def test_step_size_interval_limit():
    L, n = 3.0, 4
    iv = step_size_interval(1.0, L, 1 - 2e-9, 1e-9, 1 - 1e-10, n)
    assert iv.lower == pytest.approx(2 * n / L, rel=1e-4)
    assert iv.upper == pytest.approx(2 * n / L, rel=1e-4)


@pytest.mark.parametrize("sigma2, tau, gamma", [(0.5, 0.1, 0.5), (0.5, 0.1, 0.4), (0.5, 0.0, 0.9), (0.5, 0.1, 1.0)])
def test_step_size_interval_rejects(sigma2, tau, gamma):
    with pytest.raises(EngineError):
        step_size_interval(1.0, 1.0, sigma2, tau, gamma, 1)


def test_envelope_examples():
    assert gradient_reduction_envelope([2.5] * 50, 0.9) == (0.0, 2.5)
    gamma = 0.8
    seq = 2.0 * gamma ** np.arange(100)
    D, B = gradient_reduction_envelope(seq, gamma)
    assert B == pytest.approx(seq[80])
    assert D <= 2.0 + 1e-12
    assert (seq <= D * gamma ** np.arange(100) + B + 1e-15).all()
    decay = np.concatenate([[3.0, 1.0, 0.2], np.zeros(20)])
    assert gradient_reduction_envelope(decay, 0.5)[1] == 0.0
    recs = [TrajectoryRecord(k, 0.0, v) for k, v in enumerate(seq)]
    assert gradient_reduction_envelope(recs, gamma) == (D, B)
    with pytest.raises(EngineError):
        gradient_reduction_envelope([], 0.5)
    with pytest.raises(EngineError):
        gradient_reduction_envelope([1.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=200), st.floats(0.05, 0.99))
def test_envelope_covers_every_value(vals, gamma):
    D, B = gradient_reduction_envelope(vals, gamma)
    bound = D * gamma ** np.arange(len(vals)) + B
    assert D >= 0 and B >= 0
    assert (np.asarray(vals) <= bound * (1 + 1e-9) + 1e-300).all()


def test_geometric_fit_exact():
    rate, r2 = geometric_fit(3.0 * 0.9 ** np.arange(50))
    assert rate == pytest.approx(0.9, rel=1e-12)
    assert r2 == pytest.approx(1.0)


def test_consensus_rate_inside_certified_interval():
    # an instance whose certified step-size interval is non-empty
    n = 4
    g = build_graph(GraphSpec("ring", n))
    rng = np.random.default_rng(0)
    agents = [SensorQuadratic(np.array([[1e-3 * (i + 1)]]), np.array([rng.standard_normal()])) for i in range(n)]
    lam = 1 / (2 * n)
    p = BilevelProblem(agents, lam, mu_lambda=2 * lam * n, name="sensor")
    gamma = 0.5 * (g.sigma2 + 1)
    tau = 0.5 * (gamma - g.sigma2)
    iv = step_size_interval(p.mu_lambda, p.L_bar, g.sigma2, tau, gamma, n)
    assert not iv.empty
    alpha = 0.5 * (iv.lower + iv.upper)
    x0 = Given(rng.standard_normal((n, 1)))
    # heterogeneous local gradients with a large admissible alpha
    cons = [r.consensus_err for r in iter_trajectory(p, g, alpha, QUIET, 200, x0)]
    rate, _ = geometric_fit(cons, 10, 200)
    assert rate <= gamma, f"fitted consensus rate {rate:.3f} exceeds gamma={gamma:.3f} at alpha={alpha:.3f}"
