"""Objective, regularizer, and oracle checks against independent references.

Gradients are checked against central finite differences with step
h = 1e-5 (1 + ||x||); prox outputs are certified by their subgradient
optimality residuals and by direct objective comparison.
"""

import math

import numpy as np
import pytest

from async_iter_lab import problems, rng

FD_REL_TOL = 1e-6
PROX_RESIDUAL_TOL = 1e-9


def fd_gradient(fn, x):
    x = np.asarray(x, dtype=np.float64)
    h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
    grad = np.zeros_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        grad[j] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric):
    scale = 1.0 + float(np.linalg.norm(analytic))
    assert float(np.linalg.norm(analytic - numeric)) <= FD_REL_TOL * scale


def test_least_squares_full_gradient_matches_fd():
    for seed in (0, 1, 2):
        p = problems.make_least_squares(12, 5, seed)
        key = rng.split(seed, "probe")
        for t in range(4):
            x = 3.0 * rng.normal_block(rng.subkey(key, t), p.d)
            assert_grad_close(p.full_gradient(x), fd_gradient(p.value, x))


def test_logistic_full_gradient_matches_fd():
    for seed in (3, 4):
        p = problems.make_logistic(20, 4, seed)
        key = rng.split(seed, "probe")
        for t in range(4):
            x = 2.0 * rng.normal_block(rng.subkey(key, t), p.d)
            assert_grad_close(p.full_gradient(x), fd_gradient(p.value, x))


def test_component_gradient_matches_fd():
    p = problems.make_least_squares(6, 3, 7)
    q = problems.make_logistic(6, 3, 7)
    x = np.array([0.4, -1.2, 0.75])
    for inst in (p, q):
        for i in range(inst.n):
            analytic = inst.component_gradient(i, x)
            numeric = fd_gradient(lambda z: inst.component_value(i, z), x)
            assert_grad_close(analytic, numeric)


def test_least_squares_hand_values():
    p = problems.SmoothSum(
        family="least-squares",
        A=np.array([[2.0, 0.0], [0.0, 1.0]]),
        b=np.array([0.0, 0.0]),
    )
    # F(x) = ((2 x0)^2 + x1^2)/4, grad = (2 x0, x1/2)
    assert p.value(np.array([1.0, 2.0])) == 2.0
    np.testing.assert_allclose(p.full_gradient(np.array([1.0, 2.0])), [2.0, 1.0])
    np.testing.assert_allclose(p.component_lipschitz, [4.0, 1.0])
    assert p.L == 2.5
    assert p.mu == pytest.approx(0.5, rel=1e-12)
    assert p.growth == pytest.approx(0.5, rel=1e-12)
    assert p.rank == 2


def test_rank_deficient_constants():
    p = problems.SmoothSum(
        family="least-squares",
        A=np.array([[2.0, 0.0]]),
        b=np.array([0.0]),
    )
    assert p.rank == 1
    assert p.mu == 0.0
    assert p.growth == pytest.approx(4.0, rel=1e-12)


def test_logistic_hand_values():
    A = np.array([[1.0, 2.0], [3.0, -1.0]])
    b = np.array([1.0, -1.0])
    p = problems.SmoothSum(family="logistic", A=A, b=b)
    x0 = np.zeros(2)
    assert p.value(x0) == pytest.approx(math.log(2.0), rel=1e-15)
    expected = (-b[0] * A[0] / 2.0 - b[1] * A[1] / 2.0) / 2.0
    np.testing.assert_allclose(p.full_gradient(x0), expected, rtol=1e-14)
    np.testing.assert_allclose(p.component_lipschitz, [5.0 / 4.0, 10.0 / 4.0])
    assert p.mu == 0.0
    assert p.growth is None


def test_logistic_labels_validated():
    with pytest.raises(ValueError):
        problems.SmoothSum(
            family="logistic",
            A=np.eye(2),
            b=np.array([1.0, 0.5]),
        )


def test_least_squares_solution_is_min_norm_stationary():
    p = problems.make_least_squares(15, 6, 11, rank=4)
    star = p.solution
    assert float(np.linalg.norm(p.full_gradient(star))) <= 1e-10
    # min-norm: no component in the null space of A
    _, svals, Vt = np.linalg.svd(p.A)
    null_rows = Vt[svals <= 1e-10 * svals[0]] if svals.size else Vt
    null_rows = Vt[4:]
    assert float(np.linalg.norm(null_rows @ star)) <= 1e-9


def test_projection_solution_set_hand_example():
    p = problems.SmoothSum(
        family="least-squares", A=np.array([[1.0, 0.0]]), b=np.array([1.0])
    )
    proj = p.projection_solution_set(np.array([0.0, 0.0]))
    np.testing.assert_allclose(proj, [1.0, 0.0], atol=1e-12)


def test_projection_solution_set_geometry():
    p = problems.make_least_squares(12, 8, 5, rank=5)
    key = rng.split(99, "proj")
    for t in range(5):
        x = 4.0 * rng.normal_block(rng.subkey(key, t), p.d)
        proj = p.projection_solution_set(x)
        # projection lands on the solution set
        assert float(np.linalg.norm(p.full_gradient(proj))) <= 1e-9
        # idempotent
        np.testing.assert_allclose(
            p.projection_solution_set(proj), proj, rtol=0, atol=1e-10
        )
        # optimality of projection: no closer point among solution perturbations
        assert p.value(proj) <= p.optimal_value + 1e-9


def test_projection_rejects_logistic():
    p = problems.make_logistic(8, 3, 0)
    with pytest.raises(ValueError):
        p.projection_solution_set(np.zeros(3))


def test_logistic_solution_gradient_norm():
    p = problems.make_logistic(40, 5, 21)
    star = p.solution
    assert float(np.linalg.norm(p.full_gradient(star))) <= 1e-12
    key = rng.split(17, "opt")
    for t in range(5):
        x = star + rng.normal_block(rng.subkey(key, t), p.d)
        assert p.value(x) >= p.optimal_value


def test_prox_hand_values():
    r1 = problems.l1(1.0)
    np.testing.assert_allclose(r1.prox(0.5, np.array([2.0, -0.3, 0.0])), [1.5, 0.0, 0.0])
    r2 = problems.sq_l2(2.0)
    np.testing.assert_allclose(r2.prox(0.5, np.array([3.0])), [1.5])
    r3 = problems.box(-1.0, 1.0)
    np.testing.assert_allclose(r3.prox(0.5, np.array([1.7, -2.0, 0.2])), [1.0, -1.0, 0.2])
    r4 = problems.elastic(1.0, 2.0)
    np.testing.assert_allclose(r4.prox(0.5, np.array([2.0])), [0.75])
    r0 = problems.no_regularizer()
    np.testing.assert_allclose(r0.prox(0.5, np.array([2.0])), [2.0])


def test_prox_residuals_small():
    regs = [
        problems.no_regularizer(),
        problems.l1(0.7),
        problems.sq_l2(1.3),
        problems.box(np.array([-1.0, 0.0, -0.5]), np.array([0.5, 2.0, 0.5])),
        problems.elastic(0.4, 0.9),
    ]
    key = rng.split(31, "prox")
    for reg in regs:
        for t in range(10):
            x = 3.0 * rng.normal_block(rng.subkey(key, 10 * hash(reg.kind) % 97 + t), 3)
            for gamma in (0.01, 0.5, 2.0):
                assert problems.prox_residual(reg, gamma, x) <= PROX_RESIDUAL_TOL


def test_prox_minimizes_envelope_objective():
    reg = problems.elastic(0.6, 0.8)
    gamma = 0.7
    key = rng.split(13, "envelope")
    x = rng.normal_block(key, 4)
    u = reg.prox(gamma, x)

    def envelope(v):
        return 0.5 * float(np.sum((v - x) ** 2)) + gamma * reg.value(v)

    base = envelope(u)
    for t in range(20):
        v = u + 0.1 * rng.normal_block(rng.subkey(key, t + 1), 4)
        assert envelope(v) >= base - 1e-12


def test_objective_box_indicator():
    p = problems.make_least_squares(5, 3, 2)
    reg = problems.box(-1.0, 1.0)
    assert problems.objective(p, reg, np.array([2.0, 0.0, 0.0])) == math.inf
    inside = np.array([0.5, -0.5, 0.0])
    assert problems.objective(p, reg, inside) == pytest.approx(p.value(inside))


def test_stochastic_oracle_zero_noise_exact():
    p = problems.make_least_squares(9, 4, 3)
    oracle = problems.StochasticOracle(base=p, sigma=0.0, seed=5)
    x = np.array([1.0, -2.0, 0.5, 0.0])
    np.testing.assert_array_equal(oracle.stochastic_gradient(x, 0), p.full_gradient(x))


def test_stochastic_oracle_reproducible_and_distinct():
    p = problems.make_least_squares(9, 4, 3)
    oracle = problems.StochasticOracle(base=p, sigma=1.0, seed=5)
    x = np.zeros(4)
    g0 = oracle.stochastic_gradient(x, 0)
    np.testing.assert_array_equal(oracle.stochastic_gradient(x, 0), g0)
    assert not np.array_equal(oracle.stochastic_gradient(x, 1), g0)
    other = problems.StochasticOracle(base=p, sigma=1.0, seed=6)
    assert not np.array_equal(other.stochastic_gradient(x, 0), g0)


def test_stochastic_oracle_moments():
    p = problems.make_least_squares(9, 4, 3)
    sigma = 0.8
    oracle = problems.StochasticOracle(base=p, sigma=sigma, seed=12)
    x = np.array([0.3, 0.3, -0.1, 1.0])
    grad = p.full_gradient(x)
    draws = np.array([oracle.stochastic_gradient(x, t) - grad for t in range(4000)])
    mean = draws.mean(axis=0)
    assert float(np.linalg.norm(mean)) <= 5.0 * sigma / math.sqrt(4000)
    second = float(np.mean(np.sum(draws**2, axis=1)))
    assert second == pytest.approx(sigma**2, rel=0.1)


def test_finite_sum_sampling_hits_components():
    p = problems.make_least_squares(6, 3, 8)
    oracle = problems.StochasticOracle(base=p, noise="finite-sum-sampling", seed=2)
    x = np.array([0.1, 0.2, 0.3])
    component_grads = [p.component_gradient(i, x) for i in range(p.n)]
    seen = set()
    for t in range(200):
        g = oracle.stochastic_gradient(x, t)
        matches = [
            i for i, cg in enumerate(component_grads) if np.array_equal(cg, g)
        ]
        assert len(matches) >= 1
        seen.add(matches[0])
    assert seen == set(range(p.n))


def test_generators_deterministic_and_shaped():
    a = problems.make_least_squares(10, 4, 42, rank=2)
    b = problems.make_least_squares(10, 4, 42, rank=2)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.b, b.b)
    assert np.linalg.matrix_rank(a.A) == 2
    c = problems.make_logistic(10, 4, 42)
    assert set(np.unique(c.b)) <= {-1.0, 1.0}
    d = problems.make_instance("least-squares", 5, 2, 0)
    assert (d.n, d.d) == (5, 2)
    with pytest.raises(ValueError):
        problems.make_instance("quadratic", 5, 2, 0)
    with pytest.raises(ValueError):
        problems.make_least_squares(4, 4, 0, rank=9)


def test_problem_serialization_round_trip():
    for p in (
        problems.make_least_squares(7, 3, 9, rank=2),
        problems.make_logistic(5, 2, 9),
    ):
        text = problems.problem_to_text(p)
        q = problems.problem_from_text(text)
        assert q.family == p.family
        np.testing.assert_array_equal(q.A, p.A)
        np.testing.assert_array_equal(q.b, p.b)
        assert problems.problem_to_text(q) == text


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        problems.SmoothSum(family="cubic", A=np.eye(2), b=np.zeros(2))
    with pytest.raises(ValueError):
        problems.SmoothSum(family="least-squares", A=np.eye(2), b=np.zeros(3))
    with pytest.raises(ValueError):
        problems.Regularizer(kind="l3")
    with pytest.raises(ValueError):
        problems.box(1.0, -1.0)
    with pytest.raises(ValueError):
        problems.l1(0.5).prox(0.0, np.array([1.0]))
    with pytest.raises(ValueError):
        problems.StochasticOracle(base=problems.make_least_squares(3, 2, 0), sigma=-1.0)
    p = problems.make_least_squares(3, 2, 0)
    with pytest.raises(IndexError):
        p.component_gradient(3, np.zeros(2))
