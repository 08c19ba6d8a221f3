"""Fixed-point operator certificates checked by construction and probing."""

import numpy as np
import pytest

from async_iter_lab import operators, problems, rng


def test_partition_blocks_and_offsets():
    part = operators.Partition(sizes=(2, 1, 3), weights=(1.0, 2.0, 0.5))
    assert part.m == 3
    assert part.d == 6
    assert part.offsets == (0, 2, 3, 6)
    x = np.arange(6.0)
    np.testing.assert_array_equal(part.block(x, 0), [0.0, 1.0])
    np.testing.assert_array_equal(part.block(x, 1), [2.0])
    np.testing.assert_array_equal(part.block(x, 2), [3.0, 4.0, 5.0])
    uniform = operators.uniform_partition(4, 2)
    assert uniform.sizes == (2, 2, 2, 2)
    assert uniform.weights == (1.0, 1.0, 1.0, 1.0)


def test_partition_validation():
    with pytest.raises(ValueError):
        operators.Partition(sizes=())
    with pytest.raises(ValueError):
        operators.Partition(sizes=(2, 0))
    with pytest.raises(ValueError):
        operators.Partition(sizes=(2, 2), weights=(1.0,))
    with pytest.raises(ValueError):
        operators.Partition(sizes=(2,), weights=(-1.0,))


def test_block_max_norm_hand_value():
    part = operators.Partition(sizes=(2, 2), weights=(1.0, 2.0))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert operators.block_max_norm(x, part) == 10.0
    with pytest.raises(ValueError):
        operators.block_max_norm(np.zeros(3), part)


def test_affine_euclidean_certificate():
    C = np.array([[0.5, 0.0], [0.0, -0.25]])
    op = operators.affine_operator(C, np.array([1.0, 1.0]))
    assert op.modulus == pytest.approx(0.5, rel=1e-12)
    star = op.fixed_point()
    np.testing.assert_allclose(op.apply(star), star, atol=1e-12)
    np.testing.assert_allclose(star, [2.0, 0.8])
    np.testing.assert_allclose(op.residual(star), [0.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        operators.affine_operator(C, np.array([1.0, 1.0]), modulus=0.4)
    with pytest.raises(ValueError):
        operators.affine_operator(np.eye(2), np.zeros(2))


def test_affine_block_max_certificate():
    # weighted block row sums: row 0: 0.3 + (1/2)*0.8 = 0.7; row 1: 2*0.2 + 0.4 = 0.8
    C = np.array([[0.3, 0.8], [0.2, 0.4]])
    part = operators.Partition(sizes=(1, 1), weights=(1.0, 2.0))
    op = operators.affine_operator(C, np.zeros(2), partition=part, norm="block-max")
    assert op.modulus == pytest.approx(0.8, rel=1e-12)
    with pytest.raises(ValueError):
        operators.affine_operator(
            C, np.zeros(2), partition=part, norm="block-max", modulus=0.75
        )


def test_make_block_max_affine_tight_rows():
    op = operators.make_block_max_affine(m=6, modulus=0.9, seed=4, block_size=2)
    part = op.partition
    for i in range(part.m):
        rows = part.block_slice(i)
        total = sum(
            (part.weights[i] / part.weights[j])
            * float(np.linalg.norm(op.C[rows, part.block_slice(j)], 2))
            for j in range(part.m)
        )
        assert total == pytest.approx(0.9, rel=1e-12)
    star = op.fixed_point()
    assert operators.block_max_norm(op.residual(star), part) <= 1e-10


def test_make_averaged_affine_modulus():
    op = operators.make_averaged_affine(d=8, modulus=0.5, seed=3)
    assert float(np.linalg.norm(op.C, 2)) == pytest.approx(0.5, rel=1e-10)
    assert op.modulus == 0.5


def test_contraction_estimate_respects_declared_modulus():
    ops = [
        operators.make_averaged_affine(d=6, modulus=0.5, seed=1),
        operators.make_block_max_affine(m=5, modulus=0.9, seed=2),
        operators.make_block_max_affine(m=4, modulus=0.7, seed=3, block_size=3),
    ]
    for op in ops:
        for seed in (0, 1, 2):
            est = operators.contraction_modulus_estimate(op, samples=150, seed=seed)
            assert 0.0 < est <= op.modulus + 1e-12


def test_contraction_estimate_near_tight_for_euclidean():
    op = operators.make_averaged_affine(d=4, modulus=0.6, seed=9)
    est = operators.contraction_modulus_estimate(op, samples=400, seed=0)
    assert est >= 0.3


def test_prox_grad_operator_contracts_to_solution():
    p = problems.make_least_squares(20, 5, 6)
    assert p.mu > 0
    op = operators.prox_grad_operator(p)
    expected = (p.L / p.mu - 1.0) / (p.L / p.mu + 1.0)
    assert op.modulus == pytest.approx(expected, rel=1e-12)
    star = op.fixed_point()
    np.testing.assert_allclose(star, p.solution, rtol=0, atol=1e-8)
    est = operators.contraction_modulus_estimate(op, samples=100, seed=7)
    assert est <= op.modulus + 1e-12


def test_prox_grad_operator_with_l1():
    p = problems.make_least_squares(20, 5, 6)
    reg = problems.l1(0.05)
    op = operators.prox_grad_operator(p, reg=reg)
    star = op.fixed_point()
    # fixed point satisfies prox optimality for the composite objective
    g = reg.subgradient_at_prox(
        op.gamma, star - op.gamma * p.full_gradient(star), star
    )
    assert float(np.linalg.norm(p.full_gradient(star) + g)) <= 1e-9
    assert float(np.linalg.norm(op.residual(star))) <= 1e-12


def test_prox_grad_operator_validation():
    ls = problems.make_least_squares(20, 5, 6)
    logit = problems.make_logistic(10, 3, 0)
    with pytest.raises(ValueError):
        operators.prox_grad_operator(logit)
    with pytest.raises(ValueError):
        operators.prox_grad_operator(ls, gamma=3.0 / (ls.mu + ls.L))
    with pytest.raises(ValueError):
        operators.prox_grad_operator(ls, modulus=0.5 * (ls.L / ls.mu - 1) / (ls.L / ls.mu + 1))


def test_block_residual_and_distance():
    op = operators.make_block_max_affine(m=3, modulus=0.5, seed=11, block_size=2)
    x = np.ones(op.partition.d)
    res = op.residual(x)
    for i in range(3):
        np.testing.assert_array_equal(
            op.block_residual(i, x), op.partition.block(res, i)
        )
    assert op.distance(op.fixed_point()) <= 1e-10
    assert op.distance(x) == operators.block_max_norm(x - op.fixed_point(), op.partition)
