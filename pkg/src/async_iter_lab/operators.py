"""Block partitions and fixed-point operators for asynchronous iterations.

Operators declare a contraction (or pseudo-contraction) modulus in a stated
norm at construction time, and constructors refuse inputs whose verifiable
certificates do not hold.  Iteration code treats operators as black boxes:
apply, residual, declared norm, declared modulus, reference fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import rng
from .problems import Regularizer, SmoothSum, no_regularizer

# Slack applied when checking declared moduli against computed certificates.
_MODULUS_SLACK = 1e-12


@dataclass(frozen=True)
class Partition:
    """Partition of R^d into m consecutive blocks with positive weights."""

    sizes: tuple
    weights: tuple = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("block sizes must be positive")
        if self.weights is None:
            weights = (1.0,) * len(sizes)
        else:
            weights = tuple(float(w) for w in self.weights)
            if len(weights) != len(sizes) or any(w <= 0 for w in weights):
                raise ValueError("need one positive weight per block")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def d(self) -> int:
        return sum(self.sizes)

    @cached_property
    def offsets(self) -> tuple:
        starts = np.concatenate(([0], np.cumsum(self.sizes)))
        return tuple(int(s) for s in starts)

    def block(self, x: np.ndarray, i: int) -> np.ndarray:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return x[lo:hi]

    def block_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])


def uniform_partition(m: int, block_size: int = 1, weights=None) -> Partition:
    return Partition(sizes=(block_size,) * m, weights=weights)


def block_max_norm(x, partition: Partition) -> float:
    """max_i w_i ||x_i||_2 over the partition blocks."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != partition.d:
        raise ValueError("vector length does not match partition")
    return max(
        partition.weights[i] * float(np.linalg.norm(partition.block(x, i)))
        for i in range(partition.m)
    )


class FixedPointOperator:
    """Protocol base: T with ||T(x) - x*|| <= c ||x - x*|| in self.norm."""

    norm = "euclidean"
    modulus = 1.0
    partition: Partition = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual(self, x: np.ndarray) -> np.ndarray:
        """S(x) = x - T(x); zero exactly at fixed points."""
        return np.asarray(x, dtype=np.float64) - self.apply(x)

    def block_residual(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.partition.block(self.residual(x), i)

    def fixed_point(self) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x) -> float:
        diff = np.asarray(x, dtype=np.float64) - self.fixed_point()
        if self.norm == "block-max":
            return block_max_norm(diff, self.partition)
        return float(np.linalg.norm(diff))


@dataclass(frozen=True)
class AffineOperator(FixedPointOperator):
    """T(x) = C x + h.

    norm "euclidean": requires sigma_max(C) <= modulus.
    norm "block-max": requires the weighted block row-sum bound
      max_i sum_j (w_i / w_j) ||C_ij||_2 <= modulus,
    which certifies pseudo-contraction in the block-max norm.
    Pass modulus=None to adopt the computed certificate value.
    """

    C: np.ndarray
    h: np.ndarray
    partition: Partition
    norm: str = "euclidean"
    modulus: float = None

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        h = np.asarray(self.h, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or h.shape != (C.shape[0],):
            raise ValueError("C must be square with matching h")
        if C.shape[0] != self.partition.d:
            raise ValueError("operator size does not match partition")
        if self.norm not in ("euclidean", "block-max"):
            raise ValueError(f"unknown norm {self.norm!r}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "h", h)
        certified = _affine_certificate(C, self.partition, self.norm)
        if self.modulus is None:
            object.__setattr__(self, "modulus", certified)
        elif certified > self.modulus + _MODULUS_SLACK:
            raise ValueError(
                f"declared modulus {self.modulus} below certified value {certified}"
            )
        if self.modulus >= 1.0:
            raise ValueError("operator is not a contraction: modulus >= 1")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.C @ np.asarray(x, dtype=np.float64) + self.h

    @cached_property
    def _fixed_point(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.C.shape[0]) - self.C, self.h)

    def fixed_point(self) -> np.ndarray:
        return self._fixed_point


def _affine_certificate(C: np.ndarray, partition: Partition, norm: str) -> float:
    if norm == "euclidean":
        return float(np.linalg.norm(C, 2))
    w = partition.weights
    worst = 0.0
    for i in range(partition.m):
        rows = partition.block_slice(i)
        total = 0.0
        for j in range(partition.m):
            block = C[rows, partition.block_slice(j)]
            total += (w[i] / w[j]) * float(np.linalg.norm(block, 2))
        worst = max(worst, total)
    return worst


@dataclass(frozen=True)
class ProxGradOperator(FixedPointOperator):
    """T(x) = prox_{gamma R}(x - gamma grad F(x)) for strongly convex F.

    With gamma = 2 / (mu + L) the operator contracts in the Euclidean norm
    with modulus (Q - 1) / (Q + 1), Q = L / mu.
    """

    problem: SmoothSum
    reg: Regularizer = field(default_factory=no_regularizer)
    gamma: float = None
    partition: Partition = None
    norm: str = "euclidean"
    modulus: float = None

    def __post_init__(self):
        mu, L = self.problem.mu, self.problem.L
        if mu <= 0:
            raise ValueError("prox-grad operator needs a strongly convex smooth part")
        gamma = 2.0 / (mu + L) if self.gamma is None else float(self.gamma)
        if not 0.0 < gamma <= 2.0 / (mu + L):
            raise ValueError("gamma must lie in (0, 2 / (mu + L)]")
        certified = max(abs(1.0 - gamma * mu), abs(1.0 - gamma * L))
        if self.modulus is None:
            object.__setattr__(self, "modulus", certified)
        elif certified > self.modulus + _MODULUS_SLACK:
            raise ValueError(
                f"declared modulus {self.modulus} below certified value {certified}"
            )
        object.__setattr__(self, "gamma", gamma)
        if self.partition is None:
            object.__setattr__(self, "partition", uniform_partition(self.problem.d))
        if self.norm != "euclidean":
            raise ValueError("prox-grad contraction is certified in the Euclidean norm")
        if self.partition.d != self.problem.d:
            raise ValueError("partition does not match problem dimension")

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.reg.prox(self.gamma, x - self.gamma * self.problem.full_gradient(x))

    @cached_property
    def _fixed_point(self) -> np.ndarray:
        x = np.zeros(self.problem.d)
        for _ in range(500_000):
            nxt = self.apply(x)
            if float(np.linalg.norm(nxt - x)) <= 1e-15 * (1.0 + float(np.linalg.norm(x))):
                return nxt
            x = nxt
        raise RuntimeError("fixed-point iteration did not converge")

    def fixed_point(self) -> np.ndarray:
        return self._fixed_point


def affine_operator(C, h, partition=None, norm="euclidean", modulus=None) -> AffineOperator:
    C = np.asarray(C, dtype=np.float64)
    if partition is None:
        partition = uniform_partition(C.shape[0])
    return AffineOperator(C=C, h=np.asarray(h, dtype=np.float64), partition=partition,
                          norm=norm, modulus=modulus)


def prox_grad_operator(problem, reg=None, gamma=None, partition=None, modulus=None):
    return ProxGradOperator(
        problem=problem,
        reg=reg if reg is not None else no_regularizer(),
        gamma=gamma,
        partition=partition,
        modulus=modulus,
    )


def operator_apply(op: FixedPointOperator, x) -> np.ndarray:
    return op.apply(np.asarray(x, dtype=np.float64))


def residual_apply(op: FixedPointOperator, x) -> np.ndarray:
    return op.residual(np.asarray(x, dtype=np.float64))


def contraction_modulus_estimate(
    op: FixedPointOperator, samples: int = 200, seed: int = 0, scale_range=(-2.0, 2.0)
) -> float:
    """Empirical max of ||T(x) - x*|| / ||x - x*|| over random probes.

    Probes are drawn around the fixed point at log-spaced radii; the estimate
    lower-bounds the true modulus and must never exceed the declared one.
    """
    star = op.fixed_point()
    d = star.shape[0]
    key = rng.split(seed, "contraction-probe")
    t_star = op.apply(star)
    worst = 0.0
    for trial in range(samples):
        direction = rng.normal_block(rng.subkey(key, trial), d)
        nrm = float(np.linalg.norm(direction))
        if nrm == 0.0:
            continue
        exponent = scale_range[0] + (scale_range[1] - scale_range[0]) * rng.uniform(
            key, 2 * samples + trial
        )
        x = star + (10.0 ** exponent) * direction / nrm
        num = x_dist = None
        if op.norm == "block-max":
            num = block_max_norm(op.apply(x) - t_star, op.partition)
            x_dist = block_max_norm(x - star, op.partition)
        else:
            num = float(np.linalg.norm(op.apply(x) - t_star))
            x_dist = float(np.linalg.norm(x - star))
        if x_dist > 0.0:
            worst = max(worst, num / x_dist)
    return worst


def make_block_max_affine(
    m: int,
    modulus: float,
    seed: int,
    block_size: int = 1,
    weights=None,
    shift_scale: float = 1.0,
) -> AffineOperator:
    """Random affine operator with weighted block row sums equal to modulus.

    Rows are drawn, then each block row is rescaled so its weighted row sum
    hits the target exactly, giving a tight pseudo-contraction certificate.
    """
    if not 0.0 < modulus < 1.0:
        raise ValueError("modulus must lie in (0, 1)")
    partition = uniform_partition(m, block_size, weights)
    d = partition.d
    key = rng.split(seed, f"block-affine-{m}-{block_size}")
    C = rng.normal_block(rng.split(key, "matrix"), d * d).reshape(d, d)
    h = shift_scale * rng.normal_block(rng.split(key, "shift"), d)
    w = partition.weights
    for i in range(partition.m):
        rows = partition.block_slice(i)
        total = 0.0
        for j in range(partition.m):
            block = C[rows, partition.block_slice(j)]
            total += (w[i] / w[j]) * float(np.linalg.norm(block, 2))
        if total == 0.0:
            raise ValueError("degenerate zero block row")
        C[rows, :] *= modulus / total
    return AffineOperator(C=C, h=h, partition=partition, norm="block-max",
                          modulus=modulus)


def make_averaged_affine(d: int, modulus: float, seed: int,
                         shift_scale: float = 1.0) -> AffineOperator:
    """Random affine operator with sigma_max(C) equal to modulus (Euclidean)."""
    if not 0.0 <= modulus < 1.0:
        raise ValueError("modulus must lie in [0, 1)")
    key = rng.split(seed, f"averaged-affine-{d}")
    G = rng.normal_block(rng.split(key, "matrix"), d * d).reshape(d, d)
    U, _, Vt = np.linalg.svd(G)
    svals = modulus * (0.2 + 0.8 * rng.uniform_block(rng.split(key, "spectrum"), 0, d))
    svals[0] = modulus
    C = (U * svals) @ Vt
    h = shift_scale * rng.normal_block(rng.split(key, "shift"), d)
    return AffineOperator(C=C, h=h, partition=uniform_partition(d),
                          norm="euclidean", modulus=modulus)
