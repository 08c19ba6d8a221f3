"""Finite-sum objectives, separable regularizers, and stochastic oracles.

All problem instances are immutable after construction and re-entrant.
Stochastic draws are pure functions of (seed, draw counter), so concurrent
samplers on disjoint counters reproduce the same stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import rng

# Singular values below this fraction of the largest are treated as zero
# when computing ranks, growth constants, and solution-set projections.
RANK_TOLERANCE = 1e-10

_REFERENCE_GRAD_NORM = 1e-12


@dataclass(frozen=True)
class SmoothSum:
    """Average of n smooth components: F(x) = (1/n) sum_i f_i(x).

    families:
      least-squares  f_i(x) = (a_i^T x - b_i)^2 / 2
      logistic       f_i(x) = log(1 + exp(-b_i a_i^T x)), b_i in {-1, +1}

    L_i is the per-component gradient Lipschitz constant (||a_i||^2 for
    least squares, ||a_i||^2 / 4 for logistic); L = (1/n) sum_i L_i upper
    bounds the smoothness of F.  mu is the strong-convexity constant of F
    (0 when absent); growth is the quadratic functional-growth constant,
    taken for least squares as the smallest nonzero eigenvalue of A^T A / n.
    """

    family: str
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.family not in ("least-squares", "logistic"):
            raise ValueError(f"unknown family {self.family!r}")
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
            raise ValueError("A must be n x d with b of length n")
        if self.family == "logistic" and not np.all(np.abs(b) == 1.0):
            raise ValueError("logistic labels must be +-1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @cached_property
    def component_lipschitz(self) -> np.ndarray:
        norms = np.sum(self.A * self.A, axis=1)
        return norms if self.family == "least-squares" else norms / 4.0

    @property
    def L(self) -> float:
        return float(np.mean(self.component_lipschitz))

    @cached_property
    def _svd(self):
        return np.linalg.svd(self.A, full_matrices=False)

    @cached_property
    def _rank_mask(self) -> np.ndarray:
        svals = self._svd[1]
        if svals.size == 0 or svals[0] == 0.0:
            return np.zeros_like(svals, dtype=bool)
        return svals > RANK_TOLERANCE * svals[0]

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self._rank_mask))

    @cached_property
    def mu(self) -> float:
        """Strong convexity of F; zero for logistic and rank-deficient LS."""
        if self.family != "least-squares":
            return 0.0
        if self.rank < self.d:
            return 0.0
        svals = self._svd[1]
        return float(svals[-1] ** 2 / self.n)

    @cached_property
    def growth(self) -> float | None:
        """Quadratic functional-growth constant (least squares only)."""
        if self.family != "least-squares":
            return None
        svals = self._svd[1][self._rank_mask]
        if svals.size == 0:
            return None
        return float(np.min(svals) ** 2 / self.n)

    # -- evaluations --------------------------------------------------------

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        z = self.A @ x
        if self.family == "least-squares":
            res = z - self.b
            return float(res @ res) / (2.0 * self.n)
        return float(np.sum(np.logaddexp(0.0, -self.b * z))) / self.n

    def component_value(self, i: int, x: np.ndarray) -> float:
        self._check_index(i)
        z = float(self.A[i] @ x)
        if self.family == "least-squares":
            return 0.5 * (z - self.b[i]) ** 2
        return float(np.logaddexp(0.0, -self.b[i] * z))

    def component_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        self._check_index(i)
        a = self.A[i]
        z = float(a @ x)
        if self.family == "least-squares":
            return a * (z - self.b[i])
        return -self.b[i] * float(expit(-self.b[i] * z)) * a

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = self.A @ x
        if self.family == "least-squares":
            return self.A.T @ (z - self.b) / self.n
        weights = -self.b * expit(-self.b * z)
        return self.A.T @ weights / self.n

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range [0, {self.n})")

    # -- reference solutions ------------------------------------------------

    @cached_property
    def solution(self) -> np.ndarray:
        """Reference minimizer of F (min-norm one when the set is affine).

        Logistic instances have no closed form; the reference is computed
        once by a quasi-Newton warm start followed by plain proximal-gradient
        steps until the gradient norm falls below 1e-12, then frozen.
        """
        if self.family == "least-squares":
            U, svals, Vt = self._svd
            inv = np.where(self._rank_mask, 1.0 / np.where(svals == 0, 1.0, svals), 0.0)
            return Vt.T @ (inv * (U.T @ self.b))
        x = minimize(
            self.value,
            np.zeros(self.d),
            jac=self.full_gradient,
            method="L-BFGS-B",
            tol=1e-14,
            options={"maxiter": 5000},
        ).x
        gamma = 1.0 / self.L
        for _ in range(500_000):
            grad = self.full_gradient(x)
            if float(np.linalg.norm(grad)) <= _REFERENCE_GRAD_NORM:
                return x
            x = x - gamma * grad
        raise RuntimeError("reference solution did not reach the target gradient norm")

    @cached_property
    def optimal_value(self) -> float:
        return self.value(self.solution)

    def projection_solution_set(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection onto {x : A^T (A x - b) = 0} (least squares).

        The solution set is the min-norm solution plus the null space of A;
        singular directions below the rank tolerance count as null.
        """
        if self.family != "least-squares":
            raise ValueError("unsupported-problem: projection needs least-squares")
        x = np.asarray(x, dtype=np.float64)
        Vt = self._svd[2][self._rank_mask]
        base = self.solution
        diff = x - base
        return base + diff - Vt.T @ (Vt @ diff)


def component_gradient(problem: SmoothSum, i: int, x) -> np.ndarray:
    return problem.component_gradient(i, np.asarray(x, dtype=np.float64))


def full_gradient(problem: SmoothSum, x) -> np.ndarray:
    return problem.full_gradient(x)


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Regularizer:
    """Separable regularizer R.

    kinds: none; l1 (lam ||x||_1); sq-l2 ((lam/2) ||x||^2); box (indicator of
    [lo, hi], +inf outside); elastic (lam ||x||_1 + (lam2/2) ||x||^2).
    """

    kind: str
    lam: float = 0.0
    lam2: float = 0.0
    lo: object = None
    hi: object = None

    def __post_init__(self):
        if self.kind not in ("none", "l1", "sq-l2", "box", "elastic"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0 or self.lam2 < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.kind == "box":
            lo = np.asarray(self.lo, dtype=np.float64)
            hi = np.asarray(self.hi, dtype=np.float64)
            if np.any(lo > hi):
                raise ValueError("box needs lo <= hi")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "none":
            return 0.0
        if self.kind == "l1":
            return self.lam * float(np.sum(np.abs(x)))
        if self.kind == "sq-l2":
            return 0.5 * self.lam * float(x @ x)
        if self.kind == "box":
            if np.any(x < self.lo) or np.any(x > self.hi):
                return math.inf
            return 0.0
        return self.lam * float(np.sum(np.abs(x))) + 0.5 * self.lam2 * float(x @ x)

    def prox(self, gamma: float, x) -> np.ndarray:
        """prox_{gamma R}(x) = argmin_u (1/2)||u - x||^2 + gamma R(u)."""
        if gamma <= 0:
            raise ValueError("prox needs gamma > 0")
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.kind == "none":
            return x.copy()
        if self.kind == "l1":
            return _soft_threshold(x, gamma * self.lam)
        if self.kind == "sq-l2":
            return x / (1.0 + gamma * self.lam)
        if self.kind == "box":
            return np.clip(x, self.lo, self.hi)
        # elastic: shrink then scale
        return _soft_threshold(x, gamma * self.lam) / (1.0 + gamma * self.lam2)

    def subgradient_at_prox(self, gamma: float, x, u) -> np.ndarray:
        """Closed-form selection g in dR(u) certifying u = prox(gamma, x).

        The optimality condition is u - x + gamma g = 0; the selection picks
        the subgradient (or normal-cone element for box) nearest (x-u)/gamma.
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        candidate = (x - u) / gamma
        if self.kind == "none":
            return np.zeros_like(u)
        if self.kind == "sq-l2":
            return self.lam * u
        if self.kind == "box":
            g = np.zeros_like(u)
            at_lo = u <= self.lo
            at_hi = u >= self.hi
            g[at_lo] = np.minimum(candidate[at_lo], 0.0)
            g[at_hi] = np.maximum(candidate[at_hi], 0.0)
            return g
        if self.kind == "l1":
            return _l1_selection(u, candidate, self.lam)
        return _l1_selection(u, candidate - self.lam2 * u, self.lam) + self.lam2 * u


def _soft_threshold(x: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def _l1_selection(u: np.ndarray, candidate: np.ndarray, lam: float) -> np.ndarray:
    g = np.where(u != 0.0, lam * np.sign(u), np.clip(candidate, -lam, lam))
    return g


def no_regularizer() -> Regularizer:
    return Regularizer(kind="none")


def l1(lam: float) -> Regularizer:
    return Regularizer(kind="l1", lam=lam)


def sq_l2(lam: float) -> Regularizer:
    return Regularizer(kind="sq-l2", lam=lam)


def box(lo, hi) -> Regularizer:
    return Regularizer(kind="box", lo=lo, hi=hi)


def elastic(lam1: float, lam2: float) -> Regularizer:
    return Regularizer(kind="elastic", lam=lam1, lam2=lam2)


def prox(reg: Regularizer, gamma: float, x) -> np.ndarray:
    return reg.prox(gamma, x)


def prox_residual(reg: Regularizer, gamma: float, x) -> float:
    """||u - x + gamma g|| for u = prox(gamma, x) and the selected g."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    u = reg.prox(gamma, x)
    g = reg.subgradient_at_prox(gamma, x, u)
    return float(np.linalg.norm(u - x + gamma * g))


def objective(problem: SmoothSum, reg: Regularizer, x) -> float:
    """P(x) = F(x) + R(x); +inf signals a violated box indicator."""
    r = reg.value(x)
    if math.isinf(r):
        return math.inf
    return problem.value(np.asarray(x, dtype=np.float64)) + r


def projection_solution_set(problem: SmoothSum, x) -> np.ndarray:
    return problem.projection_solution_set(x)


# ---------------------------------------------------------------------------
# Stochastic oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StochasticOracle:
    """Unbiased gradient oracle addressed by (seed, draw counter).

    additive-gaussian: full gradient plus isotropic Gaussian noise with total
    variance sigma^2 (per coordinate sigma^2 / d), making variance-based
    acceptance bounds sharp.  finite-sum-sampling: gradient of one component
    chosen uniformly; its variance is instance-dependent and not enforced.
    """

    base: SmoothSum
    noise: str = "additive-gaussian"
    sigma: float = 0.0
    seed: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self):
        if self.noise not in ("additive-gaussian", "finite-sum-sampling"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "_key", rng.split(self.seed, "stochastic-oracle"))

    def stochastic_gradient(self, x, draw: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.noise == "finite-sum-sampling":
            i = rng.randint(self._key, draw, self.base.n)
            return self.base.component_gradient(i, x)
        grad = self.base.full_gradient(x)
        if self.sigma == 0.0:
            return grad
        d = self.base.d
        z = rng.normal_block(rng.subkey(self._key, draw), d)
        return grad + (self.sigma / math.sqrt(d)) * z


def stochastic_gradient(oracle: StochasticOracle, x, draw: int) -> np.ndarray:
    return oracle.stochastic_gradient(x, draw)


# ---------------------------------------------------------------------------
# Instance generators and serialization
# ---------------------------------------------------------------------------


def make_least_squares(
    n: int, d: int, seed: int, rank: int | None = None, noise: float = 0.1
) -> SmoothSum:
    """Deterministic least-squares instance addressed by (n, d, seed).

    With rank r < min(n, d) the design matrix is a product of r-column
    factors, so the solution set is a (d - r)-dimensional affine set.
    """
    key = rng.split(seed, f"least-squares-{n}-{d}")
    if rank is None:
        A = rng.normal_block(rng.split(key, "matrix"), n * d).reshape(n, d)
    else:
        if not 1 <= rank <= min(n, d):
            raise ValueError("rank must lie in [1, min(n, d)]")
        left = rng.normal_block(rng.split(key, "left"), n * rank).reshape(n, rank)
        right = rng.normal_block(rng.split(key, "right"), rank * d).reshape(rank, d)
        A = left @ right / math.sqrt(rank)
    target = rng.normal_block(rng.split(key, "target"), d)
    b = A @ target + noise * rng.normal_block(rng.split(key, "noise"), n)
    return SmoothSum(family="least-squares", A=A, b=b)


def make_logistic(n: int, d: int, seed: int, margin_noise: float = 2.0) -> SmoothSum:
    """Deterministic logistic instance; label noise keeps classes overlapping
    so the minimizer is finite."""
    key = rng.split(seed, f"logistic-{n}-{d}")
    A = rng.normal_block(rng.split(key, "matrix"), n * d).reshape(n, d)
    target = rng.normal_block(rng.split(key, "target"), d)
    scores = A @ target + margin_noise * rng.normal_block(rng.split(key, "flip"), n)
    labels = np.where(scores >= 0.0, 1.0, -1.0)
    return SmoothSum(family="logistic", A=A, b=labels)


def make_instance(family: str, n: int, d: int, seed: int, **kwargs) -> SmoothSum:
    if family == "least-squares":
        return make_least_squares(n, d, seed, **kwargs)
    if family == "logistic":
        return make_logistic(n, d, seed, **kwargs)
    raise ValueError(f"unknown family {family!r}")


def problem_to_text(problem: SmoothSum) -> str:
    lines = [
        f"family = {problem.family}",
        f"n = {problem.n}",
        f"d = {problem.d}",
    ]
    for i in range(problem.n):
        row = ",".join(repr(float(v)) for v in problem.A[i])
        lines.append(f"row {i} = {row}")
    lines.append("b = " + ",".join(repr(float(v)) for v in problem.b))
    return "\n".join(lines) + "\n"


def problem_from_text(text: str) -> SmoothSum:
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(" = ")
        entries[key] = value
    family = entries["family"]
    n = int(entries["n"])
    d = int(entries["d"])
    A = np.empty((n, d))
    for i in range(n):
        A[i] = [float(cell) for cell in entries[f"row {i}"].split(",")]
    b = np.array([float(cell) for cell in entries["b"].split(",")])
    return SmoothSum(family=family, A=A, b=b)
