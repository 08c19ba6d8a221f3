"""Iteration families wired to the Lyapunov series their guarantees control.

Five simulators share one result shape: delayed full-gradient descent,
proximal gradient, the aggregated-gradient proximal method (serial cyclic or
parameter-server order), delay-adaptive stochastic gradient descent, and the
randomized / totally asynchronous block fixed-point iterations.  Each run
records a Trace whose columns are exactly the series its recursion
constrains, the closed-form bound sequence of the matching convergence
statement, and a verdict comparing the bounded quantity against that
sequence.

Conventions shared by every simulator:

- a horizon K produces K+1 trace rows (k = 0..K) and simulates one step past
  the horizon so that W_K = ||x_{K+1} - x_K||^2 style columns are complete;
- delay columns always record realized information ages, clipped to [0, k];
- deterministic runs are compared with relative slack REL_SLACK, stochastic
  seed-averages with the Monte Carlo factor MONTE_CARLO_FACTOR on the bound;
- sum-form coefficient schedules whose source inequality sums the delayed
  window only to k-1 are rewritten to the canonical window (inclusive of k)
  by folding the extra p W_k term into r; the wired r already contains it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .certificates import (
    ABS_FLOOR,
    REL_SLACK,
    BoundedDelayRecursion,
    CoupledRecursion,
    GrowthDelaySpec,
    RateCertificate,
    Trace,
    Verdict,
    _gap_stats,
    _leq,
    bounded_delay_rate,
    coupled_admissible,
    growing_delay_bound,
    growing_delay_eta,
    verify_trace,
)
from .delays import (
    AgentSchedule,
    DelaySchedule,
    SharedMemoryModel,
    WorkerModel,
    realize,
    realize_agents,
    schedule_stats,
)
from .operators import (
    FixedPointOperator,
    Partition,
    block_max_norm,
    prox_grad_operator,
)
from .problems import (
    Regularizer,
    SmoothSum,
    StochasticOracle,
    no_regularizer,
    objective,
    projection_solution_set,
)

MONTE_CARLO_FACTOR = 1.1
MIN_STOCHASTIC_SEEDS = 50
ITERATE_KEEP = 1000

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSizePolicy:
    """Constant step size, or the delay-adaptive rule that drops gradients.

    kind "constant" always applies gamma; kind "delay-adaptive" applies gamma
    when the realized delay satisfies tau_k <= tau_th and 0 otherwise.
    """

    kind: str
    gamma: float
    tau_th: int | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "delay-adaptive"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError("invalid-gamma: gamma must be positive and finite")
        if self.kind == "delay-adaptive":
            if self.tau_th is None or self.tau_th < 0 or int(self.tau_th) != self.tau_th:
                raise ValueError("delay-adaptive policy needs integer tau_th >= 0")
            object.__setattr__(self, "tau_th", int(self.tau_th))
        elif self.tau_th is not None:
            raise ValueError("constant policy takes no tau_th")

    def gamma_at(self, tau: int) -> float:
        if self.kind == "constant" or tau <= self.tau_th:
            return self.gamma
        return 0.0


@dataclass(frozen=True)
class RunResult:
    """One simulated run: trace, matching bound sequence, and verdict.

    bound, when present, has one entry per trace row and caps the quantity
    named by metadata["bound_on"]; verdict is the pointwise comparison of
    that quantity against the bound (None when no finite bound applies).
    The recursion field carries the coefficient schedule the trace is wired
    to; its pointwise check lives in metadata["recursion_verdict"].
    """

    trace: Trace
    bound: np.ndarray | None
    verdict: Verdict | None
    recursion: object | None
    metadata: dict
    iterates: np.ndarray | None = None
    iterate_steps: np.ndarray | None = None
    per_seed: tuple | None = None

    def __post_init__(self):
        if self.bound is not None:
            bound = np.asarray(self.bound, dtype=float)
            if len(bound) != self.trace.length:
                raise ValueError("bound sequence length must match the trace")
            object.__setattr__(self, "bound", bound)


def _realize_delays(schedule, K: int) -> np.ndarray:
    if isinstance(schedule, DelaySchedule):
        return realize(schedule, K)
    if isinstance(schedule, WorkerModel):
        return schedule.realize(K).delays
    if isinstance(schedule, (int, np.integer)):
        if schedule < 0:
            raise ValueError("constant delay must be non-negative")
        return np.minimum(np.arange(K + 1), int(schedule)).astype(np.int64)
    delays = np.asarray(schedule, dtype=np.int64)
    if delays.shape != (K + 1,):
        raise ValueError("delay array must have one entry per step k = 0..K")
    k = np.arange(K + 1)
    if np.any(delays < 0) or np.any(delays > k):
        raise ValueError("delays must satisfy 0 <= tau_k <= k")
    return delays


def _thin_steps(K: int) -> np.ndarray:
    stride = max(1, math.ceil(K / ITERATE_KEEP)) if K > 0 else 1
    steps = list(range(0, K + 1, stride))
    if steps[-1] != K:
        steps.append(K)
    return np.asarray(steps, dtype=np.int64)


def _thin_iterates(history: np.ndarray, K: int):
    steps = _thin_steps(K)
    return history[steps].copy(), steps


def _compare_to_bound(series, bound, rel: float, check: str) -> Verdict:
    """Pointwise series[k] <= bound[k] with relative slack rel.

    NaN entries in the series (undefined points, e.g. before the first
    applied step) and infinite bound entries are skipped.
    """
    series = np.asarray(series, dtype=float)
    bound = np.asarray(bound, dtype=float)
    max_gap = 0.0
    for k in range(len(series)):
        v = float(series[k])
        b = float(bound[k])
        if math.isnan(v) or math.isinf(b):
            continue
        if not _leq(v, b, rel, ABS_FLOOR):
            return Verdict(False, first_violation=k, lhs=v, rhs=b, check=check)
        max_gap = max(max_gap, _gap_stats(v, b))
    return Verdict(True, check=check, max_rel_gap=max_gap)


def _reference_point(problem: SmoothSum, x0: np.ndarray) -> np.ndarray:
    """Anchor x* for distance columns: the solution-set projection of x0
    where a solution set exists (least squares), else the unique minimizer."""
    try:
        if problem.family == "least-squares":
            return projection_solution_set(problem, x0)
        return problem.solution
    except Exception as exc:  # pragma: no cover - generator problems always solve
        raise ValueError(f"missing-solution: {exc}") from exc


def _composite_reference(problem, reg, x0):
    """(x*, P*) for F + R: closed form when R is absent, prox-grad fixed
    point when strong convexity makes it reachable."""
    if reg is None or reg.kind == "none":
        xstar = _reference_point(problem, x0)
        return xstar, problem.optimal_value
    if problem.mu > 0:
        op = prox_grad_operator(problem, reg)
        xstar = op.fixed_point()
        return xstar, objective(problem, reg, xstar)
    raise ValueError(
        "missing-solution: composite reference needs strong convexity or no regularizer"
    )


def _values_batch(problem: SmoothSum, X: np.ndarray) -> np.ndarray:
    R = X @ problem.A.T
    if problem.family == "least-squares":
        return 0.5 * np.mean((R - problem.b) ** 2, axis=1)
    margins = problem.b * R
    return np.mean(np.logaddexp(0.0, -margins), axis=1)


def _full_gradients_batch(problem: SmoothSum, X: np.ndarray) -> np.ndarray:
    from scipy.special import expit

    R = X @ problem.A.T
    if problem.family == "least-squares":
        return ((R - problem.b) / problem.n) @ problem.A
    margins = problem.b * R
    return ((-problem.b * expit(-margins)) / problem.n) @ problem.A


def _row_sq_norms(X: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", X, X)


def _block_max_norm_rows(X: np.ndarray, partition: Partition) -> np.ndarray:
    sq = X**2
    per_block = np.add.reduceat(sq, partition.offsets[:-1], axis=1)
    weighted = np.sqrt(per_block) * np.asarray(partition.weights)
    return np.max(weighted, axis=1)


# ---------------------------------------------------------------------------
# Delayed full-gradient descent
# ---------------------------------------------------------------------------


def delayed_gd(problem, gamma, schedule, K, v_def="sq-dist", x0=None):
    """x_{k+1} = x_k - gamma * grad f(x_{k - tau_k}).

    v_def "sq-dist" wires the max-window recursion on V_k = ||x_k - x*||^2
    with q = 1 - 2 gamma mu L / (mu + L), p = gamma^4 L^4 tau^2
    + 2 gamma^2 L^2 tau and window width 2 tau; it requires mu > 0 and
    gamma in (0, 2/(mu+L)].  v_def "fn-gap" wires the sum form with
    X_k = 2 gamma (f(x_k) - f*), W_k the squared norm of the gradient
    actually applied, unit q, p = gamma^3 L tau and
    r = gamma (1/L - gamma) + p; it requires gamma in (0, 1/L].
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if v_def not in ("sq-dist", "fn-gap"):
        raise ValueError(f"unknown v_def {v_def!r}")
    L = problem.L
    mu = problem.mu
    if v_def == "sq-dist":
        if mu <= 0:
            raise ValueError("unsupported-problem: sq-dist form needs mu > 0")
        if not 0 < gamma <= 2.0 / (mu + L):
            raise ValueError("invalid-gamma: need 0 < gamma <= 2/(mu+L)")
    else:
        if not 0 < gamma <= 1.0 / L:
            raise ValueError("invalid-gamma: need 0 < gamma <= 1/L")
    delays = _realize_delays(schedule, K)
    d = problem.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    xstar = _reference_point(problem, x0)
    fstar = problem.optimal_value

    history = np.empty((K + 2, d))
    history[0] = x0
    for k in range(K + 1):
        stale = history[k - delays[k]]
        history[k + 1] = history[k] - gamma * problem.full_gradient(stale)

    V = _row_sq_norms(history[: K + 1] - xstar)
    tau = int(delays.max())
    stats = schedule_stats(delays)
    metadata = {
        "algorithm": "delayed-gd",
        "v_def": v_def,
        "gamma": float(gamma),
        "tau": tau,
        "tau_ave": stats.tau_ave,
        "tau_max": stats.tau_max,
        "fstar": fstar,
        "bound_on": "V",
    }

    if v_def == "sq-dist":
        q = 1.0 - 2.0 * gamma * mu * L / (mu + L)
        p = gamma**4 * L**4 * tau**2 + 2.0 * gamma**2 * L**2 * tau
        rec = BoundedDelayRecursion(q=q, p=p, tau=2 * tau)
        trace = Trace(V=V, delays=delays)
        bound = None
        verdict = None
        if rec.admissible:
            rho = bounded_delay_rate(rec).rho
            bound = V[0] * rho ** np.arange(K + 1)
            verdict = _compare_to_bound(V, bound, REL_SLACK, "geometric-envelope")
            metadata["rho"] = rho
        metadata["q"] = q
        metadata["p"] = p
    else:
        stale_rows = history[np.arange(K + 1) - delays]
        grads = _full_gradients_batch(problem, stale_rows)
        W = _row_sq_norms(grads)
        gaps = np.maximum(_values_batch(problem, history[: K + 1]) - fstar, 0.0)
        X = 2.0 * gamma * gaps
        p = gamma**3 * L * tau
        r = gamma * (1.0 / L - gamma) + p
        rec = CoupledRecursion(flavor="unit-q", tau=tau, q=1.0, p=p, r=r, e=0.0)
        trace = Trace(
            V=V,
            delays=delays,
            W=W,
            X=X,
            e=np.zeros(K + 1),
            step_sizes=np.full(K + 1, float(gamma)),
        )
        bound = None
        verdict = None
        if coupled_admissible(rec, K):
            bound = np.full(K + 1, V[0])
            verdict = _compare_to_bound(V, bound, REL_SLACK, "telescoped-bound")
        metadata["p"] = p
        metadata["r"] = r
        metadata["gaps"] = gaps

    metadata["recursion_verdict"] = verify_trace(trace, rec, window="declared")
    iterates, steps = _thin_iterates(history, K)
    return RunResult(
        trace=trace,
        bound=bound,
        verdict=verdict,
        recursion=rec,
        metadata=metadata,
        iterates=iterates,
        iterate_steps=steps,
    )


# ---------------------------------------------------------------------------
# Proximal gradient
# ---------------------------------------------------------------------------


def pg(problem, gamma, K, reg=None, x0=None):
    """Full-gradient proximal step x_{k+1} = prox_{gamma R}(x_k - gamma grad F).

    Trace V_k is the composite gap P(x_k) - P*; the bound sequence is
    ||x_0 - x*||^2 / (2 gamma k), whose gamma = 1/L instance is the stated
    L ||x_0 - x*||^2 / (2k) guarantee.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    L = problem.L
    if not 0 < gamma <= 1.0 / L:
        raise ValueError("invalid-gamma: need 0 < gamma <= 1/L")
    reg = no_regularizer() if reg is None else reg
    d = problem.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    xstar, pstar = _composite_reference(problem, reg, x0)

    history = np.empty((K + 2, d))
    history[0] = x0
    for k in range(K + 1):
        step = history[k] - gamma * problem.full_gradient(history[k])
        history[k + 1] = reg.prox(gamma, step) if reg.kind != "none" else step

    values = np.array([objective(problem, reg, history[k]) for k in range(K + 1)])
    gaps = np.maximum(values - pstar, 0.0)
    dist0_sq = float(np.sum((x0 - xstar) ** 2))
    trace = Trace(V=gaps, delays=np.zeros(K + 1, dtype=np.int64))
    ks = np.arange(K + 1, dtype=float)
    with np.errstate(divide="ignore"):
        bound = np.where(ks > 0, dist0_sq / (2.0 * gamma * ks), math.inf)
    verdict = _compare_to_bound(gaps, bound, REL_SLACK, "pg-bound")
    iterates, steps = _thin_iterates(history, K)
    metadata = {
        "algorithm": "pg",
        "gamma": float(gamma),
        "dist0_sq": dist0_sq,
        "pstar": pstar,
        "bound_on": "gap",
    }
    return RunResult(
        trace=trace,
        bound=bound,
        verdict=verdict,
        recursion=None,
        metadata=metadata,
        iterates=iterates,
        iterate_steps=steps,
    )


# ---------------------------------------------------------------------------
# Aggregated-gradient proximal method
# ---------------------------------------------------------------------------


def piag_gamma_max(L: float, tau: int) -> float:
    """Largest admissible step 1 / (L (2 tau + 1)) for the sublinear bound."""
    if L <= 0:
        raise ValueError("L must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return 1.0 / (L * (2 * tau + 1))


def piag_sublinear_bound(k, gamma, tau, gap0, dist0_sq):
    """(dist0_sq / (2 gamma) + tau gap0) / (k + tau); +inf at k + tau = 0."""
    denom = k + tau
    if denom <= 0:
        return math.inf
    return (dist0_sq / (2.0 * gamma) + tau * gap0) / denom


def piag_epsilon_horizon(gamma, tau, gap0, dist0_sq, epsilon):
    """Steps until the sublinear bound reaches epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return (dist0_sq / (2.0 * gamma) + tau * gap0) / epsilon - tau


def piag_linear_rate(h: float, Q: float, tau: int) -> float:
    """1 - 1 / (1 + (Q+1)(2 tau + 1)/h) for h in (0, 1], Q >= 1."""
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    if Q < 1:
        raise ValueError("Q must be at least 1")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return 1.0 - 1.0 / (1.0 + (Q + 1.0) * (2 * tau + 1) / h)


def piag(
    problem,
    gamma,
    K,
    order="cyclic",
    reg=None,
    x0=None,
    certificate="sublinear",
    worker_model=None,
):
    """Aggregated-gradient proximal iteration with a stored-gradient table.

    The table holds one gradient per component, initialized at x_0.  Each
    step refreshes one entry (the current iterate's gradient under cyclic
    order; the dispatched iterate's gradient when a worker model supplies
    arrival order) and applies the prox step to the table average.

    certificate "sublinear" wires the unit-q sum form on
    V_k = 2 gamma alpha_k (P(x_k) - P*) + ||x_k - x*||^2 with alpha_k = k +
    tau, p_k = gamma L (alpha_k + tau + 1), r_k = 2 alpha_k + 1 - gamma L tau
    alpha_k, and compares the composite gap against
    (dist0^2/(2 gamma) + tau gap0) / (k + tau).  certificate "linear" needs a
    quadratic-growth constant; it wires the contractive form on
    V_k = (2/L)(P(x_k) - P*) + dist^2(x_k) with q = 1/(1 + gamma mu_g theta),
    p = (1 + gamma L (tau+1)) q, r = (2/(gamma L) + 1 - tau) q, and compares
    both displayed decay bounds at rate piag_linear_rate.
    """
    if gamma <= 0:
        raise ValueError("invalid-gamma: gamma must be positive")
    if K < 1:
        raise ValueError("K must be at least 1")
    if order not in ("cyclic", "server"):
        raise ValueError(f"unknown order {order!r}")
    if certificate not in ("sublinear", "linear"):
        raise ValueError(f"unknown certificate {certificate!r}")
    reg = no_regularizer() if reg is None else reg
    n = problem.n
    d = problem.d
    L = problem.L
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    xstar, pstar = _composite_reference(problem, reg, x0)

    if order == "server":
        model = worker_model or WorkerModel(workers=n)
        if model.workers != n:
            raise ValueError("worker model must have one worker per component")
        arrivals = model.realize(K)
        comp = arrivals.worker_ids
        dispatch_ages = arrivals.delays

    table = np.stack([problem.component_gradient(i, x0) for i in range(n)])
    stale_step = np.zeros(n, dtype=np.int64)
    history = np.empty((K + 2, d))
    history[0] = x0
    delays = np.empty(K + 1, dtype=np.int64)
    for k in range(K + 1):
        if order == "cyclic":
            j = k % n
            fresh = problem.component_gradient(j, history[k])
            stale_step[j] = k
        else:
            j = int(comp[k])
            read = k - int(dispatch_ages[k])
            fresh = problem.component_gradient(j, history[read])
            stale_step[j] = read
        table[j] = fresh
        # Re-aggregate instead of adding fresh - old: the sum then equals the
        # table exactly, and the n = 1 run collapses to pg bit for bit.
        delays[k] = k - int(stale_step.min())
        step = history[k] - (gamma / n) * table.sum(axis=0)
        history[k + 1] = reg.prox(gamma, step) if reg.kind != "none" else step

    tau = n - 1 if order == "cyclic" else int(delays.max())
    values = np.array([objective(problem, reg, history[k]) for k in range(K + 1)])
    gaps = np.maximum(values - pstar, 0.0)
    gap0 = float(gaps[0])
    dist_to_star_sq = _row_sq_norms(history[: K + 1] - xstar)
    W = _row_sq_norms(np.diff(history, axis=0)[: K + 1])
    stats = schedule_stats(delays)
    metadata = {
        "algorithm": "piag",
        "order": order,
        "certificate": certificate,
        "gamma": float(gamma),
        "tau": tau,
        "tau_ave": stats.tau_ave,
        "tau_max": stats.tau_max,
        "gamma_max": piag_gamma_max(L, tau),
        "pstar": pstar,
        "gap0": gap0,
        "gaps": gaps,
    }

    if certificate == "sublinear":
        alpha = np.arange(K + 1, dtype=float) + tau
        V = 2.0 * gamma * alpha * gaps + dist_to_star_sq
        p_seq = gamma * L * (alpha + tau + 1.0)
        r_seq = 2.0 * alpha + 1.0 - gamma * L * tau * alpha
        rec = CoupledRecursion(flavor="unit-q", tau=tau, q=1.0, p=p_seq, r=r_seq, e=0.0)
        dist0_sq = float(dist_to_star_sq[0])
        bound = np.array(
            [piag_sublinear_bound(k, gamma, tau, gap0, dist0_sq) for k in range(K + 1)]
        )
        verdict = _compare_to_bound(gaps, bound, REL_SLACK, "sublinear-bound")
        metadata["alpha0"] = float(tau)
        metadata["dist0_sq"] = dist0_sq
        metadata["bound_on"] = "gap"
        metadata["epsilon_horizon_1e-3"] = piag_epsilon_horizon(
            gamma, tau, gap0, dist0_sq, 1e-3
        )
    else:
        mu_g = problem.growth
        if mu_g is None or mu_g <= 0:
            raise ValueError("unsupported-problem: growth certificate needs a growth constant")
        Qcond = L / mu_g
        theta = Qcond / (Qcond + 1.0)
        h = gamma * L * (2 * tau + 1)
        if not 0 < h <= 1:
            raise ValueError("invalid-gamma: growth certificate needs gamma*L*(2tau+1) in (0,1]")
        projections = np.empty_like(history[: K + 1])
        for k in range(K + 1):
            projections[k] = projection_solution_set(problem, history[k])
        dist_sq = _row_sq_norms(history[: K + 1] - projections)
        V = (2.0 / L) * gaps + dist_sq
        q = 1.0 / (1.0 + gamma * mu_g * theta)
        p = (1.0 + gamma * L * (tau + 1.0)) * q
        r = (2.0 / (gamma * L) + 1.0 - tau) * q
        if r <= 0:
            raise ValueError("invalid-gamma: growth certificate needs 2/(gamma L) + 1 > tau")
        rec = CoupledRecursion(
            flavor="contractive", tau=tau, q=q, p=p, r=r, e=0.0, q_lower=q
        )
        rho = piag_linear_rate(h, Qcond, tau)
        d0_sq = float(dist_sq[0])
        powers = rho ** np.arange(K + 1)
        bound = powers * ((2.0 / L) * gap0 + d0_sq)
        gap_bound = powers * (gap0 + (L / 2.0) * d0_sq)
        dist_verdict = _compare_to_bound(dist_sq, bound, REL_SLACK, "dist-decay")
        gap_verdict = _compare_to_bound(gaps, gap_bound, REL_SLACK, "gap-decay")
        verdict = dist_verdict if not dist_verdict.passed else gap_verdict
        if dist_verdict.passed and gap_verdict.passed:
            verdict = Verdict(
                True,
                check="linear-bounds",
                max_rel_gap=max(dist_verdict.max_rel_gap, gap_verdict.max_rel_gap),
            )
        metadata.update(
            {
                "Q": Qcond,
                "theta": theta,
                "h": h,
                "rho": rho,
                "dist_sq": dist_sq,
                "dist0_sq_set": d0_sq,
                "gap_bound": gap_bound,
                "dist_verdict": dist_verdict,
                "gap_verdict": gap_verdict,
                "bound_on": "dist-sq",
            }
        )

    trace = Trace(
        V=V,
        delays=delays,
        W=W,
        X=np.zeros(K + 1),
        e=np.zeros(K + 1),
        step_sizes=np.full(K + 1, float(gamma)),
    )
    metadata["recursion_verdict"] = verify_trace(trace, rec, window="declared")
    iterates, steps = _thin_iterates(history, K)
    return RunResult(
        trace=trace,
        bound=bound,
        verdict=verdict,
        recursion=rec,
        metadata=metadata,
        iterates=iterates,
        iterate_steps=steps,
    )


def piag_gap_at(problem, gamma, k, reg=None, x0=None):
    """Composite gap of the cyclic aggregated-gradient run at step k.

    Far-horizon companion to piag: one cyclic pass over a least-squares
    objective (with no regularizer or the quadratic one, both of which keep
    every step affine) is an affine map on the state (x, residual table).
    The map is raised to the required power, so the cost is logarithmic in k
    instead of linear.  Values agree with the step-by-step run to floating
    precision.
    """
    if problem.family != "least-squares":
        raise ValueError("unsupported-problem: far-horizon evaluation needs least squares")
    reg = no_regularizer() if reg is None else reg
    if reg.kind not in ("none", "sq-l2"):
        raise ValueError("unsupported-problem: far-horizon evaluation needs an affine prox")
    if gamma <= 0:
        raise ValueError("invalid-gamma: gamma must be positive")
    if k < 0:
        raise ValueError("step index must be non-negative")
    A = problem.A
    b = problem.b
    n, d = A.shape
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    if reg.kind == "none":
        pstar = problem.optimal_value
        scale = 1.0
    else:
        lam = reg.lam
        xstar = np.linalg.solve(A.T @ A / n + lam * np.eye(d), A.T @ b / n)
        pstar = problem.value(xstar) + reg.value(xstar)
        scale = 1.0 / (1.0 + gamma * lam)

    dim = d + n + 1
    # x' = scale (x - (gamma/n) A^T r) on homogeneous state (x, r, 1).
    apply_x = np.eye(dim)
    apply_x[:d, :d] = scale * np.eye(d)
    apply_x[:d, d : d + n] = -scale * (gamma / n) * A.T
    steps = []
    for j in range(n):
        refresh = np.eye(dim)
        refresh[d + j] = 0.0
        refresh[d + j, :d] = A[j]
        refresh[d + j, -1] = -b[j]
        steps.append(apply_x @ refresh)
    cycle = np.eye(dim)
    for j in range(n):
        cycle = steps[j] @ cycle

    state = np.concatenate([x0, A @ x0 - b, [1.0]])
    full, rem = divmod(k, n)
    if full > 0:
        state = np.linalg.matrix_power(cycle, full) @ state
    for j in range(rem):
        state = steps[j] @ state
    x = state[:d]
    value = problem.value(x) if reg.kind == "none" else problem.value(x) + reg.value(x)
    return max(value - pstar, 0.0)


# ---------------------------------------------------------------------------
# Delay-adaptive stochastic gradient descent
# ---------------------------------------------------------------------------


def sgd_gamma(
    mode,
    L,
    tau_th,
    sigma=0.0,
    epsilon=None,
    mu=None,
    dist0=None,
    horizon=None,
):
    """Closed-form step sizes for the adaptive rule with threshold tau_th.

    Modes: "convex-max" and "sconvex-max" are the largest admissible steps
    1/(L(tau_th sqrt(2) + 1)) and 1/(L(2 tau_th + 1)); the -eps forms cap
    them so the noise floor meets a target epsilon; the -horizon forms tune
    gamma to a fixed step budget (horizon = K) from ||x_0 - x*|| = dist0.
    With sigma = 0 every cap is infinite and the -max value is returned.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    if tau_th < 0:
        raise ValueError("tau_th must be non-negative")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    base_convex = 1.0 / (L * (tau_th * _SQRT2 + 1.0))
    base_sconvex = 1.0 / (L * (2 * tau_th + 1.0))
    var = sigma**2

    def need(name, value):
        if value is None or value <= 0:
            raise ValueError(f"mode {mode!r} needs positive {name}")
        return value

    if mode == "convex-max":
        return base_convex
    if mode == "sconvex-max":
        return base_sconvex
    if mode == "convex-eps":
        eps = need("epsilon", epsilon)
        cap = math.inf if var == 0 else eps / (2.0 * (_SQRT2 + 1.0) * var)
        return min(base_convex, cap)
    if mode == "sconvex-eps":
        eps = need("epsilon", epsilon)
        m = need("mu", mu)
        cap = math.inf if var == 0 else eps * m / (4.0 * var)
        return min(base_sconvex, cap)
    if mode == "convex-horizon":
        Kh = need("horizon", horizon)
        d0 = need("dist0", dist0)
        cap = math.inf if sigma == 0 else d0 / (sigma * math.sqrt((_SQRT2 + 1.0) * (Kh + 1)))
        return min(base_convex, cap)
    if mode == "sconvex-horizon":
        Kh = need("horizon", horizon)
        d0 = need("dist0", dist0)
        m = need("mu", mu)
        cap = math.inf if var == 0 else (2.0 / (m * Kh)) * math.log1p(
            m**2 * Kh * d0**2 / (4.0 * var)
        )
        return min(base_sconvex, cap)
    raise ValueError(f"unknown mode {mode!r}")


def async_sgd(oracle, schedule, policy, K, seeds=(0,), objective_mode="auto", x0=None):
    """x_{k+1} = x_k - gamma_k g(x_{k - tau_k}) with the adaptive step rule.

    One shared delay realization drives every seed; each seed draws its own
    gradient noise.  Per-seed traces carry V_k = ||x_k - x*||^2,
    W_k = gamma_k^2 ||grad F(x_{k-tau_k})||^2, and the variance forcing
    term e_k; the returned trace is their seed-mean.  The X series is the
    one the per-step relationship carries: 2 gamma_k (F(x_k) - F*) in convex
    mode, identically zero in strongly convex mode (the function gap still
    appears in metadata as gap_mean).  The strongly convex comparison is the mean V against
    exp(-gamma mu k / 2) V_0 + 2 gamma sigma^2 / mu; the convex one is the
    mean gap of the weighted average iterate against
    V_0 / (gamma (k+1)) + (1 + sqrt 2) gamma sigma^2.  Noiseless runs are
    held to slack REL_SLACK, stochastic means to the Monte Carlo factor.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if not seeds:
        raise ValueError("seeds must be non-empty")
    problem = oracle.base
    L = problem.L
    mu = problem.mu
    sigma = oracle.sigma
    if objective_mode == "auto":
        objective_mode = "strongly-convex" if mu > 0 else "convex"
    if objective_mode not in ("strongly-convex", "convex"):
        raise ValueError(f"unknown objective mode {objective_mode!r}")
    if objective_mode == "strongly-convex" and mu <= 0:
        raise ValueError("unsupported-problem: strongly-convex mode needs mu > 0")

    delays = _realize_delays(schedule, K)
    gammas = np.array([policy.gamma_at(int(t)) for t in delays])
    if not np.any(gammas > 0):
        raise ValueError("degenerate-run: every gradient was dropped over the horizon")
    gamma = policy.gamma
    d = problem.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    xstar = _reference_point(problem, x0)
    fstar = problem.optimal_value
    dist0_sq = float(np.sum((x0 - xstar) ** 2))

    tau_decl = policy.tau_th if policy.kind == "delay-adaptive" else int(delays.max())
    stats = schedule_stats(delays)
    premise_ok = min(2.0 * stats.tau_ave, float(stats.tau_max)) <= tau_decl

    # Variance forcing term, shared across seeds.
    gsq = gammas**2
    gsq_cum = np.concatenate([[0.0], np.cumsum(gsq)])
    lo = np.maximum(np.arange(K + 1) - delays, 0)
    window_gsq = gsq_cum[np.arange(K + 1)] - gsq_cum[lo]
    e_series = (gsq + 2.0 * gammas * L * window_gsq) * sigma**2

    sweep_key = rng.split(int(oracle.seed), "seed-sweep")
    idx = np.arange(K + 1)
    traces = []
    gap_rows = []
    avg_rows = []
    first_history = None
    for s in seeds:
        oracle_s = dataclasses.replace(oracle, seed=rng.u64(sweep_key, int(s)))
        history = np.empty((K + 2, d))
        history[0] = x0
        for k in range(K + 1):
            g_k = gammas[k]
            if g_k > 0.0:
                stale = history[k - delays[k]]
                grad = oracle_s.stochastic_gradient(stale, k)
                history[k + 1] = history[k] - g_k * grad
            else:
                history[k + 1] = history[k]
        V = _row_sq_norms(history[: K + 1] - xstar)
        stale_rows = history[idx - delays]
        W = gsq * _row_sq_norms(_full_gradients_batch(problem, stale_rows))
        values = _values_batch(problem, history[: K + 1])
        gaps = np.maximum(values - fstar, 0.0)
        if objective_mode == "convex":
            X = 2.0 * gammas * gaps
        else:
            # the strongly convex per-step relationship has no function-gap
            # term on its left side
            X = np.zeros(K + 1)
        traces.append(
            Trace(V=V, delays=delays, W=W, X=X, e=e_series, step_sizes=gammas)
        )
        gap_rows.append(gaps)
        weight_cum = np.cumsum(gammas)
        weighted = np.cumsum(gammas[:, None] * history[: K + 1], axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            averages = weighted / weight_cum[:, None]
        avg_gaps = np.full(K + 1, math.nan)
        live = weight_cum > 0
        if np.any(live):
            avg_gaps[live] = np.maximum(
                _values_batch(problem, averages[live]) - fstar, 0.0
            )
        avg_rows.append(avg_gaps)
        if first_history is None:
            first_history = history

    V_mean = np.mean([t.V for t in traces], axis=0)
    W_mean = np.mean([t.W for t in traces], axis=0)
    X_mean = np.mean([t.X for t in traces], axis=0)
    avg_gap_mean = np.mean(avg_rows, axis=0)
    mean_trace = Trace(
        V=V_mean, delays=delays, W=W_mean, X=X_mean, e=e_series, step_sizes=gammas
    )

    if tau_decl > 0:
        p = 2.0 * gamma * L * tau_decl
    else:
        p = 0.0
    r = 1.0 / (gamma * L) - 1.0 + p
    rec = None
    if objective_mode == "convex":
        rec = CoupledRecursion(flavor="unit-q", tau=tau_decl, q=1.0, p=p, r=r, e=0.0)
    elif mu > 0 and gamma * mu < 1.0:
        q_seq = np.where(gammas > 0, 1.0 - gammas * mu, 1.0)
        rec = CoupledRecursion(
            flavor="contractive",
            tau=tau_decl,
            q=q_seq,
            p=p,
            r=r,
            e=0.0,
            q_lower=1.0 - gamma * mu,
        )

    ks = np.arange(K + 1, dtype=float)
    if objective_mode == "strongly-convex":
        bound = np.exp(-gamma * mu * ks / 2.0) * dist0_sq + 2.0 * gamma * sigma**2 / mu
        compared = V_mean
        bound_on = "V"
    else:
        bound = dist0_sq / (gamma * (ks + 1.0)) + (1.0 + _SQRT2) * gamma * sigma**2
        compared = avg_gap_mean
        bound_on = "avg-gap"
    rel = REL_SLACK if sigma == 0 else MONTE_CARLO_FACTOR - 1.0
    verdict = _compare_to_bound(compared, bound, rel, f"{objective_mode}-bound")

    metadata = {
        "algorithm": "async-sgd",
        "objective": objective_mode,
        "gamma": float(gamma),
        "tau_th": policy.tau_th,
        "tau_decl": tau_decl,
        "tau_ave": stats.tau_ave,
        "tau_max": stats.tau_max,
        "sigma": float(sigma),
        "seeds": tuple(int(s) for s in seeds),
        "premise_ok": premise_ok,
        "active_steps": int(np.count_nonzero(gammas)),
        "dist0_sq": dist0_sq,
        "fstar": fstar,
        "avg_gap_mean": avg_gap_mean,
        "gap_mean": np.mean(gap_rows, axis=0),
        "bound_on": bound_on,
    }
    if rec is not None and sigma == 0:
        metadata["recursion_verdict"] = verify_trace(traces[0], rec, window="declared")

    iterates = steps = None
    if len(seeds) == 1:
        iterates, steps = _thin_iterates(first_history, K)
    return RunResult(
        trace=mean_trace,
        bound=bound,
        verdict=verdict,
        recursion=rec,
        metadata=metadata,
        iterates=iterates,
        iterate_steps=steps,
        per_seed=tuple(traces),
    )


# ---------------------------------------------------------------------------
# Randomized block fixed-point iteration with inconsistent reads
# ---------------------------------------------------------------------------


def arock_rate(h: float, c: float, tau: int, m: int) -> float:
    """Per-step factor 1 - h (1 - c^2) / (m (1 + 6 Gamma))."""
    if not 0 < h <= 1:
        raise ValueError("invalid-h: need h in (0, 1]")
    if not 0 <= c < 1:
        raise ValueError("c must lie in [0, 1)")
    if m < 1 or tau < 0:
        raise ValueError("need m >= 1 and tau >= 0")
    ratio = tau / m
    Gamma = ratio + math.sqrt(ratio)
    return 1.0 - h * (1.0 - c**2) / (m * (1.0 + 6.0 * Gamma))


def arock_epsilon_horizon(h, c, tau, m, dist0_sq, epsilon):
    """Steps until the geometric bound drops from dist0_sq to epsilon."""
    if dist0_sq <= 0 or epsilon <= 0:
        raise ValueError("dist0_sq and epsilon must be positive")
    ratio = tau / m
    Gamma = ratio + math.sqrt(ratio)
    return m * (1.0 + 6.0 * Gamma) / (h * (1.0 - c**2)) * math.log(dist0_sq / epsilon)


def arock(op, shm, h, K, seeds=(0,), x0=None):
    """Randomized single-block updates on stale reads of a shared vector.

    Each step composes the read x_hat_k = x_k - sum_{j in J_k} (x_{j+1} -
    x_j) from the interference set of the shared-memory model, then updates
    one uniformly chosen block with step gamma = h / (1 + 5 Gamma).  Traces
    record V_k = ||x_k - x*||^2 and W_k = ||S(x_hat_k)||^2; the bound is
    arock_rate(...)^k V_0 on the seed-mean.  metadata carries the read-lag
    diagnostic pair: the seed-mean ||x_k - x_hat_k||^2 and its window bound
    gamma^2 (sqrt m + sqrt tau)^2 / m^2 * sum of mean W over the window.
    """
    if not 0 < h <= 1:
        raise ValueError("invalid-h: need h in (0, 1]")
    if K < 1:
        raise ValueError("K must be at least 1")
    if not seeds:
        raise ValueError("seeds must be non-empty")
    partition = op.partition
    m = partition.m
    if shm.blocks != m:
        raise ValueError("shared-memory blocks must match the operator partition")
    tau = shm.tau
    ratio = tau / m
    Gamma = ratio + math.sqrt(ratio)
    gamma = h / (1.0 + 5.0 * Gamma)
    c = op.modulus
    xstar = op.fixed_point()
    d = partition.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)

    sweep_key = rng.split(int(shm.seed), "seed-sweep")
    traces = []
    read_gap_rows = []
    first_history = None
    for s in seeds:
        shm_s = dataclasses.replace(shm, seed=rng.u64(sweep_key, int(s)))
        x = x0.copy()
        delta_slices = []
        delta_vecs = []
        V = np.empty(K + 1)
        W = np.empty(K + 1)
        read_gap = np.empty(K + 1)
        delays = np.empty(K + 1, dtype=np.int64)
        history = np.empty((K + 2, d)) if len(seeds) == 1 else None
        if history is not None:
            history[0] = x0
        for k in range(K + 1):
            V[k] = float(np.sum((x - xstar) ** 2))
            missing = shm_s.sample_missing(k)
            if len(missing):
                x_hat = x.copy()
                for j in missing:
                    x_hat[delta_slices[j]] -= delta_vecs[j]
                delays[k] = k - int(min(missing))
            else:
                x_hat = x
                delays[k] = 0
            read_gap[k] = float(np.sum((x - x_hat) ** 2))
            residual = op.residual(x_hat)
            W[k] = float(residual @ residual)
            i = shm_s.sample_block(k)
            sl = partition.block_slice(i)
            change = -gamma * residual[sl]
            x = x.copy()
            x[sl] += change
            delta_slices.append(sl)
            delta_vecs.append(change)
            if history is not None:
                history[k + 1] = x
        traces.append(Trace(V=V, delays=delays, W=W))
        read_gap_rows.append(read_gap)
        if first_history is None and history is not None:
            first_history = history

    V_mean = np.mean([t.V for t in traces], axis=0)
    W_mean = np.mean([t.W for t in traces], axis=0)
    read_gap_mean = np.mean(read_gap_rows, axis=0)
    mean_trace = Trace(V=V_mean, delays=traces[0].delays, W=W_mean)

    q = 1.0 - gamma * (1.0 - c**2) / (m * (1.0 + gamma * Gamma))
    p = 2.0 * gamma**2 * Gamma / (m * tau) if tau > 0 else 0.0
    r = (gamma / m) * (1.0 - gamma * (1.0 + Gamma)) + p
    rec = CoupledRecursion(flavor="contractive", tau=tau, q=q, p=p, r=r, e=0.0, q_lower=q)

    rate = arock_rate(h, c, tau, m)
    bound = float(V_mean[0]) * rate ** np.arange(K + 1)
    deterministic = m == 1 and tau == 0
    rel = REL_SLACK if deterministic else MONTE_CARLO_FACTOR - 1.0
    verdict = _compare_to_bound(V_mean, bound, rel, "geometric-decay")

    # direct window sums: cumsum differences quantize to zero once late W
    # terms fall below the ulp of the running total
    lag_coeff = gamma**2 * (math.sqrt(m) + math.sqrt(tau)) ** 2 / m**2
    if tau > 0:
        trailing = np.convolve(W_mean, np.ones(tau))[: K + 1]
        window_sums = np.concatenate([[0.0], trailing[:-1]])
    else:
        window_sums = np.zeros(K + 1)
    read_gap_bound = lag_coeff * window_sums

    metadata = {
        "algorithm": "arock",
        "h": float(h),
        "gamma": gamma,
        "tau": tau,
        "m": m,
        "Gamma": Gamma,
        "modulus": c,
        "rate": rate,
        "seeds": tuple(int(s) for s in seeds),
        "read_gap_mean": read_gap_mean,
        "read_gap_bound": read_gap_bound,
        "bound_on": "V",
    }
    if deterministic:
        metadata["recursion_verdict"] = verify_trace(traces[0], rec, window="declared")

    iterates = steps = None
    if first_history is not None:
        iterates, steps = _thin_iterates(first_history, K)
    return RunResult(
        trace=mean_trace,
        bound=bound,
        verdict=verdict,
        recursion=rec,
        metadata=metadata,
        iterates=iterates,
        iterate_steps=steps,
        per_seed=tuple(traces),
    )


# ---------------------------------------------------------------------------
# Totally / partially asynchronous block iteration
# ---------------------------------------------------------------------------


def totally_async(op, sched, K, x0=None, certificate="auto"):
    """Block iteration [x_{k+1}]_i = T_i(reads) on an agent schedule.

    Each active agent rebuilds its input vector from per-block read times
    and rewrites its own block; idle agents keep theirs.  The trace records
    V_k = ||x_k - x*|| in the operator's weighted block-max norm, with delay
    column equal to the age window the update at k actually drew on.

    The bound follows the schedule class: bounded staleness (update gaps
    <= B, read depth <= D) gives c^{k/(B+D+1)} V_0; linear-growth reads give
    the polynomial envelope with eta = ln c / ln(1 - alpha); passing
    certificate="asymptotic-only" skips any finite bound and reports the
    recursion check alone.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if getattr(op, "norm", None) != "block-max":
        raise ValueError("operator must declare a block-max contraction")
    partition = op.partition
    if sched.agents != partition.m:
        raise ValueError("schedule/operator partition mismatch")
    if certificate not in ("auto", "asymptotic-only"):
        raise ValueError(f"unknown certificate {certificate!r}")
    m = partition.m
    d = partition.d
    c = op.modulus
    xstar = op.fixed_point()
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)

    realization = realize_agents(sched, K)
    update_mask = realization.update_mask
    reads = realization.reads
    taus = realization.taus

    col_agent = np.repeat(np.arange(m), np.asarray(partition.sizes))
    cols = np.arange(d)
    history = np.empty((K + 1, d))
    history[0] = x0
    x = x0.copy()
    for k in range(K):
        x_next = x.copy()
        active = np.flatnonzero(update_mask[k])
        for i in active:
            z = history[reads[k, i][col_agent], cols]
            x_next[partition.block_slice(i)] = op.apply(z)[partition.block_slice(i)]
        history[k + 1] = x_next
        x = x_next

    V = _block_max_norm_rows(history - xstar, partition)
    # taus[k] is measured after the step-k updates, so it is the age of the
    # oldest information inside x_{k+1}: exactly the window V_{k+1} needs.
    delays = taus.copy()
    trace = Trace(V=V, delays=delays)
    rec = BoundedDelayRecursion(q=0.0, p=c, tau=int(delays.max()))
    recursion_verdict = verify_trace(trace, rec, window="trace")

    V0 = float(V[0])
    ks = np.arange(K + 1, dtype=float)
    metadata = {
        "algorithm": "totally-async",
        "modulus": c,
        "tau_max": int(taus.max()),
        "update": sched.update,
        "staleness": sched.staleness,
        "recursion_verdict": recursion_verdict,
        "bound_on": "V",
    }
    bound = None
    verdict = None
    if certificate == "asymptotic-only" :
        cert = RateCertificate(kind="asymptotic-only", admissible=True, params={})
    elif sched.staleness == "linear-growth":
        spec = GrowthDelaySpec(alpha=sched.alpha, beta=sched.beta)
        eta = growing_delay_eta(0.0, c, sched.alpha)
        bound = V0 * np.array([growing_delay_bound(spec, 0.0, c, k) for k in range(K + 1)])
        cert = RateCertificate(
            kind="polynomial",
            admissible=True,
            params={"alpha": sched.alpha, "beta": sched.beta, "eta": eta},
        )
        metadata["eta"] = eta
    else:
        B = sched.gap if sched.update == "periodic" else 0
        D = sched.depth
        step_rho = c ** (1.0 / (B + D + 1))
        bound = V0 * step_rho**ks
        cert = RateCertificate(kind="geometric", admissible=True, params={"rho": step_rho})
        metadata["B"] = B
        metadata["D"] = D
        metadata["rho"] = step_rho
    if bound is not None:
        verdict = _compare_to_bound(V, bound, REL_SLACK, "schedule-bound")
    metadata["certificate"] = cert

    iterates, steps = _thin_iterates(history, K)
    return RunResult(
        trace=trace,
        bound=bound,
        verdict=verdict,
        recursion=rec,
        metadata=metadata,
        iterates=iterates,
        iterate_steps=steps,
    )
