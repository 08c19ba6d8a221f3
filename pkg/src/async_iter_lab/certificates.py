"""Rate certificates and trace verifiers for delay-perturbed recursions.

Two recursion shapes are understood, both over scalar sequences indexed by
the iteration counter k:

  max-window form      V_{k+1} <= q V_k + p max_{(k-tau_k)_+ <= l <= k} V_l
  coupled sum form     X_k + V_{k+1} <= q_k V_k
                         + p_k sum_{l=(k-tau_k)_+}^{k} W_l - r_k W_k + e_k

with W_l = 0 for l < 0.  The module computes the decay certificates these
recursions admit (geometric under bounded delays, polynomial under linearly
growing delays, telescoped summation bounds for the coupled form), validates
user-supplied rate functions, and checks recorded traces against either form
with explicit floating-point slack.

Pure functions over immutable inputs; no shared mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

REL_SLACK = 1e-9
ABS_FLOOR = 1e-12

_EQUALITY_TOL = 1e-12


def _leq(lhs: float, rhs: float, rel: float, floor: float) -> bool:
    return lhs <= rhs + max(floor, rel * abs(rhs))


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundedDelayRecursion:
    """Coefficients (q, p) and delay cap tau of a max-window recursion."""

    q: float
    p: float
    tau: int

    def __post_init__(self):
        if self.q < 0 or self.p < 0:
            raise ValueError("q and p must be non-negative")
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ValueError("tau must be a non-negative integer")
        object.__setattr__(self, "tau", int(self.tau))

    @property
    def admissible(self) -> bool:
        return self.q + self.p < 1.0


@dataclass(frozen=True)
class GrowthDelaySpec:
    """Linear delay growth envelope tau_k <= alpha * k + beta."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def _seq_at(values, k: int, name: str) -> float:
    if np.isscalar(values):
        return float(values)
    if k >= len(values):
        raise ValueError(f"{name} sequence too short for index {k}")
    return float(values[k])


@dataclass(frozen=True)
class CoupledRecursion:
    """Coefficient schedule of a coupled sum-form recursion.

    flavor "unit-q": every q_k = 1; the delayed-sum weights must telescope
    under the r_k terms for the summation bounds to exist.
    flavor "contractive": p >= 0 and r > 0 are constants (the empty-window
    case p = 0 also allows r = 0) and q_k >= q_lower for a declared q_lower
    in (0, 1); the products Q_k = prod_{l<k} q_l drive the bounds.

    q, p, r, e each accept a scalar or a per-k sequence.
    """

    flavor: str
    tau: int
    q: object = 1.0
    p: object = 0.0
    r: object = 0.0
    e: object = 0.0
    q_lower: float | None = None

    def __post_init__(self):
        if self.flavor not in ("unit-q", "contractive"):
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ValueError("tau must be a non-negative integer")
        object.__setattr__(self, "tau", int(self.tau))
        for name in ("q", "p", "r", "e"):
            value = getattr(self, name)
            if not np.isscalar(value):
                object.__setattr__(self, name, _as_float_array(value, name))
            else:
                object.__setattr__(self, name, float(value))
        q = self.q
        if self.flavor == "unit-q":
            ok = q == 1.0 if np.isscalar(q) else bool(np.all(q == 1.0))
            if not ok:
                raise ValueError("unit-q flavor requires every q_k = 1")
        else:
            if not (np.isscalar(self.p) and np.isscalar(self.r)):
                raise ValueError("contractive flavor requires constant p and r")
            if self.p < 0 or self.r < 0 or (self.p > 0 and self.r == 0):
                raise ValueError(
                    "contractive flavor requires p >= 0 and r > 0 (r = 0 only when p = 0)"
                )
            lower = self.q_lower
            if lower is None:
                lower = float(q) if np.isscalar(q) else float(np.min(q))
            if not 0.0 < lower < 1.0:
                raise ValueError("contractive flavor needs q_lower in (0, 1)")
            qmax = float(q) if np.isscalar(q) else float(np.max(q))
            qmin = float(q) if np.isscalar(q) else float(np.min(q))
            if qmax > 1.0 or qmin < lower:
                raise ValueError("q_k must satisfy q_lower <= q_k <= 1")
            object.__setattr__(self, "q_lower", lower)

    def q_at(self, k: int) -> float:
        return _seq_at(self.q, k, "q")

    def p_at(self, k: int) -> float:
        return _seq_at(self.p, k, "p")

    def r_at(self, k: int) -> float:
        return _seq_at(self.r, k, "r")

    def e_at(self, k: int) -> float:
        return _seq_at(self.e, k, "e")


@dataclass(frozen=True)
class RateCertificate:
    """A decay guarantee: its kind, admissibility, and named parameters.

    kinds: geometric (rho^k), lambda-table, polynomial (eta-power decay),
    asymptotic-only (convergence without a rate), summation-bound.
    """

    kind: str
    admissible: bool
    params: Mapping[str, float] = field(default_factory=dict)

    _KINDS = ("geometric", "lambda-table", "polynomial", "asymptotic-only", "summation-bound")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown certificate kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))
        if self.admissible and self.kind == "geometric":
            rho = self.params.get("rho")
            if rho is None or not 0.0 <= rho < 1.0:
                raise ValueError("geometric certificate needs rho in [0, 1)")
        if self.admissible and self.kind == "polynomial":
            eta = self.params.get("eta")
            if eta is None or eta <= 0.0:
                raise ValueError("polynomial certificate needs eta > 0")

    @property
    def rho(self) -> float:
        return self.params["rho"]

    @property
    def eta(self) -> float:
        return self.params["eta"]


def certificate_to_kv(cert: RateCertificate) -> str:
    lines = {
        "kind": cert.kind,
        "admissible": "true" if cert.admissible else "false",
    }
    for key, value in cert.params.items():
        lines[key] = repr(float(value))
    return "".join(f"{k} = {lines[k]}\n" for k in sorted(lines))


@dataclass(frozen=True)
class Trace:
    """Recorded run of a recursion: V plus optional W/X/e/gamma series.

    All series share length K+1; delays are integers with 0 <= tau_k <= k.
    """

    V: np.ndarray
    delays: np.ndarray
    W: np.ndarray | None = None
    X: np.ndarray | None = None
    e: np.ndarray | None = None
    step_sizes: np.ndarray | None = None

    def __post_init__(self):
        V = _as_float_array(self.V, "V")
        delays = np.asarray(self.delays, dtype=np.int64)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "delays", delays)
        n = len(V)
        if n == 0:
            raise ValueError("trace must contain at least V_0")
        if len(delays) != n:
            raise ValueError("delays length must match V")
        if np.any(V < 0):
            raise ValueError("V must be non-negative")
        k = np.arange(n)
        if np.any(delays < 0) or np.any(delays > k):
            raise ValueError("delays must satisfy 0 <= tau_k <= k")
        for name in ("W", "X", "e", "step_sizes"):
            series = getattr(self, name)
            if series is None:
                continue
            arr = _as_float_array(series, name)
            if len(arr) != n:
                raise ValueError(f"{name} length must match V")
            if name in ("W", "X") and np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
            if name == "step_sizes" and np.any(arr < 0):
                raise ValueError("step_sizes must be non-negative")
            object.__setattr__(self, name, arr)

    @property
    def length(self) -> int:
        return len(self.V)

    @property
    def horizon(self) -> int:
        return len(self.V) - 1


def _format_value(value) -> str:
    return repr(float(value))


def write_trace_csv(trace: Trace, path) -> None:
    columns = {
        "V": trace.V,
        "W": trace.W,
        "X": trace.X,
        "e": trace.e,
        "gamma": trace.step_sizes,
    }
    with open(path, "w", newline="") as handle:
        handle.write("k,V,W,X,e,tau,gamma\n")
        for k in range(trace.length):
            cells = [str(k), _format_value(trace.V[k])]
            for name in ("W", "X", "e"):
                series = columns[name]
                cells.append("" if series is None else _format_value(series[k]))
            cells.append(str(int(trace.delays[k])))
            gamma = columns["gamma"]
            cells.append("" if gamma is None else _format_value(gamma[k]))
            handle.write(",".join(cells) + "\n")


def read_trace_csv(path) -> Trace:
    with open(path, "r", newline="") as handle:
        header = handle.readline().strip()
        if header != "k,V,W,X,e,tau,gamma":
            raise ValueError(f"unexpected trace header {header!r}")
        rows = [line.rstrip("\n").split(",") for line in handle if line.strip()]
    if not rows:
        raise ValueError("trace file has no rows")
    series: dict[str, list] = {name: [] for name in ("V", "W", "X", "e", "tau", "gamma")}
    for row in rows:
        if len(row) != 7:
            raise ValueError(f"malformed trace row {row!r}")
        for name, cell in zip(("V", "W", "X", "e", "tau", "gamma"), row[1:]):
            series[name].append(cell)

    def parse(name, caster):
        cells = series[name]
        if all(cell == "" for cell in cells):
            return None
        if any(cell == "" for cell in cells):
            raise ValueError(f"column {name} has gaps")
        return np.array([caster(cell) for cell in cells])

    V = parse("V", float)
    tau = parse("tau", int)
    if V is None or tau is None:
        raise ValueError("V and tau columns are required")
    return Trace(
        V=V,
        delays=tau,
        W=parse("W", float),
        X=parse("X", float),
        e=parse("e", float),
        step_sizes=parse("gamma", float),
    )


def write_bound_csv(bounds, path) -> None:
    bounds = _as_float_array(bounds, "bounds")
    with open(path, "w", newline="") as handle:
        handle.write("k,bound\n")
        for k, value in enumerate(bounds):
            handle.write(f"{k},{_format_value(value)}\n")


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    first_violation: int | None = None
    check: str | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class AdmissibilityResult:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class Verdict:
    passed: bool
    first_violation: int | None = None
    lhs: float | None = None
    rhs: float | None = None
    check: str | None = None
    max_rel_gap: float | None = None

    def __bool__(self) -> bool:
        return self.passed

    @property
    def tight(self) -> bool:
        """True when the checked inequality held with equality everywhere."""
        return self.passed and self.max_rel_gap is not None and self.max_rel_gap <= _EQUALITY_TOL

    def summary(self) -> str:
        if self.passed:
            return "PASS"
        return f"FAIL k={self.first_violation}"


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def bounded_delay_rate(rec: BoundedDelayRecursion) -> RateCertificate:
    """Geometric certificate rho = (q+p)^(1/(1+tau)) for the max-window form.

    Inadmissible coefficients (q + p >= 1) yield admissible=False and no rho.
    """
    base = {"q": rec.q, "p": rec.p, "tau": float(rec.tau)}
    if not rec.admissible:
        return RateCertificate(kind="geometric", admissible=False, params=base)
    rho = (rec.q + rec.p) ** (1.0 / (1.0 + rec.tau))
    return RateCertificate(kind="geometric", admissible=True, params={**base, "rho": rho})


def delay_family_admissible(family: str, **params) -> bool:
    """Whether a parametric delay family keeps k - tau_k diverging.

    Supported families: "bounded" (tau), "linear" (alpha, beta), "sqrt-floor".
    The decision is analytic per family; finite data never certifies a limit.
    """
    if family == "bounded":
        tau = params.pop("tau", None)
        if params:
            raise ValueError(f"unexpected parameters {sorted(params)} for bounded")
        if tau is None or tau < 0 or int(tau) != tau:
            raise ValueError("invalid-parameters: bounded needs integer tau >= 0")
        return True
    if family == "linear":
        alpha = params.pop("alpha", None)
        beta = params.pop("beta", 0.0)
        if params:
            raise ValueError(f"unexpected parameters {sorted(params)} for linear")
        if alpha is None or alpha < 0 or beta < 0:
            raise ValueError("invalid-parameters: linear needs alpha >= 0, beta >= 0")
        return alpha < 1.0
    if family == "sqrt-floor":
        if params:
            raise ValueError(f"unexpected parameters {sorted(params)} for sqrt-floor")
        return True
    raise ValueError(f"unsupported-family: {family!r}")


@dataclass(frozen=True)
class RateFunction:
    """A candidate decay function Lambda in one of three named forms.

    geometric: rho^t.  polynomial: (alpha t/(1-alpha+beta) + 1)^(-eta).
    table: explicit values on the integer grid 0..len-1.
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("geometric", "polynomial", "table"):
            raise ValueError(f"unknown rate-function kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))
        if self.kind == "table":
            if self.values is None:
                raise ValueError("table form needs values")
            object.__setattr__(self, "values", _as_float_array(self.values, "values"))

    def __call__(self, t: float) -> float:
        if self.kind == "geometric":
            return self.params["rho"] ** t
        if self.kind == "polynomial":
            alpha = self.params["alpha"]
            beta = self.params["beta"]
            eta = self.params["eta"]
            return (alpha * t / (1.0 - alpha + beta) + 1.0) ** (-eta)
        idx = int(t)
        if idx != t or idx < 0 or idx >= len(self.values):
            raise ValueError(f"table rate function undefined at t={t}")
        return float(self.values[idx])

    def vanishes(self) -> bool | None:
        """Analytic limit Lambda(k) -> 0; None when undecidable (table)."""
        if self.kind == "geometric":
            return 0.0 <= self.params["rho"] < 1.0
        if self.kind == "polynomial":
            return self.params["eta"] > 0.0 and 0.0 < self.params["alpha"] < 1.0
        return None


def geometric_rate_function(rho: float) -> RateFunction:
    return RateFunction(kind="geometric", params={"rho": rho})


def polynomial_rate_function(alpha: float, beta: float, eta: float) -> RateFunction:
    return RateFunction(kind="polynomial", params={"alpha": alpha, "beta": beta, "eta": eta})


def table_rate_function(values) -> RateFunction:
    return RateFunction(kind="table", values=values)


def validate_rate_function(
    lam: RateFunction,
    q: float,
    p: float,
    delays: Sequence[int],
    K: int,
    tol: float = REL_SLACK,
) -> ValidationResult:
    """Check a candidate rate function against a delay schedule.

    Verifies Lambda(0) = 1, monotone non-increase on 0..K+1, the analytic
    vanishing condition for the closed forms, and the propagation inequality
    (q+p) * Lambda((k - tau_k)_+) <= Lambda(k+1) for all k <= K.

    Table-form candidates certify only the finite horizon: their limit is
    not decidable from a table and is skipped.
    """
    if q + p >= 1.0:
        raise ValueError("inadmissible-parameters: need q + p < 1")
    if len(delays) < K + 1:
        raise ValueError("delays must cover 0..K")
    if abs(lam(0) - 1.0) > tol:
        return ValidationResult(False, first_violation=0, check="normalization")
    previous = lam(0)
    for t in range(1, K + 2):
        current = lam(t)
        if current < 0 or current > previous * (1.0 + tol) + ABS_FLOOR:
            return ValidationResult(False, first_violation=t, check="monotonicity")
        previous = current
    vanishes = lam.vanishes()
    if vanishes is False:
        return ValidationResult(False, first_violation=None, check="limit")
    total = q + p
    for k in range(K + 1):
        lag = max(0, k - int(delays[k]))
        lhs = total * lam(lag)
        rhs = lam(k + 1)
        if not _leq(lhs, rhs, tol, ABS_FLOOR):
            return ValidationResult(False, first_violation=k, check="delay-inequality")
    return ValidationResult(True)


def growing_delay_eta(q: float, p: float, alpha: float) -> float:
    """Decay exponent eta = ln(q+p)/ln(1-alpha) for linearly growing delays."""
    if q + p >= 1.0:
        raise ValueError("inadmissible-parameters: need q + p < 1")
    if q + p <= 0.0:
        return math.inf
    return math.log(q + p) / math.log(1.0 - alpha)


def growing_delay_bound(spec: GrowthDelaySpec, q: float, p: float, k: float) -> float:
    """Polynomial envelope value at k for delays tau_k <= alpha k + beta.

    Returns (alpha k / (1 - alpha + beta) + 1)^(-eta); equals 1 at k = 0 and
    decreases to 0.
    """
    eta = growing_delay_eta(q, p, spec.alpha)
    if math.isinf(eta):
        return 1.0 if k == 0 else 0.0
    base = spec.alpha * k / (1.0 - spec.alpha + spec.beta) + 1.0
    return base ** (-eta)


def coupled_admissible(rec: CoupledRecursion, K: int) -> AdmissibilityResult:
    """Summation conditions under which the coupled form telescopes.

    unit-q flavor: sum_{l=0}^{tau} p_{k+l} <= r_k for every k <= K (per-k
    sequences are clipped at their last index, which is sound for the
    horizon-K conclusions).  contractive flavor: 2 tau + 1 <= min(1/(1-q),
    r/p) with q the declared lower bound.  Comparisons are exact: the inputs
    are declared coefficients, not measured traces.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    if rec.flavor == "contractive":
        lhs = 2 * rec.tau + 1
        cap = 1.0 / (1.0 - rec.q_lower)
        if rec.p > 0:
            cap = min(cap, rec.r / rec.p)
        if lhs <= cap:
            return AdmissibilityResult(True)
        return AdmissibilityResult(
            False, reason=f"2*tau+1 = {lhs} exceeds min(1/(1-q), r/p) = {cap!r}"
        )
    p = rec.p
    for k in range(K + 1):
        if np.isscalar(p):
            window_sum = (rec.tau + 1) * p
        else:
            hi = min(k + rec.tau, len(p) - 1)
            if k >= len(p):
                raise ValueError("p sequence too short for the horizon")
            window_sum = float(np.sum(p[k : hi + 1]))
        r_k = rec.r_at(k)
        if window_sum > r_k:
            return AdmissibilityResult(
                False,
                reason=f"sum condition fails at k={k}: {window_sum!r} > {r_k!r}",
            )
    return AdmissibilityResult(True)


@dataclass(frozen=True)
class CoupledBounds:
    """Telescoped bounds: v[k] caps V_k; weighted_x_sum[k] caps the running
    sum of X_j / Q_{j+1} through k (plain sum of X_j for unit-q)."""

    v: np.ndarray
    weighted_x_sum: np.ndarray
    q_products: np.ndarray


def coupled_bounds(rec: CoupledRecursion, V0: float, K: int) -> CoupledBounds:
    """Bound sequences implied by an admissible coupled recursion.

    v has length K+2 (indices 0..K+1); weighted_x_sum length K+1.  For the
    contractive flavor, v follows B_{k+1} = q_k B_k + e_k, which equals
    Q_{k+1} (V0 + sum_{j<=k} e_j / Q_{j+1}) without forming the products.
    """
    if V0 < 0:
        raise ValueError("V0 must be non-negative")
    verdict = coupled_admissible(rec, K)
    if not verdict:
        raise ValueError(f"inadmissible-recursion: {verdict.reason}")
    e = np.array([rec.e_at(k) for k in range(K + 1)])
    if rec.flavor == "unit-q":
        cum = np.cumsum(e)
        v = np.empty(K + 2)
        v[0] = V0
        v[1:] = V0 + cum
        weighted = V0 + cum
        products = np.ones(K + 2)
        return CoupledBounds(v=v, weighted_x_sum=weighted, q_products=products)
    q = np.array([rec.q_at(k) for k in range(K + 1)])
    products = np.empty(K + 2)
    products[0] = 1.0
    np.cumprod(q, out=products[1:])
    v = np.empty(K + 2)
    v[0] = V0
    for k in range(K + 1):
        v[k + 1] = q[k] * v[k] + e[k]
    with np.errstate(divide="ignore", over="ignore"):
        weighted = V0 + np.cumsum(e / products[1:])
    return CoupledBounds(v=v, weighted_x_sum=weighted, q_products=products)


# ---------------------------------------------------------------------------
# Trace verification
# ---------------------------------------------------------------------------


def _window_lo(k: int, rec_tau: int, trace: Trace, window: str) -> int:
    if window == "declared":
        w = rec_tau
    elif window == "trace":
        w = int(trace.delays[k])
    else:
        raise ValueError(f"unknown window mode {window!r}")
    return max(0, k - w)


def verify_trace(
    trace: Trace,
    rec,
    window: str = "declared",
    slack_rel: float = REL_SLACK,
    slack_abs: float = ABS_FLOOR,
) -> Verdict:
    """Check a recorded trace against a recursion form.

    rec is a BoundedDelayRecursion (max-window form) or a CoupledRecursion
    (sum form).  `window` selects the delayed-window width per step:
    "declared" uses the recursion's constant tau, "trace" the recorded
    per-step delays.  After the pointwise recursion check, the derived bound
    sequence is checked too whenever the recursion is admissible (geometric
    envelope for the max-window form, telescoped bounds for the sum form).
    """
    if isinstance(rec, BoundedDelayRecursion):
        return _verify_max_window(trace, rec, window, slack_rel, slack_abs)
    if isinstance(rec, CoupledRecursion):
        return _verify_coupled(trace, rec, window, slack_rel, slack_abs)
    raise TypeError("rec must be BoundedDelayRecursion or CoupledRecursion")


def _gap_stats(lhs: float, rhs: float) -> float:
    # overflowed steps carry no meaningful slack statistic
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        return 0.0
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return max(0.0, (rhs - lhs) / scale)


def _verify_max_window(trace, rec, window, slack_rel, slack_abs) -> Verdict:
    V = trace.V
    K = trace.horizon
    max_gap = 0.0
    for k in range(K):
        lo = _window_lo(k, rec.tau, trace, window)
        rhs = rec.q * V[k] + rec.p * float(np.max(V[lo : k + 1]))
        lhs = float(V[k + 1])
        if not _leq(lhs, rhs, slack_rel, slack_abs):
            return Verdict(False, first_violation=k, lhs=lhs, rhs=rhs, check="recursion")
        max_gap = max(max_gap, _gap_stats(lhs, rhs))
    if rec.admissible:
        cert = bounded_delay_rate(rec)
        rho = cert.rho
        envelope = V[0] * rho ** np.arange(K + 1)
        for k in range(K + 1):
            if not _leq(float(V[k]), float(envelope[k]), slack_rel, slack_abs):
                return Verdict(
                    False,
                    first_violation=k,
                    lhs=float(V[k]),
                    rhs=float(envelope[k]),
                    check="derived-bound",
                )
    return Verdict(True, check="recursion", max_rel_gap=max_gap)


def _verify_coupled(trace, rec, window, slack_rel, slack_abs) -> Verdict:
    if trace.W is None:
        raise ValueError("missing-series: coupled form needs W")
    V = trace.V
    W = trace.W
    X = trace.X if trace.X is not None else np.zeros(trace.length)
    e = trace.e if trace.e is not None else None
    K = trace.horizon
    max_gap = 0.0
    for k in range(K):
        lo = _window_lo(k, rec.tau, trace, window)
        e_k = float(e[k]) if e is not None else rec.e_at(k)
        rhs = (
            rec.q_at(k) * float(V[k])
            + rec.p_at(k) * float(np.sum(W[lo : k + 1]))
            - rec.r_at(k) * float(W[k])
            + e_k
        )
        lhs = float(X[k]) + float(V[k + 1])
        if not _leq(lhs, rhs, slack_rel, slack_abs):
            return Verdict(False, first_violation=k, lhs=lhs, rhs=rhs, check="recursion")
        max_gap = max(max_gap, _gap_stats(lhs, rhs))
    horizon = K - 1
    if horizon >= 0 and coupled_admissible(rec, horizon):
        rec_for_bounds = rec
        if e is not None:
            rec_for_bounds = CoupledRecursion(
                flavor=rec.flavor, tau=rec.tau, q=rec.q, p=rec.p, r=rec.r,
                e=e[: horizon + 1], q_lower=rec.q_lower,
            )
        bounds = coupled_bounds(rec_for_bounds, float(V[0]), horizon)
        for k in range(K + 1):
            if not _leq(float(V[k]), float(bounds.v[k]), slack_rel, slack_abs):
                return Verdict(
                    False,
                    first_violation=k,
                    lhs=float(V[k]),
                    rhs=float(bounds.v[k]),
                    check="derived-bound",
                )
        running = 0.0
        for k in range(horizon + 1):
            q_next = float(bounds.q_products[k + 1])
            if q_next > 0:
                running += float(X[k]) / q_next
            cap = float(bounds.weighted_x_sum[k])
            if not _leq(running, cap, slack_rel, slack_abs):
                return Verdict(
                    False, first_violation=k, lhs=running, rhs=cap, check="derived-bound"
                )
    return Verdict(True, check="recursion", max_rel_gap=max_gap)


def worst_case_trace(q: float, p: float, tau: int, V0: float, K: int) -> Trace:
    """The equality trace V_{k+1} = q V_k + p max over the clipped window.

    Tightness oracle: no trace satisfying the max-window recursion with these
    coefficients can exceed it, and it meets the geometric envelope exactly
    at the window boundary steps.
    """
    if V0 <= 0:
        raise ValueError("V0 must be positive")
    rec = BoundedDelayRecursion(q=q, p=p, tau=tau)
    if not rec.admissible:
        raise ValueError("inadmissible-parameters: need q + p < 1")
    V = np.empty(K + 1)
    V[0] = V0
    for k in range(K):
        lo = max(0, k - tau)
        V[k + 1] = q * V[k] + p * float(np.max(V[lo : k + 1]))
    delays = np.minimum(np.arange(K + 1), tau)
    return Trace(V=V, delays=delays)
