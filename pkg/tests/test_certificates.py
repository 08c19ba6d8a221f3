"""Certificate calculators and trace verifiers against hand-rolled oracles."""

import math

import numpy as np
import pytest

from async_iter_lab import rng
from async_iter_lab.certificates import (
    AdmissibilityResult,
    BoundedDelayRecursion,
    CoupledRecursion,
    GrowthDelaySpec,
    RateCertificate,
    Trace,
    bounded_delay_rate,
    certificate_to_kv,
    coupled_admissible,
    coupled_bounds,
    delay_family_admissible,
    geometric_rate_function,
    growing_delay_bound,
    growing_delay_eta,
    polynomial_rate_function,
    read_trace_csv,
    table_rate_function,
    validate_rate_function,
    verify_trace,
    worst_case_trace,
    write_trace_csv,
)

# Frozen expected values, computed independently from the closed forms.
RHO_HALF_03_TAU3 = 0.9457416090031758  # (0.5+0.3)^(1/4)
ETA_P08_A05 = 0.3219280948873623  # ln(0.8)/ln(0.5)
GROW_BOUND_K2 = 0.7021037027785602  # 3^(-ETA_P08_A05)


def oracle_max_recursion(q, p, delays, V0, K, damping=None):
    """Plain-python unroll of V_{k+1} = damp_k (q V_k + p max window)."""
    V = [float(V0)]
    for k in range(K):
        lo = max(0, k - delays[k])
        value = q * V[k] + p * max(V[lo : k + 1])
        if damping is not None:
            value *= damping[k]
        V.append(value)
    return V


# ---------------------------------------------------------------------------
# geometric certificates
# ---------------------------------------------------------------------------


def test_rate_reduces_to_q_plus_p_without_delay():
    cert = bounded_delay_rate(BoundedDelayRecursion(q=0.5, p=0.3, tau=0))
    assert cert.admissible
    assert cert.rho == pytest.approx(0.8, abs=0, rel=1e-15)


def test_rate_frozen_value():
    cert = bounded_delay_rate(BoundedDelayRecursion(q=0.5, p=0.3, tau=3))
    assert cert.rho == RHO_HALF_03_TAU3


def test_rate_inadmissible_on_boundary():
    cert = bounded_delay_rate(BoundedDelayRecursion(q=0.7, p=0.3, tau=2))
    assert not cert.admissible
    assert "rho" not in cert.params


def test_rate_monotone_in_tau():
    previous = -1.0
    for tau in range(65):
        rho = bounded_delay_rate(BoundedDelayRecursion(q=0.4, p=0.25, tau=tau)).rho
        assert rho >= previous
        previous = rho


def test_negative_coefficients_rejected():
    with pytest.raises(ValueError):
        BoundedDelayRecursion(q=-0.1, p=0.3, tau=1)
    with pytest.raises(ValueError):
        BoundedDelayRecursion(q=0.1, p=0.3, tau=-1)


# ---------------------------------------------------------------------------
# delay families
# ---------------------------------------------------------------------------


def test_delay_families():
    assert delay_family_admissible("bounded", tau=7)
    assert delay_family_admissible("linear", alpha=0.2, beta=0)
    assert not delay_family_admissible("linear", alpha=1.0, beta=0)
    assert not delay_family_admissible("linear", alpha=2.5, beta=1)
    assert delay_family_admissible("sqrt-floor")


def test_delay_family_rejects_unknown():
    with pytest.raises(ValueError, match="unsupported-family"):
        delay_family_admissible("fibonacci")
    with pytest.raises(ValueError, match="invalid-parameters"):
        delay_family_admissible("linear", alpha=-0.5)
    with pytest.raises(ValueError, match="invalid-parameters"):
        delay_family_admissible("bounded", tau=-2)


# ---------------------------------------------------------------------------
# rate-function validation
# ---------------------------------------------------------------------------


def test_geometric_rate_function_validates_on_constant_delays():
    q, p, tau, K = 0.5, 0.3, 3, 200
    rho = bounded_delay_rate(BoundedDelayRecursion(q, p, tau)).rho
    delays = [min(k, tau) for k in range(K + 1)]
    result = validate_rate_function(geometric_rate_function(rho), q, p, delays, K)
    assert result.ok


def test_polynomial_rate_function_validates_on_growing_delays():
    q, p = 0.0, 0.8
    alpha, beta = 0.5, 0.0
    eta = growing_delay_eta(q, p, alpha)
    delays = [min(k, int(alpha * k + beta)) for k in range(301)]
    lam = polynomial_rate_function(alpha, beta, eta)
    assert validate_rate_function(lam, q, p, delays, 300).ok


def test_unnormalized_rate_function_fails_at_zero():
    lam = table_rate_function([2.0 * 0.8**t for t in range(12)])
    result = validate_rate_function(lam, 0.4, 0.2, [0] * 11, 10)
    assert not result.ok
    assert result.first_violation == 0
    assert result.check == "normalization"


def test_increasing_rate_function_fails_monotonicity():
    lam = table_rate_function([1.0, 0.9, 0.95] + [0.5] * 10)
    result = validate_rate_function(lam, 0.4, 0.2, [0] * 12, 9)
    assert not result.ok
    assert result.check == "monotonicity"
    assert result.first_violation == 2


def test_nonvanishing_geometric_fails_limit():
    result = validate_rate_function(geometric_rate_function(1.0), 0.2, 0.2, [0] * 6, 5)
    assert not result.ok
    assert result.check == "limit"


def test_rate_function_agreement_with_certificates_on_grid():
    key = rng.split(2024, "lemma-grid")
    for trial in range(25):
        q = 0.9 * rng.uniform(key, 3 * trial)
        p = (0.98 - q) * rng.uniform(key, 3 * trial + 1)
        tau = rng.randint(key, 3 * trial + 2, 9)
        rho = bounded_delay_rate(BoundedDelayRecursion(q, p, tau)).rho
        delays = [min(k, tau) for k in range(81)]
        assert validate_rate_function(geometric_rate_function(rho), q, p, delays, 80).ok


# ---------------------------------------------------------------------------
# polynomial bounds for growing delays
# ---------------------------------------------------------------------------


def test_growing_delay_bound_frozen():
    spec = GrowthDelaySpec(alpha=0.5, beta=0.0)
    assert growing_delay_bound(spec, 0.0, 0.8, 0) == 1.0
    assert growing_delay_bound(spec, 0.0, 0.8, 2) == GROW_BOUND_K2
    assert growing_delay_eta(0.0, 0.8, 0.5) == ETA_P08_A05


def test_growing_delay_bound_monotone_and_vanishing():
    spec = GrowthDelaySpec(alpha=0.5, beta=0.5)
    values = [growing_delay_bound(spec, 0.0, 0.8, k) for k in range(0, 4000, 37)]
    assert values[0] == 1.0
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] < 0.1


def test_growing_delay_bound_rejects_inadmissible():
    with pytest.raises(ValueError, match="inadmissible-parameters"):
        growing_delay_bound(GrowthDelaySpec(0.5, 0.0), 0.6, 0.4, 3)


# ---------------------------------------------------------------------------
# coupled recursions
# ---------------------------------------------------------------------------


def test_coupled_admissible_contractive_frozen_examples():
    rec = CoupledRecursion(flavor="contractive", tau=5, q=0.9, p=0.1, r=1.1)
    result = coupled_admissible(rec, 100)
    assert not result.ok
    assert "exceeds" in result.reason

    rec = CoupledRecursion(flavor="contractive", tau=4, q=0.95, p=0.1, r=1.1)
    assert coupled_admissible(rec, 100).ok


def test_coupled_admissible_unit_q_zero_p():
    rec = CoupledRecursion(flavor="unit-q", tau=7, p=0.0, r=0.0)
    assert coupled_admissible(rec, 50).ok


def test_coupled_admissible_unit_q_sum_condition():
    # (tau+1) * p = 0.3 vs r = 0.25 fails everywhere.
    rec = CoupledRecursion(flavor="unit-q", tau=2, p=0.1, r=0.25)
    result = coupled_admissible(rec, 10)
    assert not result.ok
    assert "k=0" in result.reason


def test_coupled_bounds_unit_q_zero_error():
    rec = CoupledRecursion(flavor="unit-q", tau=3, p=0.1, r=0.5)
    bounds = coupled_bounds(rec, V0=3.0, K=40)
    assert np.all(bounds.v == 3.0)
    assert np.all(bounds.weighted_x_sum == 3.0)


def test_coupled_bounds_contractive_zero_error_is_q_power():
    rec = CoupledRecursion(flavor="contractive", tau=1, q=0.8, p=0.05, r=0.5)
    bounds = coupled_bounds(rec, V0=2.0, K=30)
    expected = 2.0 * 0.8 ** np.arange(32)
    assert np.allclose(bounds.v, expected, rtol=1e-14)


def test_coupled_bounds_contractive_frozen_example():
    rec = CoupledRecursion(flavor="contractive", tau=0, q=0.5, p=0.1, r=0.5, e=0.5)
    bounds = coupled_bounds(rec, V0=1.0, K=0)
    assert bounds.v[1] == 1.0


def test_coupled_bounds_rejects_inadmissible():
    rec = CoupledRecursion(flavor="contractive", tau=5, q=0.9, p=0.1, r=1.1)
    with pytest.raises(ValueError, match="inadmissible-recursion"):
        coupled_bounds(rec, V0=1.0, K=10)


def test_coupled_recursion_validation():
    with pytest.raises(ValueError):
        CoupledRecursion(flavor="unit-q", tau=1, q=0.9)
    with pytest.raises(ValueError):
        CoupledRecursion(flavor="contractive", tau=1, q=0.5, p=-0.1, r=1.0)
    with pytest.raises(ValueError):
        CoupledRecursion(flavor="contractive", tau=1, q=0.5, p=0.1, r=0.0)
    with pytest.raises(ValueError):
        CoupledRecursion(flavor="contractive", tau=1, q=[0.5, 1.0], p=0.1, r=1.0, q_lower=0.7)
    rec = CoupledRecursion(flavor="contractive", tau=1, q=[0.5, 1.0, 0.5], p=0.1, r=1.0)
    assert rec.q_lower == 0.5


def test_coupled_recursion_contractive_allows_empty_window():
    # p = 0 is the no-delay case; admissibility then ignores the r/p cap.
    rec = CoupledRecursion(flavor="contractive", tau=0, q=0.5, p=0.0, r=1.0)
    assert coupled_admissible(rec, 10)


# ---------------------------------------------------------------------------
# worst-case traces and verification
# ---------------------------------------------------------------------------


def test_worst_case_trace_pure_geometric():
    trace = worst_case_trace(q=0.8, p=0.0, tau=0, V0=1.0, K=20)
    assert np.allclose(trace.V, 0.8 ** np.arange(21), rtol=1e-14)


def test_worst_case_trace_frozen_unroll():
    trace = worst_case_trace(q=0.0, p=0.5, tau=1, V0=1.0, K=6)
    assert list(trace.V) == [1.0, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125]


def test_worst_case_trace_meets_envelope():
    for q, p, tau in [(0.5, 0.3, 3), (0.0, 0.9, 7), (0.2, 0.05, 0), (0.89, 0.1, 12)]:
        trace = worst_case_trace(q, p, tau, V0=1.0, K=300)
        rho = bounded_delay_rate(BoundedDelayRecursion(q, p, tau)).rho
        envelope = rho ** np.arange(301)
        assert np.all(trace.V <= envelope * (1.0 + 1e-12))


def test_sub_equality_traces_stay_under_envelope():
    key = rng.split(7, "sub-equality")
    for trial in range(30):
        tkey = rng.subkey(key, trial)
        q = 0.85 * rng.uniform(tkey, 0)
        p = (0.95 - q) * rng.uniform(tkey, 1)
        tau = rng.randint(tkey, 2, 7)
        K = 150
        delays = [rng.randint(tkey, 10 + k, min(k, tau) + 1) for k in range(K + 1)]
        damping = [rng.uniform(tkey, 1000 + k) for k in range(K)]
        V = oracle_max_recursion(q, p, delays, 1.0, K, damping)
        rho = bounded_delay_rate(BoundedDelayRecursion(q, p, tau)).rho
        for k, value in enumerate(V):
            assert value <= rho**k * (1.0 + 1e-12)


def test_verify_trace_passes_with_equality_on_worst_case():
    trace = worst_case_trace(q=0.5, p=0.3, tau=3, V0=1.0, K=120)
    verdict = verify_trace(trace, BoundedDelayRecursion(q=0.5, p=0.3, tau=3))
    assert verdict.passed
    assert verdict.tight


def test_verify_trace_flags_inflated_index():
    trace = worst_case_trace(q=0.5, p=0.3, tau=3, V0=1.0, K=60)
    V = trace.V.copy()
    V[17] *= 1.5
    bad = Trace(V=V, delays=trace.delays)
    verdict = verify_trace(bad, BoundedDelayRecursion(q=0.5, p=0.3, tau=3))
    assert not verdict.passed
    assert verdict.first_violation == 16
    assert verdict.check == "recursion"
    assert verdict.lhs > verdict.rhs
    assert verdict.summary() == "FAIL k=16"


def test_verify_trace_window_modes_agree_on_constant_delays():
    trace = worst_case_trace(q=0.3, p=0.4, tau=4, V0=2.0, K=80)
    rec = BoundedDelayRecursion(q=0.3, p=0.4, tau=4)
    assert verify_trace(trace, rec, window="declared").passed
    assert verify_trace(trace, rec, window="trace").passed


def test_verify_trace_coupled_equality_construction():
    # Build a trace meeting the unit-q sum form with equality, then verify.
    key = rng.split(99, "coupled-trace")
    K, tau = 60, 3
    p, r = 0.05, 0.5  # (tau+1) p = 0.2 <= r
    W = np.array([0.1 * rng.uniform(key, k) for k in range(K + 1)])
    e = np.array([0.01 * rng.uniform(key, 1000 + k) for k in range(K + 1)])
    X = np.array([0.005 * rng.uniform(key, 2000 + k) for k in range(K + 1)])
    V = np.empty(K + 1)
    V[0] = 5.0
    for k in range(K):
        lo = max(0, k - tau)
        V[k + 1] = V[k] + p * W[lo : k + 1].sum() - r * W[k] + e[k] - X[k]
    assert np.all(V >= 0)
    delays = np.minimum(np.arange(K + 1), tau)
    trace = Trace(V=V, delays=delays, W=W, X=X, e=e)
    rec = CoupledRecursion(flavor="unit-q", tau=tau, p=p, r=r, e=e)
    verdict = verify_trace(trace, rec)
    assert verdict.passed
    assert verdict.tight


def test_verify_trace_coupled_requires_w():
    trace = worst_case_trace(q=0.5, p=0.3, tau=2, V0=1.0, K=10)
    rec = CoupledRecursion(flavor="unit-q", tau=2, p=0.0, r=0.0)
    with pytest.raises(ValueError, match="missing-series"):
        verify_trace(trace, rec)


def test_verify_trace_coupled_flags_violation():
    K, tau = 30, 2
    W = np.zeros(K + 1)
    V = np.ones(K + 1)
    V[10] = 50.0
    delays = np.minimum(np.arange(K + 1), tau)
    trace = Trace(V=V, delays=delays, W=W)
    rec = CoupledRecursion(flavor="unit-q", tau=tau, p=0.1, r=0.4)
    verdict = verify_trace(trace, rec)
    assert not verdict.passed
    assert verdict.first_violation == 9


# ---------------------------------------------------------------------------
# trace container and serialization
# ---------------------------------------------------------------------------


def test_trace_validation_errors():
    with pytest.raises(ValueError):
        Trace(V=[-1.0, 0.5], delays=[0, 0])
    with pytest.raises(ValueError):
        Trace(V=[1.0, 0.5], delays=[0, 2])
    with pytest.raises(ValueError):
        Trace(V=[1.0, 0.5], delays=[0])
    with pytest.raises(ValueError):
        Trace(V=[1.0, 0.5], delays=[0, 1], W=[1.0, -2.0])


def test_trace_csv_round_trip(tmp_path):
    trace = worst_case_trace(q=0.4, p=0.2, tau=2, V0=1.5, K=12)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    assert np.array_equal(back.V, trace.V)
    assert np.array_equal(back.delays, trace.delays)
    assert back.W is None and back.X is None and back.e is None
    # Rewrite must be byte-identical.
    second = tmp_path / "again.csv"
    write_trace_csv(back, second)
    assert path.read_bytes() == second.read_bytes()


def test_trace_csv_round_trip_full_columns(tmp_path):
    K = 9
    V = np.linspace(1.0, 0.1, K + 1)
    trace = Trace(
        V=V,
        delays=np.minimum(np.arange(K + 1), 3),
        W=V * 0.5,
        X=V * 0.25,
        e=np.full(K + 1, 1e-3),
        step_sizes=np.full(K + 1, 0.125),
    )
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    for name in ("V", "W", "X", "e", "step_sizes"):
        assert np.array_equal(getattr(back, name), getattr(trace, name))
    header = path.read_text().splitlines()[0]
    assert header == "k,V,W,X,e,tau,gamma"


def test_certificate_kv_serialization():
    cert = bounded_delay_rate(BoundedDelayRecursion(q=0.5, p=0.3, tau=3))
    text = certificate_to_kv(cert)
    lines = text.splitlines()
    assert lines == sorted(lines)
    assert "admissible = true" in lines
    assert f"rho = {RHO_HALF_03_TAU3!r}" in text


def test_certificate_invariants():
    with pytest.raises(ValueError):
        RateCertificate(kind="geometric", admissible=True, params={"rho": 1.2})
    with pytest.raises(ValueError):
        RateCertificate(kind="polynomial", admissible=True, params={"eta": -0.1})
    cert = RateCertificate(kind="asymptotic-only", admissible=True)
    assert cert.kind == "asymptotic-only"
