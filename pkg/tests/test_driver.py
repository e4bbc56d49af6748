"""Adaptive driver loop and theory diagnostics."""

import math

import numpy as np
import pytest

from goafem.driver import (DriverConfig, LAMBDA_RED, estimator_reduction_check,
                           fit_rate, quasi_error, run, run_uniform,
                           total_error)
from goafem.problem import manufactured


@pytest.fixture(scope="module")
def smooth_history():
    return run(manufactured("square-smooth"), DriverConfig(max_iterations=10))


# ----------------------------------------------------------------------
# scalar helpers

def test_quasi_error_arithmetic():
    assert quasi_error(0.3, 1.0, 0.1) == pytest.approx(math.sqrt(0.19))
    assert quasi_error(0.7, 123.0, 0.0) == 0.7
    assert quasi_error(0.0, 2.0, 0.25) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        quasi_error(-1.0, 1.0, 1.0)


def test_total_error_arithmetic():
    assert total_error(3.0, 4.0) == 5.0
    assert total_error(2.5, 0.0) == 2.5


def test_fit_rate_two_points():
    assert fit_rate([100.0, 400.0], [1e-1, 5e-2], window=1.0) \
        == pytest.approx(-0.5)


def test_fit_rate_constant_and_power_law():
    N = np.array([10.0, 20.0, 40.0, 80.0, 160.0])
    assert fit_rate(N, np.ones(5), window=1.0) == pytest.approx(0.0, abs=1e-12)
    assert fit_rate(N, 1.0 / N, window=1.0) == pytest.approx(-1.0, abs=1e-12)


def test_fit_rate_degenerate_rejected():
    with pytest.raises(ValueError):
        fit_rate([1.0], [1.0], window=1.0)


def test_estimator_reduction_check_trivial():
    # empty marked set and unchanged mesh: both sides equal
    assert estimator_reduction_check(4.0, 0.0, 4.0)
    assert not estimator_reduction_check(4.0, 1.0, 4.0)


# ----------------------------------------------------------------------
# config validation

def test_config_validation():
    with pytest.raises(ValueError):
        DriverConfig(theta=0.0)
    with pytest.raises(ValueError):
        DriverConfig(theta=1.2)
    with pytest.raises(ValueError):
        DriverConfig(strategy="tarot")
    with pytest.raises(ValueError):
        DriverConfig(gamma_p=-1.0)


# ----------------------------------------------------------------------
# the loop

def test_records_are_complete_and_monotone(smooth_history):
    h = smooth_history
    assert len(h.records) == 10
    Ns = [r.N for r in h.records]
    assert all(n2 > n1 for n1, n2 in zip(Ns, Ns[1:]))
    for r in h.records:
        assert r.eta > 0 and r.zeta > 0
        assert r.osc_p >= 0 and r.osc_d >= 0
        assert r.energy_err_p >= 0 and r.energy_err_d >= 0


def test_dorfler_ratio_at_least_theta_squared(smooth_history):
    theta2 = smooth_history.config.theta ** 2
    for r in smooth_history.records[:-1]:
        assert r.dorfler_ratio_p >= theta2 * (1 - 1e-12)
        assert r.dorfler_ratio_d >= theta2 * (1 - 1e-12)


def test_goal_error_within_bound(smooth_history):
    for r in smooth_history.records:
        assert r.goal_err <= r.goal_bound + 1e-10


def test_estimator_reduction_every_iteration(smooth_history):
    for r in smooth_history.records[:-1]:
        assert r.est_reduction_ok == 1.0
        assert r.est_monotone_ok == 1.0


def test_marked_and_refined_counts(smooth_history):
    for r in smooth_history.records[:-1]:
        assert r.marked >= 1
        assert r.refined >= r.marked


def test_gamma_rule_balances_initial_terms(smooth_history):
    h = smooth_history
    r0 = h.records[0]
    assert h.gamma_p == pytest.approx(r0.energy_err_p ** 2 / r0.eta ** 2)
    assert r0.Q_p == pytest.approx(math.sqrt(2.0) * r0.energy_err_p, rel=1e-12)


def test_history_final_state(smooth_history):
    final = smooth_history.final
    assert final["space"].num_dofs == smooth_history.records[-1].N
    assert len(final["u"].coeffs) == final["space"].num_dofs


def test_quasi_error_total_error_relation(smooth_history):
    # E <= Q / sqrt(min(1, gamma)) follows from osc <= eta elementwise
    g = min(1.0, smooth_history.gamma_p)
    for r in smooth_history.records:
        assert r.E_p <= r.Q_p / math.sqrt(g) + 1e-12


def test_b_zero_quasi_orthogonality():
    h = run(manufactured("square-poly"), DriverConfig(max_iterations=8))
    for r in h.records[1:]:
        assert r.qo_rel_defect <= 1e-8


def test_dof_budget_stops_run():
    h = run(manufactured("square-smooth"),
            DriverConfig(max_iterations=40, dof_budget=300))
    assert h.records[-1].N >= 300
    assert len(h.records) < 40


def test_min_cardinality_strategy_runs():
    h = run(manufactured("square-smooth"),
            DriverConfig(max_iterations=5, strategy="min-cardinality"))
    assert len(h.records) == 5
    # the smaller of the two Dorfler sets still satisfies its own bulk
    for r in h.records[:-1]:
        assert max(r.dorfler_ratio_p, r.dorfler_ratio_d) \
            >= h.config.theta ** 2 * (1 - 1e-12)


def test_track_data_estimates():
    h = run(manufactured("square-smooth"),
            DriverConfig(max_iterations=3, track_data_estimates=True))
    vals = [r.data_eta_max for r in h.records]
    assert all(np.isfinite(vals))
    assert vals[1] <= vals[0] + 1e-12


def test_on_iteration_callback():
    seen = []

    def cb(k, mesh, space, u, z, etaf, zetaf):
        seen.append((k, space.num_dofs))

    run(manufactured("square-smooth"), DriverConfig(max_iterations=3),
        on_iteration=cb)
    assert [k for k, _ in seen] == [0, 1, 2]


def test_determinism_of_runs():
    cfg = DriverConfig(max_iterations=6)
    h1 = run(manufactured("square-smooth"), cfg)
    h2 = run(manufactured("square-smooth"), cfg)
    for r1, r2 in zip(h1.records, h2.records):
        assert r1.row() == r2.row()


def test_uniform_baseline():
    h = run_uniform(manufactured("square-smooth"), rounds=4)
    Ns = [r.N for r in h.records]
    assert all(n2 > n1 for n1, n2 in zip(Ns, Ns[1:]))
    errs = [r.energy_err_p for r in h.records]
    assert errs[-1] < errs[0]


def test_reference_errors_for_case_without_exact_dual():
    case = manufactured("lshape-goal")
    case.exact_u = None     # force the reference path
    h = run(case, DriverConfig(max_iterations=4, dof_budget=4000,
                               reference_errors=True))
    assert h.error_provenance == "reference"
    for r in h.records:
        assert np.isfinite(r.energy_err_p)
        assert np.isfinite(r.goal_err)
        assert r.goal_err <= r.goal_bound + 1e-10


def test_adaptive_energy_rate_square():
    h = run(manufactured("square-smooth"),
            DriverConfig(max_iterations=25, dof_budget=20_000))
    rate = h.fit_rate("energy_err_p")
    assert -0.75 <= rate <= -0.3
