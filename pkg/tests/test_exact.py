import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeept.closed_form import regularized_ept
from treeept.exact import (
    DualFunction,
    DualInfeasibleError,
    TransportPlan,
    calibrate_lambda,
    dual_value,
    exact_ept,
    exact_metric,
    extend_problem,
    lambda_bracket,
    optimal_dual_function,
    partial_transport_value,
    plan_mass,
    random_dual_function,
    reconstruct_extended,
    restrict_plan,
    solve_exact,
    solve_transport,
)
from treeept.params import EptParams, ParameterError
from treeept.tree import TreeMeasure

from _helpers import direct_partial_lp, random_measure, random_params, random_tree, vertex_enumeration


# -- extension ----------------------------------------------------------------


def test_extend_unit_star(star, unit_params, delta):
    ep = extend_problem(star, delta(1), delta(2), unit_params)
    np.testing.assert_array_equal(ep.cost, [[1.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(ep.mu_hat, [1.0, 1.0])
    np.testing.assert_array_equal(ep.nu_hat, [1.0, 1.0])


def test_extend_same_point_lambda_zero(star, delta):
    p = EptParams.symmetric(lam=0.0)
    ep = extend_problem(star, delta(0), delta(0), p)
    assert ep.cost[0, 0] == 0.0
    assert ep.cost[-1, -1] == 0.0


def test_extend_balances_mass(star, unit_params, delta):
    ep = extend_problem(star, delta(1, 2.0), delta(2), unit_params)
    assert ep.mu_hat.sum() == ep.nu_hat.sum() == 3.0


def test_extend_negative_costs(chain, delta):
    p = EptParams.symmetric(lam=10.0)
    ep = extend_problem(chain, delta(1), delta(2), p)
    assert ep.cost[0, 0] == pytest.approx(3.0 - 10.0)
    assert solve_exact(ep).objective == pytest.approx(-7.0)


def test_extend_weights(chain, delta):
    p = EptParams.symmetric(b=2.0, a1=0.5, a0=0.25)
    ep = extend_problem(chain, delta(1), delta(2), p)
    assert ep.cost[0, 1] == pytest.approx(0.5 * 2.0 + 0.25)
    assert ep.cost[1, 0] == pytest.approx(0.5 * 5.0 + 0.25)


def test_lambda_override_rejects_nonfinite(star, unit_params, delta):
    with pytest.raises(ParameterError):
        extend_problem(star, delta(1), delta(2), unit_params, lam=float("inf"))


# -- solving ---------------------------------------------------------------


def test_solve_unit_star(star, unit_params, delta):
    ep = extend_problem(star, delta(1), delta(2), unit_params)
    plan = solve_exact(ep)
    assert plan.objective == pytest.approx(1.0, abs=1e-12)
    assert plan.flows == [(0, 0, 1.0), (1, 1, 1.0)]
    rp = restrict_plan(ep, plan)
    np.testing.assert_allclose(rp.gamma, [[1.0]])
    np.testing.assert_allclose(rp.f1, [1.0])
    np.testing.assert_allclose(rp.f2, [1.0])


def test_solve_heavier_source(star, unit_params, delta):
    ep = extend_problem(star, delta(1, 2.0), delta(2), unit_params)
    value = solve_exact(ep).objective
    assert value == pytest.approx(vertex_enumeration(ep.cost, ep.mu_hat, ep.nu_hat), abs=1e-12)
    assert value == pytest.approx(2.0, abs=1e-12)


def test_identity_instance(rng):
    t = random_tree(rng, 10)
    mu = random_measure(rng, t, 4)
    p = random_params(rng, lam=0.7)
    ep = extend_problem(t, mu, mu, p)
    plan = solve_exact(ep)
    assert plan.objective == pytest.approx(-p.b * p.lam * mu.total, abs=1e-12)
    assert plan_mass(plan, ep) == pytest.approx(mu.total, abs=1e-12)
    rp = restrict_plan(ep, plan)
    np.testing.assert_allclose(rp.gamma, np.diag(mu.masses), atol=1e-12)
    np.testing.assert_allclose(rp.f1, 1.0)
    np.testing.assert_allclose(rp.f2, 1.0)


def test_all_slack_plan_restricts_to_zero(star, unit_params, delta):
    ep = extend_problem(star, delta(1), delta(2), unit_params)
    slack = TransportPlan(np.array([[0.0, 1.0], [1.0, 0.0]]), 2.0)
    rp = restrict_plan(ep, slack)
    assert rp.mass == 0.0
    np.testing.assert_array_equal(rp.f1, [0.0])
    np.testing.assert_array_equal(rp.f2, [0.0])
    np.testing.assert_array_equal(reconstruct_extended(ep, rp), slack.matrix)


def test_restrict_rejects_infeasible(star, unit_params, delta):
    ep = extend_problem(star, delta(1), delta(2), unit_params)
    with pytest.raises(ValueError, match="not feasible"):
        restrict_plan(ep, TransportPlan(np.array([[1.0, 1.0], [1.0, 0.0]]), 0.0))


def test_solver_rejects_unbalanced():
    with pytest.raises(ValueError, match="unbalanced"):
        solve_transport(np.zeros((2, 2)), np.array([1.0, 1.0]), np.array([1.0, 2.0]))


def test_solver_vs_vertex_enumeration(rng):
    for _ in range(25):
        n, m = (int(v) for v in rng.integers(1, 4, 2))
        cost = rng.normal(size=(n, m))
        a = rng.uniform(0.1, 1.0, n)
        b = rng.uniform(0.1, 1.0, m)
        b *= a.sum() / b.sum()
        assert solve_transport(cost, a, b).objective == pytest.approx(
            vertex_enumeration(cost, a, b), abs=1e-10
        )


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_extension_equals_partial_formulation(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(2, 16)))
    mu = random_measure(rng, t, int(rng.integers(1, 6)))
    nu = random_measure(rng, t, int(rng.integers(1, 6)))
    p = random_params(rng, b=rng.uniform(0.5, 2.0), lam=rng.uniform(0, 3))
    assert exact_ept(t, mu, nu, p) == pytest.approx(direct_partial_lp(t, mu, nu, p), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_round_trip(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 12)
    mu, nu = random_measure(rng, t, 5), random_measure(rng, t, 4)
    p = random_params(rng, lam=rng.uniform(0, 3))
    ep = extend_problem(t, mu, nu, p)
    plan = solve_exact(ep)
    rp = restrict_plan(ep, plan)
    assert np.all(rp.gamma.sum(axis=1) <= mu.masses + 1e-9)
    assert np.all(rp.gamma.sum(axis=0) <= nu.masses + 1e-9)
    for f in (rp.f1, rp.f2):
        assert np.all((0 <= f) & (f <= 1))
    np.testing.assert_allclose(reconstruct_extended(ep, rp), plan.matrix, atol=1e-9)


# -- values ------------------------------------------------------------------


def test_exact_worked_examples(star, unit_params, delta):
    assert exact_ept(star, delta(1), delta(2), unit_params) == pytest.approx(1.0, abs=1e-12)
    assert exact_ept(star, delta(1), delta(1), unit_params) == pytest.approx(-1.0, abs=1e-12)


def test_one_sided_measures(chain, delta):
    p = EptParams.symmetric(a1=0.5, a0=1.0)
    empty = TreeMeasure.empty()
    assert exact_ept(chain, delta(2, 2.0), empty, p) == pytest.approx(2.0 * (0.5 * 5.0 + 1.0))
    assert exact_ept(chain, empty, delta(1), p) == pytest.approx(0.5 * 2.0 + 1.0)
    assert exact_ept(chain, empty, empty, p) == 0.0
    assert extend_problem(chain, empty, empty, p).shape == (1, 1)


def test_exact_metric_properties(rng):
    p = EptParams.symmetric(b=1.0, lam=0.8, a1=0.3, a0=0.5)
    for _ in range(20):
        t = random_tree(rng, 10)
        mu, nu, xi, sigma = (random_measure(rng, t, 4) for _ in range(4))
        d = lambda a, b: exact_metric(t, a, b, p)  # noqa: E731
        assert d(mu, nu) == pytest.approx(d(nu, mu), abs=1e-9)
        assert d(mu, xi) <= d(mu, nu) + d(nu, xi) + 1e-9
        assert d(mu + sigma, nu + sigma) == pytest.approx(d(mu, nu), abs=1e-8)


# -- calibration -------------------------------------------------------------


def test_plan_mass_endpoints(rng):
    for _ in range(10):
        t = random_tree(rng, 12)
        mu, nu = random_measure(rng, t, 4), random_measure(rng, t, 5)
        p = random_params(rng)
        lo, hi = lambda_bracket(t, mu, nu, p)
        ep_lo = extend_problem(t, mu, nu, p, lam=lo)
        ep_hi = extend_problem(t, mu, nu, p, lam=hi)
        assert plan_mass(solve_exact(ep_lo), ep_lo) == pytest.approx(0.0, abs=1e-9)
        assert plan_mass(solve_exact(ep_hi), ep_hi) == pytest.approx(min(mu.total, nu.total), abs=1e-9)
        base = float(p.w1.values(t, mu.nodes) @ mu.masses + p.w2.values(t, nu.nodes) @ nu.masses)
        assert exact_ept(t, mu, nu, p, lam=lo) == pytest.approx(base, abs=1e-9)


def test_calibrate_unit_star_midpoint(star, unit_params, delta):
    cal = calibrate_lambda(star, delta(1), delta(2), unit_params, 0.5, tol=1e-8)
    assert cal.lam == pytest.approx(0.0, abs=1e-8)
    lo, hi = cal.mass_interval
    assert lo <= 0.5 <= hi


@pytest.mark.parametrize("target, side", [(0.0, "low"), (1.0, "high")])
def test_calibrate_endpoints(star, unit_params, delta, target, side):
    cal = calibrate_lambda(star, delta(1), delta(2), unit_params, target)
    if side == "low":
        assert cal.lam < 0.0  # below -M with M = 1 + 1 - 2 = 0
        assert cal.mass_interval == (0.0, 0.0)
    else:
        assert cal.lam > 2.0
        assert cal.mass_interval[0] == pytest.approx(1.0)


@pytest.mark.parametrize("target", [-0.1, 1.5])
def test_calibrate_rejects_target(star, unit_params, delta, target):
    with pytest.raises(ParameterError, match="outside"):
        calibrate_lambda(star, delta(1), delta(2), unit_params, target)


def test_calibrate_interior(rng):
    for _ in range(5):
        t = random_tree(rng, 15)
        mu, nu = random_measure(rng, t, 6), random_measure(rng, t, 6)
        p = random_params(rng)
        target = rng.uniform(0, min(mu.total, nu.total))
        cal = calibrate_lambda(t, mu, nu, p, target, tol=1e-7)
        lo, hi = cal.mass_interval
        assert lo - 1e-9 <= target <= hi + 1e-9
        assert cal.lam_high - cal.lam_low <= 1e-7 or lo == hi


def test_partial_value_examples(star, unit_params, delta):
    assert partial_transport_value(star, delta(1), delta(2), unit_params, 0.0) == pytest.approx(2.0)
    assert partial_transport_value(star, delta(1), delta(2), unit_params, 1.0) == pytest.approx(2.0)
    assert partial_transport_value(star, delta(1), delta(2), unit_params, 0.5) == pytest.approx(2.0, abs=1e-7)
    mu = TreeMeasure.from_mapping({1: 0.5, 2: 1.0})
    assert partial_transport_value(star, mu, mu, unit_params, mu.total) == pytest.approx(0.0, abs=1e-9)


def test_partial_value_matches_constrained_lp(chain):
    # three atoms on a chain; W_m by brute force over the mass-constrained LP
    from scipy.optimize import linprog

    p = EptParams.symmetric(a0=1.5)
    mu = TreeMeasure.from_mapping({0: 1.0, 2: 0.5})
    nu = TreeMeasure.from_mapping({1: 0.8})
    D = chain.distance_matrix(mu.nodes, nu.nodes).ravel()
    w = p.w1.values(chain, mu.nodes)
    for m in [0.0, 0.3, 0.8]:
        # moving a unit from x saves w1(x) and w2(y) = 1.5
        res = linprog(p.b * D - w - 1.5, A_ub=[[1, 0], [0, 1], [1, 1]], b_ub=[1.0, 0.5, 0.8],
                      A_eq=[[1, 1]], b_eq=[m], bounds=(0, None))
        direct = float(w @ mu.masses + 1.5 * nu.total + res.fun)
        assert partial_transport_value(chain, mu, nu, p, m, tol=1e-10) == pytest.approx(direct, abs=1e-7)


# -- duals ------------------------------------------------------------------


def test_zero_dual(star, unit_params, delta):
    f = DualFunction(0.0, np.zeros(3))
    assert dual_value(star, delta(1), delta(2), unit_params, f) == pytest.approx(-1.0)


@pytest.mark.parametrize(
    "f, match",
    [
        (DualFunction(5.0, np.zeros(3)), "exceeds w1"),
        (DualFunction(-5.0, np.zeros(3)), "below -w2"),
        (DualFunction(0.0, np.array([0.0, 1.4, -1.4])), "exceeds b"),
    ],
)
def test_infeasible_duals(star, delta, f, match):
    p = EptParams.symmetric(lam=1.0, a1=0.0, a0=1.0)
    with pytest.raises(DualInfeasibleError, match=match):
        dual_value(star, delta(1), delta(2), p, f)


def test_dual_shape_mismatch(star, unit_params, delta):
    with pytest.raises(ValueError, match="one entry per node"):
        dual_value(star, delta(1), delta(2), unit_params, DualFunction(0.0, np.zeros(2)))


def test_weak_duality(rng):
    for _ in range(5):
        t = random_tree(rng, 12)
        mu, nu = random_measure(rng, t, 4), random_measure(rng, t, 4)
        p = random_params(rng)
        exact = exact_ept(t, mu, nu, p)
        bound = min(p.w1.a1, p.w2.a1)
        for _ in range(100):
            f = random_dual_function(t, p, rng, slope_bound=bound)
            assert dual_value(t, mu, nu, p, f) <= exact + 1e-9


def test_relaxed_duals_approach_closed_form(rng):
    t = random_tree(rng, 6)
    mu, nu = random_measure(rng, t, 3), random_measure(rng, t, 2)
    p = random_params(rng)
    closed = regularized_ept(t, mu, nu, p)
    draws = [
        dual_value(t, mu, nu, p, random_dual_function(t, p, rng), check=False) for _ in range(1000)
    ]
    assert max(draws) <= closed + 1e-9
    assert max(draws) >= closed - 0.5 * abs(closed) - 0.5
    best = optimal_dual_function(t, mu, nu, p)
    assert best.slope_bound_ok(p.b)
    assert dual_value(t, mu, nu, p, best, check=False) == pytest.approx(closed, abs=1e-12)


@pytest.mark.parametrize("b", [0.25, 0.6, 1.0, 3.0])
def test_bracket_lower_end_moves_nothing(star, delta, b):
    # the no-transport threshold is -M / b, which lies below -M when b < 1
    p = EptParams.symmetric(b=b, a0=2.0)
    lo, hi = lambda_bracket(star, delta(1), delta(2), p)
    M = 4.0 - 2.0 * b
    assert lo < min(-M, -M / b)
    ep = extend_problem(star, delta(1), delta(2), p, lam=lo)
    assert plan_mass(solve_exact(ep), ep) == 0.0
    assert partial_transport_value(star, delta(1), delta(2), p, 0.0) == pytest.approx(4.0)
