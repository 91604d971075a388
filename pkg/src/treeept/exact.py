"""Exact entropy partial transport through a one-node extension.

Adding an isolated node ``s`` turns the partial problem into a balanced one:
``mu^ = mu + nu(T) delta_s`` and ``nu^ = nu + mu(T) delta_s`` with cost

    c^(x, y) = b (d_T(x, y) - lam)   x, y in T
    c^(x, s) = w1(x)                 mass of mu that is destroyed
    c^(s, y) = w2(y)                 mass of nu that is created
    c^(s, s) = 0

The balanced transportation problem is solved exactly as an LP (HiGHS dual
simplex) and certified with complementary slackness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .params import EptParams, ParameterError
from .tree import RootedTree, TreeMeasure, subtree_cumulative_masses

__all__ = [
    "SolverError",
    "DualInfeasibleError",
    "ExtendedProblem",
    "TransportPlan",
    "RestrictedPlan",
    "Calibration",
    "DualFunction",
    "extend_problem",
    "solve_exact",
    "solve_transport",
    "restrict_plan",
    "reconstruct_extended",
    "exact_ept",
    "exact_metric",
    "plan_mass",
    "calibrate_lambda",
    "partial_transport_value",
    "dual_value",
    "random_dual_function",
    "optimal_dual_function",
]

PLAN_ATOL = 1e-9


class SolverError(RuntimeError):
    """The LP solver failed on a finite balanced instance (should not happen)."""


class DualInfeasibleError(ValueError):
    """A candidate dual function violates the Lipschitz or box constraints."""


@dataclass(frozen=True, eq=False)
class ExtendedProblem:
    """Balanced transport instance over ``supp(mu) + [s]`` x ``supp(nu) + [s]``.

    The last row and the last column belong to the added node ``s``.
    """

    cost: np.ndarray
    mu_hat: np.ndarray
    nu_hat: np.ndarray
    source_nodes: np.ndarray
    sink_nodes: np.ndarray
    lam: float
    b: float

    @property
    def shape(self) -> tuple:
        return self.cost.shape

    @property
    def total_mass(self) -> float:
        return float(self.mu_hat.sum())


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Optimal coupling of an :class:`ExtendedProblem` with its duals."""

    matrix: np.ndarray
    objective: float
    row_duals: Optional[np.ndarray] = None
    col_duals: Optional[np.ndarray] = None

    @property
    def flows(self) -> list:
        """Sparse ``(source index, sink index, mass)`` triples."""
        rows, cols = np.nonzero(self.matrix)
        return [(int(i), int(j), float(self.matrix[i, j])) for i, j in zip(rows, cols)]


@dataclass(frozen=True, eq=False)
class RestrictedPlan:
    """Part of an extended plan inside ``T x T`` plus the marginal densities."""

    gamma: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    source_nodes: np.ndarray
    sink_nodes: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.gamma.sum())


def _lam(p: EptParams, lam: Optional[float]) -> float:
    if lam is None:
        return p.lam
    lam = float(lam)
    if not math.isfinite(lam):
        raise ParameterError("lambda must be finite")
    return lam


def extend_problem(
    t: RootedTree,
    mu: TreeMeasure,
    nu: TreeMeasure,
    p: EptParams,
    lam: Optional[float] = None,
) -> ExtendedProblem:
    """Build the one-node-extended balanced instance.

    ``lam`` overrides ``p.lam``; the oracle accepts any real multiplier so
    that it can sweep negative values during calibration. Only nodes with
    positive mass become rows/columns. Two empty measures give a 1x1 problem
    with zero mass.
    """
    mu.check_on(t)
    nu.check_on(t)
    lam = _lam(p, lam)
    xs, ys = mu.nodes, nu.nodes
    cost = np.zeros((xs.size + 1, ys.size + 1))
    if xs.size and ys.size:
        cost[:-1, :-1] = p.b * (t.distance_matrix(xs, ys) - lam)
    cost[:-1, -1] = p.w1.values(t, xs)
    cost[-1, :-1] = p.w2.values(t, ys)
    mu_hat = np.append(mu.masses, nu.total)
    nu_hat = np.append(nu.masses, mu.total)
    return ExtendedProblem(
        cost=cost,
        mu_hat=mu_hat,
        nu_hat=nu_hat,
        source_nodes=xs.copy(),
        sink_nodes=ys.copy(),
        lam=lam,
        b=p.b,
    )


def _transport_lp(n_rows: int, n_cols: int) -> sp.csr_matrix:
    size = n_rows * n_cols
    idx = np.arange(size)
    rows = np.concatenate([idx // n_cols, n_rows + idx % n_cols])
    return sp.csr_matrix(
        (np.ones(2 * size), (rows, np.concatenate([idx, idx]))),
        shape=(n_rows + n_cols, size),
    )


def solve_transport(
    cost: np.ndarray, a: np.ndarray, b: np.ndarray, certify: bool = True
) -> TransportPlan:
    """Exact balanced transportation problem ``min <cost, P>`` with marginals ``a``, ``b``.

    Costs may have any sign. With ``certify`` the returned plan is checked
    for primal feasibility and complementary slackness against the LP duals.
    """
    cost = np.asarray(cost, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = cost.shape
    if a.shape != (n,) or b.shape != (m,):
        raise ValueError(f"marginals {a.shape}, {b.shape} do not match cost {cost.shape}")
    scale = max(1.0, float(a.sum()), float(b.sum()))
    if abs(a.sum() - b.sum()) > 1e-12 * scale:
        raise ValueError(f"unbalanced marginals: {a.sum()} vs {b.sum()}")
    if a.sum() == 0:
        return TransportPlan(np.zeros((n, m)), 0.0, np.zeros(n), np.zeros(m))

    res = linprog(
        cost.ravel(),
        A_eq=_transport_lp(n, m),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
            "presolve": False,
        },
    )
    if res.status != 0:
        raise SolverError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    plan[plan < 1e-15 * scale] = 0.0
    duals = np.asarray(res.eqlin.marginals)
    u, v = duals[:n], duals[n:]
    objective = float(np.sum(cost * plan))
    out = TransportPlan(plan, objective, u, v)
    if certify:
        _certify(cost, a, b, out)
    return out


def _certify(cost, a, b, plan: TransportPlan, tol: float = PLAN_ATOL) -> None:
    scale = max(1.0, float(np.abs(cost).max()))
    mass_scale = max(1.0, float(a.sum()))
    if np.any(np.abs(plan.matrix.sum(axis=1) - a) > tol * mass_scale) or np.any(
        np.abs(plan.matrix.sum(axis=0) - b) > tol * mass_scale
    ):
        raise SolverError("solver returned a plan violating the marginals")
    reduced = cost - plan.row_duals[:, None] - plan.col_duals[None, :]
    if reduced.min() < -tol * scale:
        raise SolverError(f"dual infeasibility {reduced.min():.3e} in LP certificate")
    active = plan.matrix > tol * mass_scale
    if active.any() and np.abs(reduced[active]).max() > tol * scale:
        raise SolverError("complementary slackness violated in LP certificate")


def solve_exact(ep: ExtendedProblem) -> TransportPlan:
    """Optimal plan of the extended problem; its objective equals ``ET_lambda``."""
    return solve_transport(ep.cost, ep.mu_hat, ep.nu_hat)


def restrict_plan(ep: ExtendedProblem, plan: TransportPlan, tol: float = PLAN_ATOL) -> RestrictedPlan:
    """Split an extended plan into its ``T x T`` part and marginal densities.

    ``f1[i]`` is the transported fraction of the mass at ``source_nodes[i]``
    and ``f2[j]`` likewise for ``sink_nodes[j]``.
    """
    P = np.asarray(plan.matrix)
    if P.shape != ep.shape:
        raise ValueError(f"plan shape {P.shape} does not match problem {ep.shape}")
    mass_scale = max(1.0, ep.total_mass)
    if (
        np.any(P < -tol)
        or np.any(np.abs(P.sum(axis=1) - ep.mu_hat) > tol * mass_scale)
        or np.any(np.abs(P.sum(axis=0) - ep.nu_hat) > tol * mass_scale)
    ):
        raise ValueError("plan is not feasible for the extended problem")
    gamma = P[:-1, :-1].copy()
    mu, nu = ep.mu_hat[:-1], ep.nu_hat[:-1]
    f1 = np.clip(gamma.sum(axis=1) / np.where(mu > 0, mu, 1.0), 0.0, 1.0)
    f2 = np.clip(gamma.sum(axis=0) / np.where(nu > 0, nu, 1.0), 0.0, 1.0)
    return RestrictedPlan(gamma, f1, f2, ep.source_nodes, ep.sink_nodes)


def reconstruct_extended(ep: ExtendedProblem, rp: RestrictedPlan) -> np.ndarray:
    """Rebuild the extended plan from ``(gamma, f1, f2)``.

    The added node receives the untransported part ``(1 - f1) mu`` of each
    source, sends ``(1 - f2) nu`` to each sink, and keeps ``gamma(T x T)``
    on itself.
    """
    out = np.zeros(ep.shape)
    out[:-1, :-1] = rp.gamma
    out[:-1, -1] = (1.0 - rp.f1) * ep.mu_hat[:-1]
    out[-1, :-1] = (1.0 - rp.f2) * ep.nu_hat[:-1]
    out[-1, -1] = rp.gamma.sum()
    return out


def _one_sided(t: RootedTree, mu: TreeMeasure, nu: TreeMeasure, p: EptParams) -> Optional[float]:
    # nothing can be transported: every atom is destroyed or created
    if mu.total > 0 and nu.total > 0:
        return None
    return float(
        np.dot(p.w1.values(t, mu.nodes), mu.masses) + np.dot(p.w2.values(t, nu.nodes), nu.masses)
    )


def exact_ept(
    t: RootedTree,
    mu: TreeMeasure,
    nu: TreeMeasure,
    p: EptParams,
    lam: Optional[float] = None,
) -> float:
    """Exact ``ET_lambda(mu, nu)`` with tree cost (``lam`` overrides ``p.lam``)."""
    mu.check_on(t)
    nu.check_on(t)
    trivial = _one_sided(t, mu, nu, p)
    if trivial is not None:
        return trivial
    return solve_exact(extend_problem(t, mu, nu, p, lam)).objective


def exact_metric(t: RootedTree, mu: TreeMeasure, nu: TreeMeasure, p: EptParams) -> float:
    """``ET_lambda + (b lam / 2)(mu(T) + nu(T))``; a metric when ``w1 == w2``."""
    return exact_ept(t, mu, nu, p) + 0.5 * p.b * p.lam * (mu.total + nu.total)


def plan_mass(plan: TransportPlan, ep: ExtendedProblem) -> float:
    """Mass moved inside ``T x T``: every arc not touching the added node."""
    if plan.matrix.shape != ep.shape:
        raise ValueError("plan does not belong to this problem")
    return float(plan.matrix[:-1, :-1].sum())


def _solve_at(t, mu, nu, p, lam) -> tuple[float, float]:
    ep = extend_problem(t, mu, nu, p, lam)
    plan = solve_exact(ep)
    return plan.objective, plan_mass(plan, ep)


def lambda_bracket(t: RootedTree, mu: TreeMeasure, nu: TreeMeasure, p: EptParams) -> tuple[float, float]:
    """Multipliers below which nothing moves and above which ``min(mu(T), nu(T))`` moves.

    With ``M = max (w1(x) + w2(y) - b d_T(x, y))`` over support pairs, an arc
    ``x -> y`` is dearer than destroying and creating its mass exactly when
    ``lam < d_T(x, y) - (w1(x) + w2(y)) / b``, so nothing moves below
    ``-M / b``. The lower end ``min(-M, -M / b) - 1`` clears both ``-M / b``
    and ``-M``; the upper end is ``max d_T(x, y) + 1``.
    """
    if not (len(mu) and len(nu)):
        return -1.0, 1.0
    D = t.distance_matrix(mu.nodes, nu.nodes)
    W = p.w1.values(t, mu.nodes)[:, None] + p.w2.values(t, nu.nodes)[None, :]
    M = float((W - p.b * D).max())
    return min(-M, -M / p.b) - 1.0, float(D.max()) + 1.0


@dataclass(frozen=True)
class Calibration:
    """Result of matching a multiplier to a target transported mass.

    ``mass_interval`` holds the plan masses found at ``lam_low`` and
    ``lam_high``; they bracket ``target_mass``. A wide interval at a narrow
    ``lam`` bracket means the target sits inside a jump of the subgradient.
    """

    lam: float
    mass_interval: tuple
    lam_low: float
    lam_high: float
    target_mass: float
    iterations: int
    value_low: float
    value_high: float


def calibrate_lambda(
    t: RootedTree,
    mu: TreeMeasure,
    nu: TreeMeasure,
    p_base: EptParams,
    target_mass: float,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> Calibration:
    """Find ``lam`` whose optimal plans move ``target_mass`` by bisection.

    Transported mass is nondecreasing in ``lam``. At the end points the
    bracket itself is returned: ``target_mass == 0`` gives its lower end
    and ``target_mass == min(mu(T), nu(T))`` gives ``lam = max d_T + 1``.
    """
    m_bar = min(mu.total, nu.total)
    slack = 1e-12 * max(1.0, m_bar)
    if not (-slack <= target_mass <= m_bar + slack):
        raise ParameterError(f"target mass {target_mass} outside [0, {m_bar}]")
    target = min(max(target_mass, 0.0), m_bar)
    lo, hi = lambda_bracket(t, mu, nu, p_base)
    if m_bar == 0:
        v = exact_ept(t, mu, nu, p_base, lam=lo)
        return Calibration(lo, (0.0, 0.0), lo, lo, target, 0, v, v)

    v_lo, m_lo = _solve_at(t, mu, nu, p_base, lo)
    if target <= m_lo + slack:
        return Calibration(lo, (m_lo, m_lo), lo, lo, target, 0, v_lo, v_lo)
    v_hi, m_hi = _solve_at(t, mu, nu, p_base, hi)
    if target >= m_hi - slack:
        return Calibration(hi, (m_hi, m_hi), hi, hi, target, 0, v_hi, v_hi)

    it = 0
    while hi - lo > tol and it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        v_mid, m_mid = _solve_at(t, mu, nu, p_base, mid)
        if abs(m_mid - target) <= slack:
            return Calibration(mid, (m_mid, m_mid), mid, mid, target, it, v_mid, v_mid)
        if m_mid < target:
            lo, v_lo, m_lo = mid, v_mid, m_mid
        else:
            hi, v_hi, m_hi = mid, v_mid, m_mid
    return Calibration(0.5 * (lo + hi), (m_lo, m_hi), lo, hi, target, it, v_lo, v_hi)


def partial_transport_value(
    t: RootedTree,
    mu: TreeMeasure,
    nu: TreeMeasure,
    p: EptParams,
    m: float,
    tol: float = 1e-9,
) -> float:
    """Mass-constrained EPT value ``W_m = ET_lam + lam b m`` at the calibrated ``lam``.

    When ``m`` falls inside a subgradient jump, the value is that of the
    mixture of the two bracketing optimal plans that moves exactly ``m``.
    """
    cal = calibrate_lambda(t, mu, nu, p, m, tol=tol)
    m_lo, m_hi = cal.mass_interval
    # transport-plus-entropy cost of each bracketing plan, without the lam term
    cost_lo = cal.value_low + cal.lam_low * p.b * m_lo
    cost_hi = cal.value_high + cal.lam_high * p.b * m_hi
    if m_hi - m_lo <= 1e-15 * max(1.0, m_hi):
        return cost_lo
    theta = (m_hi - cal.target_mass) / (m_hi - m_lo)
    return theta * cost_lo + (1.0 - theta) * cost_hi


@dataclass(frozen=True, eq=False)
class DualFunction:
    """Tree function ``f(x) = s + sum over the root path of slope * length``."""

    root_value: float
    edge_slope: np.ndarray

    def slope_bound_ok(self, b: float, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.edge_slope) <= b * (1 + tol)))

    def evaluate(self, t: RootedTree) -> np.ndarray:
        if self.edge_slope.shape != (t.node_count,):
            raise ValueError("edge_slope must have one entry per node")
        vals = np.empty(t.node_count)
        vals[t.root] = self.root_value
        steps = self.edge_slope * t.edge_length
        for nodes in t.levels()[1:]:
            vals[nodes] = vals[t.parent[nodes]] + steps[nodes]
        return vals


def check_dual_feasible(
    t: RootedTree,
    mu: TreeMeasure,
    nu: TreeMeasure,
    p: EptParams,
    f: DualFunction,
    tol: float = 1e-12,
) -> np.ndarray:
    """Raise :class:`DualInfeasibleError` unless ``f`` is admissible on the supports.

    Returns the values of ``f`` at every node.
    """
    vals = f.evaluate(t)
    support = np.union1d(mu.nodes, nu.nodes)
    if support.size == 0:
        return vals
    half = 0.5 * p.b * p.lam
    fv = vals[support]
    upper = p.w1.values(t, support) + half
    lower = -p.w2.values(t, support) - half
    scale = tol * max(1.0, float(np.abs(fv).max()))
    bad = np.flatnonzero(fv > upper + scale)
    if bad.size:
        x = int(support[bad[0]])
        raise DualInfeasibleError(f"f({x}) = {vals[x]} exceeds w1({x}) + b*lam/2 = {upper[bad[0]]}")
    bad = np.flatnonzero(fv < lower - scale)
    if bad.size:
        x = int(support[bad[0]])
        raise DualInfeasibleError(f"f({x}) = {vals[x]} below -w2({x}) - b*lam/2 = {lower[bad[0]]}")
    D = t.distance_matrix(support, support)
    excess = np.abs(fv[:, None] - fv[None, :]) - p.b * D
    if excess.max() > scale:
        i, j = np.unravel_index(int(excess.argmax()), excess.shape)
        raise DualInfeasibleError(
            f"|f({support[i]}) - f({support[j]})| exceeds b * d_T by {excess[i, j]:.3e}"
        )
    return vals


def dual_value(
    t: RootedTree,
    mu: TreeMeasure,
    nu: TreeMeasure,
    p: EptParams,
    f: DualFunction,
    check: bool = True,
) -> float:
    """``int f d(mu - nu) - (b lam / 2)(mu(T) + nu(T))`` for an admissible ``f``.

    By weak duality the result never exceeds :func:`exact_ept`.
    """
    vals = check_dual_feasible(t, mu, nu, p, f) if check else f.evaluate(t)
    return (
        float(np.dot(vals[mu.nodes], mu.masses) - np.dot(vals[nu.nodes], nu.masses))
        - 0.5 * p.b * p.lam * (mu.total + nu.total)
    )


def root_value_interval(p: EptParams, alpha: Optional[float] = None) -> tuple[float, float]:
    alpha = p.alpha if alpha is None else alpha
    half = 0.5 * p.b * p.lam
    return -p.w2.at_root - half + alpha, p.w1.at_root + half - alpha


def random_dual_function(
    t: RootedTree,
    p: EptParams,
    rng: np.random.Generator,
    alpha: float = 0.0,
    slope_bound: Optional[float] = None,
) -> DualFunction:
    """Draw a root value from the admissible interval and uniform edge slopes.

    With the default ``slope_bound = b`` the draw lies in the relaxed class
    used by the closed form. With ``slope_bound <= min(a1 of w1, a1 of w2)``
    the draw also respects the full box constraints, so it is admissible for
    the exact dual.
    """
    bound = p.b if slope_bound is None else min(slope_bound, p.b)
    lo, hi = root_value_interval(p, alpha)
    return DualFunction(float(rng.uniform(lo, hi)), rng.uniform(-bound, bound, t.node_count))


def optimal_dual_function(
    t: RootedTree, mu: TreeMeasure, nu: TreeMeasure, p: EptParams
) -> DualFunction:
    """Maximiser of ``int f d(mu - nu)`` over the relaxed class at ``p.alpha``."""
    cm = subtree_cumulative_masses(t, mu)
    cn = subtree_cumulative_masses(t, nu)
    lo, hi = root_value_interval(p)
    s = hi if mu.total >= nu.total else lo
    return DualFunction(s, p.b * np.sign(cm - cn))
