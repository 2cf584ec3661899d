"""Budget-constrained optimal trades: the generic solver, optimality checks, oracle.

A trader with a belief and a budget maximizes expected utility subject to the
worst-case loss over outcomes staying within the budget. The solver works in
the subspace where prices actually respond to the state, which both removes
flat directions and pins down the canonical solution representative.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import costs, geometry
from .costs import CERTIFIED_NO, CERTIFIED_YES, CostModel, PriceVector, as_price, as_state
from .errors import DomainError, MarketInputError, NumericalError, OracleError
from .geometry import Face, OutcomeSpace
from .numerics import damped_newton, simplex_weights

logger = logging.getLogger("bregman_market.trader")

DEFAULT_SOLVE_TOL = 1e-9
# Tight-set detection threshold grows with the budget scale.
TIGHT_BASE_TOL = 1e-7


@dataclass(frozen=True)
class TradeProblem:
    """One budget-constrained trade: model, outcome space, start state, belief, budget.

    Construction validates that the belief is expressible, the budget is
    nonnegative, and the initial state is arbitrage-free (certified directly
    or confirmed by a zero-budget probe).
    """

    model: CostModel
    space: OutcomeSpace
    q0: np.ndarray
    mu: np.ndarray
    budget: float

    def __post_init__(self):
        q0 = as_state(self.q0)
        mu = as_price(self.mu)
        if self.model.dim != self.space.dim:
            raise MarketInputError("cost model and outcome space dimensions differ")
        if q0.size != self.model.dim:
            raise MarketInputError("initial state has the wrong dimension")
        if mu.size != self.model.dim:
            raise MarketInputError("belief has the wrong dimension")
        if not (self.budget >= 0.0):
            raise MarketInputError("budget must be nonnegative")
        if not costs.in_m_tilde(self.model, self.space, mu):
            raise DomainError("belief is not expressible for this market")
        _ensure_arbitrage_free(self.model, self.space, q0, mu)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "budget", float(self.budget))


@dataclass(frozen=True)
class TradeSolution:
    """Solved trade: final state, its prices, tight outcomes, multipliers, residuals."""

    q_hat: np.ndarray
    nu_hat: PriceVector
    tight: Face
    multipliers: np.ndarray
    kkt_residuals: dict
    budget_used: float


@dataclass(frozen=True)
class KktReport:
    holds: bool
    residuals: dict


def _ensure_arbitrage_free(model: CostModel, space: OutcomeSpace, q0: np.ndarray, mu: np.ndarray):
    verdict = costs.is_arbitrage_free(model, space, q0)
    if verdict == CERTIFIED_YES:
        return
    if verdict == CERTIFIED_NO:
        raise DomainError("initial state admits arbitrage: its prices leave the payoff polytope")
    # Zero-budget probe: a holding trader must be unable to improve.
    y, lam, info = _augmented_lagrangian(model, space, q0, mu, 0.0, DEFAULT_SOLVE_TOL, None)
    q_hat = q0 + model.parallel_directions() @ y
    gain = costs.utility(model, q_hat, mu, q0)
    if gain > 1e-7 * (1.0 + abs(gain)):
        raise DomainError("initial state admits arbitrage under a zero budget")


def _constraint_values(model, space, q0, cost0, q, cost_q, budget):
    # g_w = cost(q) - cost(q0) - (q - q0).w - budget, one entry per outcome.
    return cost_q - cost0 - (space.outcomes @ (q - q0)) - budget


def _augmented_lagrangian(model, space, q0, mu, budget, tol, warm_start):
    """Minimize divergence to the belief under worst-case-loss constraints.

    Works in coordinates for the price-responsive subspace, so the returned
    state displacement has no irrelevant component. Returns (coords,
    multipliers, residual dict).
    """
    basis = model.parallel_directions()
    n_free = basis.shape[1]
    outcomes = space.outcomes
    m = space.size
    cost0 = model.cost(q0)

    y = np.zeros(n_free)
    if warm_start is not None:
        y = basis.T @ (as_state(warm_start) - q0)
    lam = np.zeros(m)
    rho = 10.0
    prev_infeas = math.inf
    inner_floor = max(1e-13, 0.01 * tol)
    inner_tol = 1e-6

    def make_derivs(lam_k, rho_k):
        def derivs(yv):
            q = q0 + basis @ yv
            cq = model.cost(q)
            p = model.price_array(q)
            g = _constraint_values(model, space, q0, cost0, q, cq, budget)
            mult = np.maximum(0.0, lam_k + rho_k * g)
            value = (cq - float(q @ mu)) + float(
                np.sum(mult**2 - lam_k**2) / (2.0 * rho_k)
            )
            grad_full = (p - mu) + (p[None, :] - outcomes).T @ mult
            grad = basis.T @ grad_full
            active = mult > 0.0
            hess_full = (1.0 + mult.sum()) * model.hessian(q)
            if np.any(active):
                diffs = p[None, :] - outcomes[active]
                hess_full = hess_full + rho_k * diffs.T @ diffs
            hess = basis.T @ hess_full @ basis
            return value, grad, hess

        return derivs

    residuals = {}
    for outer in range(60):
        y, _, _, _ = damped_newton(
            make_derivs(lam, rho), y, inner_tol, max_iter=120, raise_on_limit=False
        )
        q = q0 + basis @ y
        cq = model.cost(q)
        p = model.price_array(q)
        g = _constraint_values(model, space, q0, cost0, q, cq, budget)
        lam = np.maximum(0.0, lam + rho * g)
        stationarity = float(
            np.linalg.norm(basis.T @ ((p - mu) + (p[None, :] - outcomes).T @ lam))
        )
        infeas = float(np.maximum(g, 0.0).max(initial=0.0))
        comp = float(np.max(lam * np.abs(g), initial=0.0))
        residuals = {
            "stationarity": stationarity,
            "feasibility": infeas,
            "complementarity": comp,
        }
        worst = max(residuals.values())
        if worst <= tol:
            return y, lam, residuals
        inner_tol = max(inner_floor, min(inner_tol, 0.1 * worst))
        if infeas > 0.25 * prev_infeas:
            rho = min(rho * 10.0, 1e12)
        prev_infeas = max(infeas, 1e-300)
    raise NumericalError(
        f"trade solver did not reach tolerance {tol}: residuals {residuals}",
        residual=max(residuals.values()),
    )


def _lemma_multipliers(problem: TradeProblem, q_hat: np.ndarray, tight: Face) -> np.ndarray:
    """Multipliers recovered from the convex decomposition of the solution price."""
    lam = np.zeros(problem.space.size)
    if tight.is_empty:
        return lam
    gens = np.vstack([problem.space.points(tight.members), problem.mu])
    weights, _ = simplex_weights(gens, problem.model.price_array(q_hat))
    c_mu = weights[-1]
    if c_mu <= 1e-12:
        return lam
    for idx, w in zip(tight.members, weights[:-1]):
        lam[idx] = w / c_mu
    return lam


def _solution_from_state(
    problem: TradeProblem,
    q_hat: np.ndarray,
    multipliers: Optional[np.ndarray],
    tight_tol: Optional[float] = None,
) -> TradeSolution:
    model, space = problem.model, problem.space
    tight = tight_set(problem, q_hat, tight_tol)
    if multipliers is None:
        multipliers = _lemma_multipliers(problem, q_hat, tight)
    utilities = np.array([costs.utility(model, q_hat, w, problem.q0) for w in space.outcomes])
    budget_used = float(max(0.0, -utilities.min()))
    p_hat = model.price_array(q_hat)
    gens = np.vstack([space.points(tight.members), problem.mu]) if not tight.is_empty else problem.mu[None, :]
    _, hull_residual = simplex_weights(gens, p_hat)
    feasibility = float(max(0.0, (-utilities - problem.budget).max()))
    complementarity = float(np.max(multipliers * np.abs(utilities + problem.budget), initial=0.0))
    residuals = {
        "stationarity": hull_residual,
        "feasibility": feasibility,
        "complementarity": complementarity,
    }
    return TradeSolution(
        q_hat=q_hat,
        nu_hat=model.price(q_hat),
        tight=tight,
        multipliers=multipliers,
        kkt_residuals=residuals,
        budget_used=budget_used,
    )


def saturation_budget(problem: TradeProblem) -> tuple[float, np.ndarray]:
    """Worst-case loss of moving straight to the belief, and the state that does it."""
    model = problem.model
    q_mu_raw = model.inverse_price_array(problem.mu)
    basis = model.parallel_directions()
    q_mu = problem.q0 + basis @ (basis.T @ (q_mu_raw - problem.q0))
    losses = [-costs.utility(model, q_mu, w, problem.q0) for w in problem.space.outcomes]
    return float(max(0.0, max(losses))), q_mu


def solve_generic(
    problem: TradeProblem,
    tol: float = DEFAULT_SOLVE_TOL,
    warm_start=None,
) -> TradeSolution:
    """Solve the budget-constrained trade; deterministic for fixed inputs.

    A zero budget returns the (arbitrage-free) initial state outright. Budgets
    at or above the cost of reaching the belief return the belief state. The
    general case runs an augmented-Lagrangian method with safeguarded Newton
    inner solves; the returned multipliers are the constraint multipliers of
    the optimality conditions.
    """
    model = problem.model
    if problem.budget == 0.0:
        sol = _solution_from_state(problem, problem.q0.copy(), None)
        return sol
    b_sat, q_mu = saturation_budget(problem)
    if problem.budget >= b_sat * (1.0 - 1e-12) - 1e-12:
        return _solution_from_state(problem, q_mu, None)
    y, lam, residuals = _augmented_lagrangian(
        model, problem.space, problem.q0, problem.mu, problem.budget, tol, warm_start
    )
    q_hat = problem.q0 + model.parallel_directions() @ y
    sol = _solution_from_state(problem, q_hat, lam)
    sol.kkt_residuals.update(residuals)
    return sol


def tight_set(problem: TradeProblem, q, tol: Optional[float] = None) -> Face:
    """Outcomes whose budget constraints hold with equality at state q.

    Validated as a face when nonempty; a warning is logged otherwise, which
    indicates a numerically ambiguous boundary case.
    """
    q = as_state(q)
    if tol is None:
        tol = TIGHT_BASE_TOL * (1.0 + problem.budget)
    members = [
        i
        for i, w in enumerate(problem.space.outcomes)
        if abs(costs.utility(problem.model, q, w, problem.q0) + problem.budget) <= tol
    ]
    face = Face.of(members)
    if members and not geometry.is_face(face, problem.space):
        logger.warning("tight set %s is not a face; boundary case at tolerance %.2e", members, tol)
    return face


def verify_kkt(problem: TradeProblem, candidate_q, face: Face, tol: float = 1e-9) -> KktReport:
    """Check the optimality conditions for a candidate state and tight face.

    Residuals, one per condition: equal tightness across the face, the
    witness-cone inequalities, the solution price decomposing over the face
    and belief, and the budget matching the face's losses (or bounding the
    worst loss when the face is empty, in which case the price must equal the
    belief).
    """
    q = as_state(candidate_q)
    model, space = problem.model, problem.space
    face.check_indices(space)
    direction = q - problem.q0
    p_hat = model.price_array(q)

    if face.is_empty:
        equal_res = 0.0
        cone_res = 0.0
    else:
        face_vals = space.points(face.members) @ direction
        equal_res = float(face_vals.max() - face_vals.min())
        margin, _ = geometry.witness_cone_margin(direction, face, space)
        cone_res = float(max(0.0, -margin))

    if face.is_empty:
        gens = problem.mu[None, :]
    else:
        gens = np.vstack([space.points(face.members), problem.mu])
    _, hull_res = simplex_weights(gens, p_hat)

    if face.is_empty:
        worst = max(-costs.utility(model, q, w, problem.q0) for w in space.outcomes)
        budget_res = float(max(0.0, worst - problem.budget))
    else:
        budget_res = float(
            max(
                abs(costs.utility(model, q, x, problem.q0) + problem.budget)
                for x in space.points(face.members)
            )
        )

    residuals = {
        "equal_tightness": equal_res,
        "witness_cone": cone_res,
        "price_in_hull": hull_res,
        "budget": budget_res,
    }
    return KktReport(holds=all(v <= tol for v in residuals.values()), residuals=residuals)


def _grid_axes(lo: np.ndarray, hi: np.ndarray, step: float) -> list[np.ndarray]:
    axes = []
    for a, b in zip(lo, hi):
        count = max(2, int(math.ceil((b - a) / step)) + 1)
        axes.append(np.linspace(a, b, count))
    return axes


def _grid_best(model, space, q0, mu, budget, lo, hi, step, slack):
    axes = _grid_axes(lo, hi, step)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    best_q, best_val = None, -math.inf
    cost0 = model.cost(q0)
    for chunk in np.array_split(pts, max(1, len(pts) // 200000 + 1)):
        cost_vals = np.array([model.cost(p) for p in chunk])
        base = chunk @ mu - q0 @ mu - cost_vals + cost0
        feasible = np.ones(len(chunk), dtype=bool)
        for w in space.outcomes:
            u = chunk @ w - q0 @ w - cost_vals + cost0
            feasible &= u >= -budget - slack
        if not feasible.any():
            continue
        idx = int(np.argmax(np.where(feasible, base, -math.inf)))
        if base[idx] > best_val:
            best_val = float(base[idx])
            best_q = chunk[idx].copy()
    return best_q, best_val


def brute_force_solve(problem: TradeProblem, grid_step: float, refinements: int = 2) -> TradeSolution:
    """Exhaustive grid search over market states, used only for cross-validation.

    Grids the bounding box implied by the budget constraints (exact for the
    quadratic cost, an anchored box otherwise), keeps the best feasible point,
    and zooms in around it `refinements` times down to `grid_step`. The start
    state is always a candidate, so a feasible point always exists.
    """
    if problem.space.dim > 3:
        raise MarketInputError("grid oracle supports at most three dimensions")
    if grid_step <= 0:
        raise MarketInputError("grid_step must be positive")
    model, space, q0, mu, budget = (
        problem.model,
        problem.space,
        problem.q0,
        problem.mu,
        problem.budget,
    )
    if isinstance(model, costs.QuadraticCost):
        lows, highs = [], []
        for w in space.outcomes:
            r = math.sqrt(max(0.0, 2.0 * (costs.divergence(model, q0, w) + budget)))
            lows.append(w - r)
            highs.append(w + r)
        lo = np.max(np.array(lows), axis=0)
        hi = np.min(np.array(highs), axis=0)
    else:
        _, q_mu = saturation_budget(problem)
        anchor = np.vstack([q0, q_mu])
        span = anchor.max(axis=0) - anchor.min(axis=0)
        pad = 0.75 * span + 0.75
        lo = anchor.min(axis=0) - pad
        hi = anchor.max(axis=0) + pad
    lo = np.minimum(lo, q0 - grid_step)
    hi = np.maximum(hi, q0 + grid_step)

    slack = 1e-9 * (1.0 + budget)
    step = max(grid_step, float((hi - lo).max()) / 160.0)
    best_q, best_val = _grid_best(model, space, q0, mu, budget, lo, hi, step, slack)
    start_val = 0.0  # holding is always feasible
    if best_q is None or start_val > best_val:
        best_q, best_val = q0.copy(), start_val
    while step > grid_step:
        step = max(grid_step, step / 8.0)
        window = 2.5 * step * 8.0
        cand_q, cand_val = _grid_best(
            model, space, q0, mu, budget,
            np.maximum(lo, best_q - window), np.minimum(hi, best_q + window),
            step, slack,
        )
        if cand_q is not None and cand_val > best_val:
            best_q, best_val = cand_q, cand_val
    if best_q is None:
        raise OracleError("grid too coarse: no feasible point found")
    return _solution_from_state(
        problem, best_q, None, tight_tol=max(TIGHT_BASE_TOL, grid_step * space.scale())
    )
