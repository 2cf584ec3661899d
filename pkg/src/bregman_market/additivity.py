"""Budget additivity: empirical checks, sufficient-condition certification, search.

A market is budget additive when two like-minded traders moving the market in
sequence have exactly the combined impact of one trader holding both budgets.
The check here compares terminal prices, which is well posed because all
optimal trades at a given budget share one price vector. Certification relies
on geometric sufficient conditions; refutations carry a concrete witness.
Certified verdicts are backed by theory; empirical "additive" outcomes on
uncertified markets are evidence for the sampled states only, never a proof.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import costs, geometry
from .costs import CostModel, DirectSumCost, LmsrCost, LogPartitionCost, PriceVector, QuadraticCost
from .errors import MarketInputError
from .geometry import Face, OutcomeSpace
from .trader import TradeProblem, TradeSolution, saturation_budget, solve_generic

logger = logging.getLogger("bregman_market.additivity")

CERTIFIED = "certified"
REFUTED_FACE = "refuted_face"
NOT_APPLICABLE = "not_applicable"

DEFAULT_GAP_TOL = 1e-5
# Exact face enumeration cap; larger outcome sets are not certified.
ENUMERATION_LIMIT = 16


@dataclass(frozen=True)
class AdditivityReport:
    """Sequential-versus-combined price comparison for one budget split."""

    additive: bool
    price_sequential: PriceVector
    price_combined: PriceVector
    gap: float
    trail: tuple[TradeSolution, ...]
    budgets: tuple[float, ...]
    tolerance: float
    trial: Optional[int] = None


@dataclass(frozen=True)
class AcuteVerdict:
    """Result of a sufficient-condition check.

    `face` names the refuting face when status is refuted; `evidence` carries
    enough data to reproduce the verdict (projected offsets and the violating
    pair, or the reason a certificate applies or is unavailable).
    """

    status: str
    face: Optional[Face]
    evidence: dict


def check_budget_additivity_sequence(
    model: CostModel,
    space: OutcomeSpace,
    q0,
    mu,
    budgets: Sequence[float],
    tol: float = DEFAULT_GAP_TOL,
) -> AdditivityReport:
    """Left-fold the budget list as sequential trades and compare with one big trade."""
    budgets = tuple(float(b) for b in budgets)
    if len(budgets) < 2:
        raise MarketInputError("additivity needs at least two budgets")
    q = costs.as_state(q0)
    mu = costs.as_price(mu)
    trail = []
    for b in budgets:
        sol = solve_generic(TradeProblem(model=model, space=space, q0=q, mu=mu, budget=b))
        trail.append(sol)
        q = sol.q_hat
    combined = solve_generic(
        TradeProblem(model=model, space=space, q0=costs.as_state(q0), mu=mu, budget=sum(budgets))
    )
    trail.append(combined)
    p_seq = trail[-2].nu_hat
    p_comb = combined.nu_hat
    gap = float(np.linalg.norm(p_seq.nu - p_comb.nu))
    return AdditivityReport(
        additive=gap <= tol,
        price_sequential=p_seq,
        price_combined=p_comb,
        gap=gap,
        trail=tuple(trail),
        budgets=budgets,
        tolerance=tol,
    )


def check_budget_additivity(
    model: CostModel,
    space: OutcomeSpace,
    q0,
    mu,
    budget_first: float,
    budget_second: float,
    tol: float = DEFAULT_GAP_TOL,
) -> AdditivityReport:
    """Two sequential trades under one belief versus a single combined trade."""
    return check_budget_additivity_sequence(
        model, space, q0, mu, (budget_first, budget_second), tol
    )


def euclidean_acute_check(space: OutcomeSpace, face: Face, tol: float = 1e-9) -> AcuteVerdict:
    """Acute-angle test for one face under the quadratic cost.

    Projects every outcome onto the affine space through the face orthogonal
    to it; the face passes exactly when the projected offsets pairwise form
    non-obtuse angles. Offsets at the vertex itself can never refute and are
    skipped when computing the minimum pairwise product.
    """
    if face.is_empty:
        raise MarketInputError("acute check needs a non-empty face")
    face.check_indices(space)
    pts = face.points(space)
    base = pts.mean(axis=0)
    projector = geometry.face_orthogonal_projector(face, space)
    offsets = (space.outcomes - base) @ projector.T
    norms = np.linalg.norm(offsets, axis=1)
    nonzero = np.nonzero(norms > 1e-12 * space.scale())[0]
    evidence = {
        "base_point": base.tolist(),
        "projected_offsets": [offsets[i].tolist() for i in range(space.size)],
    }
    if len(nonzero) < 2:
        evidence["min_pairwise_dot"] = None
        return AcuteVerdict(status=CERTIFIED, face=face, evidence=evidence)
    min_dot = math.inf
    min_pair = None
    for a_pos in range(len(nonzero)):
        for b_pos in range(a_pos + 1, len(nonzero)):
            i, j = int(nonzero[a_pos]), int(nonzero[b_pos])
            d = float(np.dot(offsets[i], offsets[j]))
            if d < min_dot:
                min_dot = d
                min_pair = (i, j)
    evidence["min_pairwise_dot"] = min_dot
    evidence["pair"] = min_pair
    if min_dot >= -tol:
        return AcuteVerdict(status=CERTIFIED, face=face, evidence=evidence)
    return AcuteVerdict(status=REFUTED_FACE, face=face, evidence=evidence)


def _split_block_spaces(space: OutcomeSpace, dims: Sequence[int]) -> Optional[list[OutcomeSpace]]:
    """Per-block outcome sets when the outcome set is a product across blocks."""
    offsets = np.cumsum([0] + list(dims))
    slices = [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]
    blocks = []
    for sl in slices:
        rows = space.outcomes[:, sl]
        keys = {}
        for row in rows:
            keys.setdefault(tuple(np.round(row, 12)), row)
        blocks.append(np.array(list(keys.values())))
    expected = 1
    for b in blocks:
        expected *= len(b)
    if expected != space.size:
        return None
    # Every combination must be present.
    seen = {tuple(np.round(row, 12)) for row in space.outcomes}
    import itertools

    for combo in itertools.product(*blocks):
        if tuple(np.round(np.concatenate(combo), 12)) not in seen:
            return None
    out = []
    for dims_j, rows in zip(dims, blocks):
        if len(rows) < 2:
            return None
        out.append(OutcomeSpace(dim=int(dims_j), outcomes=rows))
    return out


def _lift_block_face(
    space: OutcomeSpace, dims: Sequence[int], block_index: int, block_face: Face,
    block_space: OutcomeSpace,
) -> Face:
    offsets = np.cumsum([0] + list(dims))
    sl = slice(int(offsets[block_index]), int(offsets[block_index + 1]))
    member_rows = {tuple(np.round(block_space.outcomes[i], 12)) for i in block_face.members}
    lifted = [
        i for i, row in enumerate(space.outcomes) if tuple(np.round(row[sl], 12)) in member_rows
    ]
    return Face.of(lifted)


def certify_sufficient_conditions(model: CostModel, space: OutcomeSpace) -> AcuteVerdict:
    """Dispatch the known sufficient conditions for budget additivity.

    One-dimensional payoff spans certify under any cost. Quadratic costs
    certify structurally on hypercubes and standard simplices, and otherwise
    by checking every proper face (outcome sets beyond the enumeration limit
    are not certified). Log-sum-exp costs over the outcome set certify when
    the outcomes are affinely independent. Direct sums certify when every
    block does on its block outcomes.
    """
    if model.dim != space.dim:
        raise MarketInputError("cost model and outcome space dimensions differ")
    if geometry.affine_dimension(space) == 1:
        return AcuteVerdict(
            status=CERTIFIED, face=None, evidence={"reason": "payoff span is one-dimensional"}
        )
    if isinstance(model, QuadraticCost):
        if geometry.is_hypercube(space):
            return AcuteVerdict(
                status=CERTIFIED, face=None, evidence={"reason": "hypercube outcome set"}
            )
        if geometry.is_standard_simplex(space):
            return AcuteVerdict(
                status=CERTIFIED, face=None, evidence={"reason": "standard simplex outcome set"}
            )
        if space.size > ENUMERATION_LIMIT:
            logger.warning(
                "outcome set has %d > %d elements; face enumeration skipped",
                space.size,
                ENUMERATION_LIMIT,
            )
            return AcuteVerdict(
                status=NOT_APPLICABLE,
                face=None,
                evidence={
                    "reason": f"face enumeration capped at {ENUMERATION_LIMIT} outcomes; "
                    "use randomized probing"
                },
            )
        faces = geometry.enumerate_proper_faces(space)
        for face in faces:
            verdict = euclidean_acute_check(space, face)
            if verdict.status == REFUTED_FACE:
                return verdict
        return AcuteVerdict(
            status=CERTIFIED,
            face=None,
            evidence={"reason": "all proper faces acute", "faces_checked": len(faces)},
        )
    if isinstance(model, LogPartitionCost):
        if geometry.affinely_independent(space):
            return AcuteVerdict(
                status=CERTIFIED, face=None, evidence={"reason": "affinely independent outcomes"}
            )
        return AcuteVerdict(
            status=NOT_APPLICABLE,
            face=None,
            evidence={"reason": "outcomes are affinely dependent"},
        )
    if isinstance(model, LmsrCost):
        if geometry.is_standard_simplex(space):
            return AcuteVerdict(
                status=CERTIFIED,
                face=None,
                evidence={"reason": "complete market over affinely independent outcomes"},
            )
        return AcuteVerdict(
            status=NOT_APPLICABLE,
            face=None,
            evidence={"reason": "outcome set is not the standard simplex"},
        )
    if isinstance(model, DirectSumCost):
        block_spaces = _split_block_spaces(space, model.dims)
        if block_spaces is None:
            return AcuteVerdict(
                status=NOT_APPLICABLE,
                face=None,
                evidence={"reason": "outcome set is not a product across blocks"},
            )
        for idx, (block, bspace) in enumerate(zip(model.blocks, block_spaces)):
            verdict = certify_sufficient_conditions(block, bspace)
            if verdict.status == CERTIFIED:
                continue
            if verdict.status == REFUTED_FACE and verdict.face is not None:
                lifted = _lift_block_face(space, model.dims, idx, verdict.face, bspace)
                evidence = dict(verdict.evidence)
                evidence["block"] = idx
                return AcuteVerdict(status=REFUTED_FACE, face=lifted, evidence=evidence)
            evidence = dict(verdict.evidence)
            evidence["block"] = idx
            return AcuteVerdict(status=NOT_APPLICABLE, face=None, evidence=evidence)
        return AcuteVerdict(
            status=CERTIFIED, face=None, evidence={"reason": "every block certifies"}
        )
    return AcuteVerdict(
        status=NOT_APPLICABLE, face=None, evidence={"reason": f"unknown cost kind {model.kind}"}
    )


def _sample_hull_point(rng: np.random.Generator, space: OutcomeSpace) -> np.ndarray:
    weights = rng.dirichlet(np.ones(space.size))
    return weights @ space.outcomes


def randomized_counterexample_search(
    model: CostModel,
    space: OutcomeSpace,
    trials: int,
    seed: int,
    tol: float = DEFAULT_GAP_TOL,
) -> Optional[AdditivityReport]:
    """Seeded search for a budget split whose sequential trades underperform.

    Each trial draws an expressible start price and belief plus a budget
    split, then runs the sequential-versus-combined comparison. Returns the
    first non-additive report, or None. Trial randomness derives from
    (seed, trial index) alone, so results do not depend on how trials might be
    partitioned across workers: the first violating trial index wins.
    """
    if trials < 1:
        raise MarketInputError("need at least one trial")
    for trial in range(trials):
        rng = np.random.default_rng([int(seed), trial])
        nu0 = _sample_hull_point(rng, space)
        mu = _sample_hull_point(rng, space)
        q0 = model.inverse_price_array(nu0)
        problem = TradeProblem(model=model, space=space, q0=q0, mu=mu, budget=0.0)
        b_sat, _ = saturation_budget(problem)
        if b_sat <= 1e-12:
            continue
        b_first = float(rng.uniform(0.0, 1.1) * b_sat)
        b_second = float(rng.uniform(0.0, 1.1) * b_sat)
        report = check_budget_additivity(model, space, q0, mu, b_first, b_second, tol)
        if not report.additive:
            return AdditivityReport(
                additive=report.additive,
                price_sequential=report.price_sequential,
                price_combined=report.price_combined,
                gap=report.gap,
                trail=report.trail,
                budgets=report.budgets,
                tolerance=report.tolerance,
                trial=trial,
            )
    return None
