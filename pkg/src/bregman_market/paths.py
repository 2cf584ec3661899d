"""Perpendicular curves of optimal prices and the piecewise path to the belief.

As the budget grows, the optimal price moves inside the hull of the belief and
the currently tight outcomes, perpendicular (in the divergence sense) to those
outcomes. Concatenating such curves over strictly shrinking tight sets yields
the full locus of optimal prices, along with the budget required to reach each
point. Transitions where the witness-cone condition fails are recorded; on
such paths the construction still completes but no longer certifies optimal
trades.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import costs, geometry, trader
from .costs import CostModel, as_price, as_state
from .errors import DomainError, MarketInputError, NumericalError, PathUnsupportedError
from .geometry import EMPTY_FACE, Face, OutcomeSpace
from .numerics import damped_newton, orthonormal_columns

logger = logging.getLogger("bregman_market.paths")

DEFAULT_SAMPLES_PER_SEGMENT = 64
# Bisection tolerance on the slice parameter when locating segment exits.
EXIT_PARAM_TOL = 1e-10


@dataclass(frozen=True)
class Perpendicular:
    """Divergence-minimizing projections of one state onto slices between a face and an apex.

    The slices interpolate from the face's affine hull (parameter 0) to the
    parallel hull through the apex (parameter 1). The apex must not lie in the
    face's affine hull.
    """

    model: CostModel
    space: OutcomeSpace
    base_face: Face
    apex: np.ndarray
    anchor: np.ndarray
    base_point: np.ndarray = field(init=False)
    axis: np.ndarray = field(init=False)
    slice_basis: np.ndarray = field(init=False)
    solve_basis: np.ndarray = field(init=False)

    def __post_init__(self):
        apex = as_price(self.apex)
        anchor = as_state(self.anchor)
        if self.base_face.is_empty:
            raise MarketInputError("perpendicular needs a non-empty base face")
        self.base_face.check_indices(self.space)
        pts = self.base_face.points(self.space)
        slice_basis = geometry.face_span(self.base_face, self.space)
        offset = apex - pts[0]
        base_point = pts[0] + slice_basis @ (slice_basis.T @ offset) if slice_basis.size else pts[0]
        axis = apex - base_point
        if np.linalg.norm(axis) <= 1e-12 * self.space.scale():
            raise MarketInputError("apex lies in the affine hull of the base face")
        parallel = self.model.parallel_directions()
        residual = parallel - slice_basis @ (slice_basis.T @ parallel) if slice_basis.size else parallel
        solve_basis = orthonormal_columns(residual)
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "base_point", base_point)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "slice_basis", slice_basis)
        object.__setattr__(self, "solve_basis", solve_basis)

    def lambda_of(self, nu) -> float:
        """Slice parameter of a price vector (0 at the face, 1 at the apex)."""
        nu = as_price(nu)
        return float((nu - self.base_point) @ self.axis / (self.axis @ self.axis))

    def slice_center(self, lam: float) -> np.ndarray:
        return self.base_point + lam * self.axis


def _point_state(perp: Perpendicular, lam: float, tol: float, warm=None) -> tuple[np.ndarray, np.ndarray]:
    """Emitted price on the slice at `lam` plus a realizing state off the anchor.

    The state differs from the anchor only along directions orthogonal to the
    base face (and with no irrelevant component), which is exactly what makes
    the emitted point the divergence projection.
    """
    model = perp.model
    center = perp.slice_center(lam)
    basis = perp.solve_basis
    anchor = perp.anchor

    if basis.shape[1] == 0:
        return center.copy(), anchor.copy()

    if isinstance(model, costs.QuadraticCost):
        w = perp.slice_basis
        nu = center + (w @ (w.T @ (anchor - center)) if w.size else (anchor - center) * 0.0)
        state = anchor + basis @ (basis.T @ (nu - anchor))
        return nu, state

    def derivs(s):
        q = anchor + basis @ s
        value = model.cost(q) - float(q @ center)
        p = model.price_array(q)
        grad = basis.T @ (p - center)
        hess = basis.T @ model.hessian(q) @ basis
        return value, grad, hess

    start = np.zeros(basis.shape[1]) if warm is None else np.asarray(warm, dtype=float)
    gtol = max(1e-13, 1e-11 * (1.0 + float(np.linalg.norm(center))))
    try:
        s, _, _, _ = damped_newton(derivs, start, gtol, max_iter=200, diverge_norm=1e6)
    except NumericalError as err:
        if err.diverged:
            raise DomainError(
                "slice minimizer escapes toward the boundary of the price domain"
            ) from err
        raise
    state = anchor + basis @ s
    nu = model.price_array(state)
    if not model.in_ri_conjugate_domain(nu, max(tol, 1e-9)):
        raise DomainError("slice minimizer left the relative interior of the price domain")
    return nu, state


def perpendicular_point(model: CostModel, perp: Perpendicular, lam: float, tol: float = 1e-9):
    """The unique divergence projection of the anchor onto the slice at `lam`.

    Raises DomainError when the projection is not strictly expressible, which
    identifies the open boundary of the curve's parameter domain.
    """
    if model is not perp.model:
        raise MarketInputError("model does not match the perpendicular")
    nu, _ = _point_state(perp, lam, tol)
    in_m, in_ri = model.price_flags()
    return costs.PriceVector(nu=nu, in_M=in_m, in_ri_domain=in_ri)


@dataclass(frozen=True)
class PathSample:
    lam: float
    nu: np.ndarray
    state: np.ndarray
    budget: float


@dataclass(frozen=True)
class AcuteViolation:
    """A segment whose realized displacement left the witness cone of its face."""

    segment_index: int
    lam: float
    worst_dot: float
    pair: tuple[int, int]
    direction: np.ndarray


@dataclass(frozen=True)
class PathSegment:
    index: int
    face: Face
    perpendicular: Perpendicular
    lambda_start: float
    lambda_end: float
    nu_start: np.ndarray
    nu_end: np.ndarray
    samples: tuple[PathSample, ...]


@dataclass(frozen=True)
class SolutionPath:
    """Concatenated perpendicular segments from the initial prices to the belief.

    Faces strictly shrink along the path and the budget column of the samples
    increases. When `acute_violations` is non-empty the curve is still well
    defined but stops being the locus of optimal prices past the first
    violation; `truncated` marks paths stopped early at the price-domain
    boundary.
    """

    segments: tuple[PathSegment, ...]
    terminal: np.ndarray
    acute_violations: tuple[AcuteViolation, ...]
    total_budget: float
    truncated: bool
    q0: np.ndarray
    mu: np.ndarray

    @property
    def faces(self) -> list[Face]:
        return [seg.face for seg in self.segments]


def _budget_of(model, state, face: Face, space, q0) -> float:
    member = face.members[0]
    return -costs.utility(model, state, space.outcomes[member], q0)


def trace_path(
    model: CostModel,
    space: OutcomeSpace,
    q0,
    mu,
    tol: float = 1e-9,
    samples_per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT,
) -> SolutionPath:
    """Build the oriented price path from the initial state to the belief.

    Each stage projects along the perpendicular to the current minimal face
    until the curve exits the hull of that face and the belief (located by
    marching plus bisection), then restarts from the exit point with a
    strictly smaller face. Witness-cone failures at any sampled displacement
    are recorded per segment.
    """
    q0 = as_state(q0)
    mu = as_price(mu)
    if samples_per_segment < 2:
        raise MarketInputError("need at least two samples per segment")
    if not costs.in_m_tilde(model, space, mu, tol):
        raise DomainError("belief is not expressible for this market")
    nu0 = model.price_array(q0)
    if not costs.in_m_tilde(model, space, nu0, tol):
        raise DomainError("initial prices are not expressible for this market")
    trader._ensure_arbitrage_free(model, space, q0, mu)

    scale = space.scale()
    terminal_tol = max(tol, 1e-9) * (1.0 + float(np.linalg.norm(mu)))
    segments: list[PathSegment] = []
    violations: list[AcuteViolation] = []
    truncated = False

    nu_i = nu0
    q_i = q0.copy()
    face: Optional[Face] = None
    if np.linalg.norm(nu_i - mu) > terminal_tol:
        face = geometry.minimal_face(mu, nu_i, space, tol)
        if face.is_empty:
            face = None

    while face is not None:
        perp = Perpendicular(model=model, space=space, base_face=face, apex=mu, anchor=q_i)
        hull_gens = np.vstack([face.points(space), mu])
        lam_start = perp.lambda_of(nu_i)

        lam_end, nu_end, state_end, hit_boundary = _find_exit(
            perp, hull_gens, lam_start, tol, scale
        )
        lams = np.linspace(lam_start, lam_end, samples_per_segment)
        samples = []
        warm = None
        worst: Optional[tuple[float, float, tuple[int, int], np.ndarray]] = None
        for lam in lams:
            nu_s, state_s = _point_state(perp, float(lam), tol, warm)
            warm = perp.solve_basis.T @ (state_s - perp.anchor)
            budget = _budget_of(model, state_s, face, space, q0)
            samples.append(PathSample(lam=float(lam), nu=nu_s, state=state_s, budget=budget))
            displacement = state_s - q_i
            step_norm = float(np.linalg.norm(displacement))
            if step_norm > 1e-8 * scale:
                margin, pair = geometry.witness_cone_margin(displacement, face, space)
                if margin < -max(1e-9 * scale, 1e-6 * step_norm) and (
                    worst is None or margin < worst[1]
                ):
                    worst = (float(lam), margin, pair, displacement)
        if worst is not None:
            violations.append(
                AcuteViolation(
                    segment_index=len(segments),
                    lam=worst[0],
                    worst_dot=worst[1],
                    pair=worst[2],
                    direction=worst[3],
                )
            )
        segments.append(
            PathSegment(
                index=len(segments),
                face=face,
                perpendicular=perp,
                lambda_start=lam_start,
                lambda_end=lam_end,
                nu_start=nu_i.copy(),
                nu_end=samples[-1].nu.copy(),
                samples=tuple(samples),
            )
        )
        if hit_boundary:
            truncated = True
            logger.warning("path truncated at the price-domain boundary")
            break
        nu_i = samples[-1].nu
        q_i = samples[-1].state
        if np.linalg.norm(nu_i - mu) <= terminal_tol:
            break
        # The exit sits on a proper face of the current hull; reading the next
        # face from the hull decomposition avoids the knife-edge ray cast at
        # the junction.
        next_face = _face_after_exit(face, hull_gens, nu_i, space, tol)
        if next_face.is_empty:
            break
        if not (next_face.issubset(face) and len(next_face) < len(face)):
            raise NumericalError(
                f"face sequence failed to shrink: {face.members} -> {next_face.members}"
            )
        face = next_face
        if len(segments) > space.size + 1:
            raise NumericalError("path construction exceeded the maximum segment count")

    terminal = segments[-1].nu_end.copy() if segments else nu0.copy()
    if not truncated and segments and np.linalg.norm(terminal - mu) <= terminal_tol:
        terminal = mu.copy()
    total_budget = segments[-1].samples[-1].budget if segments else 0.0
    return SolutionPath(
        segments=tuple(segments),
        terminal=terminal,
        acute_violations=tuple(violations),
        total_budget=float(max(0.0, total_budget)),
        truncated=truncated,
        q0=q0.copy(),
        mu=mu.copy(),
    )


def _face_after_exit(face: Face, hull_gens, nu_exit, space: OutcomeSpace, tol: float) -> Face:
    """Face members still carrying weight in the hull decomposition of the exit point."""
    band = max(tol, 1e-9 * space.scale())
    kept = []
    for pos, idx in enumerate(face.members):
        w = geometry.max_weight_on(nu_exit, hull_gens, pos, band)
        if w is None:
            raise NumericalError("exit point fell outside the segment hull")
        if w > geometry.RI_WEIGHT_FLOOR:
            kept.append(idx)
    return Face.of(kept)


def _find_exit(perp: Perpendicular, hull_gens, lam_start, tol, scale):
    """First slice parameter where the curve leaves the face-belief hull.

    Marches upward in parameter, then bisects the bracketing interval.
    Returns (lam_exit, nu_exit, state_exit, hit_domain_boundary).
    """
    membership_tol = max(tol, 1e-9)

    def inside(lam):
        nu, state = _point_state(perp, lam, tol)
        return geometry.hull_membership(nu, hull_gens, membership_tol).inside, nu, state

    steps = 16
    lam_in = lam_start
    lam_out = None
    hit_boundary = False
    grid = np.linspace(lam_start, 1.0, steps + 1)[1:]
    for lam in grid:
        try:
            ok, nu, state = inside(float(lam))
        except DomainError:
            hit_boundary = True
            lam_out = float(lam)
            break
        if ok:
            lam_in = float(lam)
        else:
            lam_out = float(lam)
            break

    if lam_out is None:
        # Stayed inside all the way to the apex slice; the exit is the apex.
        nu, state = _point_state(perp, 1.0, tol)
        return 1.0, nu, state, False

    lo, hi = lam_in, lam_out
    boundary_mode = hit_boundary
    while hi - lo > EXIT_PARAM_TOL:
        mid = 0.5 * (lo + hi)
        try:
            ok, nu, state = inside(mid)
        except DomainError:
            boundary_mode = True
            hi = mid
            continue
        if ok:
            lo = mid
        else:
            hi = mid
    nu, state = _point_state(perp, lo, tol)
    return lo, nu, state, boundary_mode


def budget_along_path(model: CostModel, space: OutcomeSpace, path: SolutionPath, nu, q0) -> float:
    """Budget at which a price on the path becomes the optimal price.

    The price must lie on one of the path's segments (within a locating
    tolerance); the value does not depend on which face member is used.
    """
    nu = as_price(nu)
    q0 = as_state(q0)
    loc_tol = 1e-7 * space.scale()
    if not path.segments:
        if np.linalg.norm(nu - path.terminal) <= loc_tol:
            return 0.0
        raise DomainError("price does not lie on the (degenerate) path")
    for seg in path.segments:
        lam = seg.perpendicular.lambda_of(nu)
        if lam < seg.lambda_start - 1e-9 or lam > seg.lambda_end + 1e-9:
            continue
        lam = min(max(lam, seg.lambda_start), seg.lambda_end)
        nu_check, state = _point_state(seg.perpendicular, lam, 1e-9)
        if np.linalg.norm(nu_check - nu) <= loc_tol:
            return float(_budget_of(model, state, seg.face, space, q0))
    raise DomainError("price does not lie on the traced path")


def solve_by_path(
    model: CostModel,
    space: OutcomeSpace,
    q0,
    mu,
    budget: float,
    tol: float = 1e-9,
) -> trader.TradeSolution:
    """Solve a budget-constrained trade by walking the traced price path.

    Refuses paths with witness-cone violations, since those paths no longer
    describe the optimal prices; the generic solver handles such markets.
    """
    if budget < 0:
        raise MarketInputError("budget must be nonnegative")
    q0 = as_state(q0)
    mu = as_price(mu)
    path = trace_path(model, space, q0, mu, tol)
    if path.acute_violations:
        raise PathUnsupportedError(
            "path has witness-cone violations; solve_generic is the supported route"
        )
    if path.truncated:
        raise PathUnsupportedError("path was truncated at the price domain boundary")
    problem = trader.TradeProblem(model=model, space=space, q0=q0, mu=mu, budget=float(budget))
    if not path.segments or budget >= path.total_budget:
        state = path.segments[-1].samples[-1].state if path.segments else q0.copy()
        return trader._solution_from_state(problem, state, None)

    target = float(budget)
    chosen = None
    for seg in path.segments:
        if seg.samples[-1].budget >= target - 1e-12:
            chosen = seg
            break
    if chosen is None:
        chosen = path.segments[-1]
    lo, hi = chosen.lambda_start, chosen.lambda_end
    state = chosen.samples[0].state
    btol = max(1e-12, 1e-10 * (1.0 + target))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        nu_mid, state = _point_state(chosen.perpendicular, mid, tol)
        b_mid = _budget_of(model, state, chosen.face, space, q0)
        if abs(b_mid - target) <= btol or hi - lo <= 1e-13:
            break
        if b_mid < target:
            lo = mid
        else:
            hi = mid
    return trader._solution_from_state(problem, state, None)
