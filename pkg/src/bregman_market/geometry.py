"""Outcome spaces, the payoff polytope, faces, and the small LPs deciding them.

Everything here is plain linear algebra plus linear programs sized for desk
scale (dimension up to ~8, outcome counts up to ~64). All operations are pure
functions of immutable inputs and safe for concurrent use.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .errors import DomainError, MarketInputError, NumericalError
from .numerics import orthonormal_columns

DEFAULT_TOL = 1e-9
# Minimum convex weight certifying relative-interior membership.
RI_WEIGHT_FLOOR = 1e-7
# Strictness margin for face-identification LPs, scaled by outcome norms.
FACE_MARGIN = 1e-9


@dataclass(frozen=True)
class OutcomeSpace:
    """A finite set of payoff vectors; its convex hull is the set of expressible prices.

    Outcome order is significant: faces refer to outcomes by index. Duplicate
    payoff vectors are rejected because they would make face membership
    ambiguous without changing the polytope.
    """

    dim: int
    outcomes: np.ndarray
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        arr = np.array(self.outcomes, dtype=float)
        if arr.ndim != 2:
            raise MarketInputError("outcomes must be a 2-D array of payoff vectors")
        if self.dim <= 0:
            raise MarketInputError("dimension must be a positive integer")
        if arr.shape[1] != self.dim:
            raise MarketInputError(
                f"outcome vectors have length {arr.shape[1]}, expected {self.dim}"
            )
        if arr.shape[0] < 2:
            raise MarketInputError("need at least two outcomes to form trade geometry")
        if not np.all(np.isfinite(arr)):
            raise MarketInputError("outcome vectors must be finite")
        scale = max(1.0, float(np.abs(arr).max()))
        for i in range(len(arr)):
            for j in range(i + 1, len(arr)):
                if np.linalg.norm(arr[i] - arr[j]) <= 1e-12 * scale:
                    raise MarketInputError(f"duplicate outcome vectors at indices {i} and {j}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != len(arr):
                raise MarketInputError("labels must match the number of outcomes")
            object.__setattr__(self, "labels", labels)
        arr.setflags(write=False)
        object.__setattr__(self, "outcomes", arr)

    @property
    def size(self) -> int:
        return len(self.outcomes)

    def scale(self) -> float:
        return max(1.0, float(np.abs(self.outcomes).max()))

    def label_for(self, index: int) -> str:
        if self.labels is not None:
            return self.labels[index]
        return f"w{index}"

    def points(self, indices: Iterable[int]) -> np.ndarray:
        return self.outcomes[list(indices)]


@dataclass(frozen=True, order=True)
class Face:
    """A subset of outcome indices; the empty set counts as a face."""

    members: tuple[int, ...]

    @classmethod
    def of(cls, indices: Iterable[int]) -> "Face":
        return cls(tuple(sorted(set(int(i) for i in indices))))

    @property
    def is_empty(self) -> bool:
        return len(self.members) == 0

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, index: int) -> bool:
        return index in self.members

    def issubset(self, other: "Face") -> bool:
        return set(self.members) <= set(other.members)

    def points(self, space: OutcomeSpace) -> np.ndarray:
        self.check_indices(space)
        return space.outcomes[list(self.members)]

    def check_indices(self, space: OutcomeSpace) -> None:
        for i in self.members:
            if not 0 <= i < space.size:
                raise MarketInputError(f"face index {i} out of range for {space.size} outcomes")


EMPTY_FACE = Face(())


@dataclass(frozen=True)
class HullCertificate:
    """Outcome of a convex-hull membership query.

    When inside, `weights` are convex coefficients over the generators that
    reproduce the query point. When outside, `separating_direction` strictly
    separates the point from every generator.
    """

    inside: bool
    weights: Optional[np.ndarray] = None
    separating_direction: Optional[np.ndarray] = None


# HiGHS defaults accept ~1e-7 constraint violations; face decisions need better.
_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def _run_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options=_LP_OPTIONS,
    )
    return res


def _as_vector(x, dim: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size != dim:
        raise MarketInputError(f"{name} has length {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise MarketInputError(f"{name} must be finite")
    return v


def _as_generators(generators) -> np.ndarray:
    gens = np.atleast_2d(np.asarray(generators, dtype=float))
    if gens.size == 0:
        raise MarketInputError("need at least one generator")
    return gens


def hull_membership(point, generators, tol: float = DEFAULT_TOL) -> HullCertificate:
    """Decide whether `point` lies in the convex hull of the generator rows.

    Returns a certificate either way: convex weights reproducing the point, or
    a strictly separating direction. Boundary points within `tol` count as
    inside.
    """
    if tol <= 0:
        raise MarketInputError("tol must be positive")
    gens = _as_generators(generators)
    m, n = gens.shape
    point = _as_vector(point, n, "point")

    # Exact feasibility first; fall back to a tol-wide band when the point sits
    # within roundoff of the boundary.
    a_eq = np.vstack([gens.T, np.ones((1, m))])
    b_eq = np.concatenate([point, [1.0]])
    res = _run_lp(np.zeros(m), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * m)
    if res.status == 0:
        return HullCertificate(inside=True, weights=np.asarray(res.x, dtype=float))

    sep = _separation_direction(point, gens)
    if sep is not None:
        direction, margin = sep
        if margin > tol:
            return HullCertificate(inside=False, separating_direction=direction)

    banded = _banded_decomposition(point, gens, tol)
    if banded is not None:
        return HullCertificate(inside=True, weights=banded)
    if sep is not None:
        return HullCertificate(inside=False, separating_direction=sep[0])
    raise NumericalError("hull membership LP failed in both directions")


def _separation_direction(point: np.ndarray, gens: np.ndarray):
    """Maximize the margin u.point - max_i u.g_i over the unit box."""
    m, n = gens.shape
    # Variables (u, t): maximize t subject to u.g_i - u.point + t <= 0.
    a_ub = np.hstack([gens - point[None, :], np.ones((m, 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(-1, 1)] * n + [(None, None)]
    res = _run_lp(c, A_ub=a_ub, b_ub=np.zeros(m), bounds=bounds)
    if res.status != 0:
        return None
    direction = np.asarray(res.x[:n], dtype=float)
    margin = float(res.x[-1])
    return direction, margin


def _banded_decomposition(point: np.ndarray, gens: np.ndarray, band: float):
    m, n = gens.shape
    a_ub = np.vstack([gens.T, -gens.T])
    b_ub = np.concatenate([point + band, -point + band])
    a_eq = np.ones((1, m))
    res = _run_lp(np.zeros(m), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=[(0, None)] * m)
    if res.status != 0:
        return None
    return np.asarray(res.x, dtype=float)


def min_convex_weight(point, generators, tol: float = DEFAULT_TOL) -> Optional[float]:
    """Largest t such that `point` admits a convex decomposition with all weights >= t.

    Returns None when the point is not in the hull (within a tol-wide band).
    A positive value bounded away from zero certifies relative-interior
    membership.
    """
    gens = _as_generators(generators)
    m, n = gens.shape
    point = _as_vector(point, n, "point")
    # Variables (w, t): maximize t with w_i >= t, sum w = 1, |G^T w - point| <= tol.
    a_ub_weight = np.hstack([-np.eye(m), np.ones((m, 1))])
    a_ub_band = np.hstack([np.vstack([gens.T, -gens.T]), np.zeros((2 * n, 1))])
    a_ub = np.vstack([a_ub_weight, a_ub_band])
    b_ub = np.concatenate([np.zeros(m), point + tol, -point + tol])
    a_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    c = np.zeros(m + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * m + [(None, 1.0)]
    res = _run_lp(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds)
    if res.status != 0:
        return None
    return float(res.x[-1])


def max_weight_on(point, generators, index: int, band: float) -> Optional[float]:
    """Largest convex weight generator `index` can take in a decomposition of `point`."""
    gens = _as_generators(generators)
    m, n = gens.shape
    point = _as_vector(point, n, "point")
    a_ub = np.vstack([gens.T, -gens.T])
    b_ub = np.concatenate([point + band, -point + band])
    a_eq = np.ones((1, m))
    c = np.zeros(m)
    c[index] = -1.0
    res = _run_lp(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=[(0, None)] * m)
    if res.status != 0:
        return None
    return float(res.x[index])


def minimal_face_members(point, generators, tol: float = DEFAULT_TOL) -> tuple[int, ...]:
    """Indices of generators lying on the smallest polytope face containing `point`.

    A generator belongs to that face exactly when some convex decomposition of
    the point gives it positive weight; one LP per generator decides this.
    """
    gens = _as_generators(generators)
    members = []
    for i in range(len(gens)):
        w = max_weight_on(point, gens, i, band=tol)
        if w is None:
            raise DomainError("point is not in the convex hull of the generators")
        if w > RI_WEIGHT_FLOOR:
            members.append(i)
    return tuple(members)


def is_face(face: Face, space: OutcomeSpace, tol: float = DEFAULT_TOL) -> bool:
    """True when the member set is exactly the argmin of some linear functional.

    The empty set and the full outcome set always qualify. Strictness against
    non-members is enforced through an explicit LP margin scaled by the
    outcome norms.
    """
    face.check_indices(space)
    if face.is_empty:
        return True
    members = list(face.members)
    others = [i for i in range(space.size) if i not in face.members]
    if not others:
        return True
    pts = space.outcomes
    n = space.dim
    base = pts[members[0]]
    # Variables (u, s): maximize s subject to u.(x - base) = 0 on members and
    # u.(w - base) >= s off the face, with u in the unit box.
    rows_eq = [np.concatenate([pts[i] - base, [0.0]]) for i in members[1:]]
    a_eq = np.vstack(rows_eq) if rows_eq else None
    b_eq = np.zeros(len(rows_eq)) if rows_eq else None
    a_ub = np.vstack([np.concatenate([-(pts[j] - base), [1.0]]) for j in others])
    b_ub = np.zeros(len(others))
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(-1, 1)] * n + [(None, 1.0)]
    res = _run_lp(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds)
    if res.status != 0:
        return False
    margin = FACE_MARGIN * space.scale()
    return float(res.x[-1]) > margin


def minimal_face(mu, nu, space: OutcomeSpace, tol: float = DEFAULT_TOL) -> Face:
    """Smallest face X such that `nu` is a convex combination of X and `mu`.

    The ray from the belief through the price is cast to the last point still
    inside the polytope; the unique face holding that point in its relative
    interior is returned. Coincident inputs yield the empty face.
    """
    mu = _as_vector(mu, space.dim, "mu")
    nu = _as_vector(nu, space.dim, "nu")
    scale = space.scale()
    if not hull_membership(mu, space.outcomes, tol).inside:
        raise DomainError("belief lies outside the payoff polytope")
    if not hull_membership(nu, space.outcomes, tol).inside:
        raise DomainError("price lies outside the payoff polytope")
    if np.linalg.norm(nu - mu) <= tol * scale:
        return EMPTY_FACE

    gens = space.outcomes
    m, n = gens.shape
    # Variables (w, t): maximize t with G^T w - t (nu - mu) = mu, sum w = 1.
    a_eq = np.vstack(
        [
            np.hstack([gens.T, -(nu - mu).reshape(-1, 1)]),
            np.hstack([np.ones((1, m)), np.zeros((1, 1))]),
        ]
    )
    b_eq = np.concatenate([mu, [1.0]])
    c = np.zeros(m + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * m + [(0, None)]
    res = _run_lp(c, A_eq=a_eq, b_eq=b_eq, bounds=bounds)
    if res.status != 0:
        raise NumericalError("ray cast LP failed while locating the minimal face")
    t_exit = float(res.x[-1])
    exit_point = mu + t_exit * (nu - mu)
    members = minimal_face_members(exit_point, gens, tol=max(tol, 1e-9 * scale))
    return Face.of(members)


def witness_cone_contains(u, face: Face, space: OutcomeSpace, tol: float = DEFAULT_TOL) -> bool:
    """Whether direction u points weakly away from the face toward every outcome.

    The empty face accepts every direction.
    """
    u = _as_vector(u, space.dim, "u")
    face.check_indices(space)
    if face.is_empty:
        return True
    projections = space.outcomes @ u
    face_vals = projections[list(face.members)]
    return bool(np.min(projections) - np.max(face_vals) >= -tol)


def witness_cone_margin(u, face: Face, space: OutcomeSpace) -> tuple[float, tuple[int, int]]:
    """Worst inner product u.(w - x) over face members x and outcomes w, with its pair."""
    u = _as_vector(u, space.dim, "u")
    face.check_indices(space)
    if face.is_empty:
        return 0.0, (-1, -1)
    projections = space.outcomes @ u
    face_members = list(face.members)
    x_idx = face_members[int(np.argmax(projections[face_members]))]
    w_idx = int(np.argmin(projections))
    return float(projections[w_idx] - projections[x_idx]), (x_idx, w_idx)


def face_span(face: Face, space: OutcomeSpace) -> np.ndarray:
    """Orthonormal basis of the span of member differences (n x r, possibly r=0)."""
    pts = face.points(space) if not face.is_empty else np.zeros((0, space.dim))
    if len(pts) < 2:
        return np.zeros((space.dim, 0))
    return orthonormal_columns((pts[1:] - pts[0]).T)


def face_orthogonal_projector(face: Face, space: OutcomeSpace) -> np.ndarray:
    """Projector onto the orthogonal complement of the face's difference span.

    Empty and singleton faces yield the identity.
    """
    basis = face_span(face, space)
    return np.eye(space.dim) - (basis @ basis.T if basis.size else 0.0)


def affinely_independent(space: OutcomeSpace, tol: float = DEFAULT_TOL) -> bool:
    """True when the outcome vectors are affinely independent."""
    diffs = space.outcomes[1:] - space.outcomes[0]
    svals = np.linalg.svd(diffs, compute_uv=False)
    if svals.size == 0 or svals[0] <= 0.0:
        return False
    rank = int(np.sum(svals > tol * svals[0]))
    return rank == space.size - 1


def affine_dimension(space: OutcomeSpace, tol: float = DEFAULT_TOL) -> int:
    diffs = space.outcomes[1:] - space.outcomes[0]
    svals = np.linalg.svd(diffs, compute_uv=False)
    if svals.size == 0 or svals[0] <= 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


def enumerate_proper_faces(space: OutcomeSpace, tol: float = DEFAULT_TOL) -> list[Face]:
    """All non-empty proper faces of the payoff polytope, ordered by size then members.

    Facet incidence sets come from the convex hull in affine-hull coordinates;
    the face lattice is their closure under intersection. Exponential in the
    worst case, intended for small outcome sets.
    """
    pts = space.outcomes
    m = space.size
    center = pts.mean(axis=0)
    basis = orthonormal_columns((pts - center).T)
    d = basis.shape[1]
    coords = (pts - center) @ basis
    coord_scale = max(1.0, float(np.abs(coords).max()))
    on_tol = max(tol, 1e-9) * coord_scale

    incidences: set[frozenset[int]] = set()
    if d == 1:
        line = coords[:, 0]
        incidences.add(frozenset(np.nonzero(line <= line.min() + on_tol)[0].tolist()))
        incidences.add(frozenset(np.nonzero(line >= line.max() - on_tol)[0].tolist()))
    else:
        try:
            hull = ConvexHull(coords)
        except QhullError as exc:
            raise NumericalError(f"convex hull computation failed: {exc}") from exc
        seen = set()
        for eq in hull.equations:
            key = tuple(np.round(eq, 9))
            if key in seen:
                continue
            seen.add(key)
            normal, offset = eq[:-1], eq[-1]
            values = coords @ normal + offset
            incidences.add(frozenset(np.nonzero(np.abs(values) <= on_tol)[0].tolist()))

    incidences.discard(frozenset())
    closure = set(incidences)
    frontier = list(incidences)
    while frontier:
        current = frontier.pop()
        for other in list(closure):
            meet = current & other
            if meet and meet not in closure:
                closure.add(meet)
                frontier.append(meet)
    faces = [Face.of(s) for s in closure if len(s) < m]
    faces.sort(key=lambda f: (len(f.members), f.members))
    return faces


def simplex_space(n: int) -> OutcomeSpace:
    """The complete market over n outcomes: standard basis payoff vectors."""
    return OutcomeSpace(dim=n, outcomes=np.eye(n))


def hypercube_space(n: int) -> OutcomeSpace:
    """All 0/1 payoff combinations over n securities."""
    rows = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    return OutcomeSpace(dim=n, outcomes=rows)


def direct_sum_space(block_spaces: Sequence[OutcomeSpace]) -> OutcomeSpace:
    """Cartesian product of outcome sets, concatenating payoff coordinates."""
    if not block_spaces:
        raise MarketInputError("need at least one block")
    dim = sum(s.dim for s in block_spaces)
    rows = []
    labels = []
    has_labels = all(s.labels is not None for s in block_spaces)
    for combo in itertools.product(*(range(s.size) for s in block_spaces)):
        rows.append(np.concatenate([s.outcomes[i] for s, i in zip(block_spaces, combo)]))
        if has_labels:
            labels.append("|".join(s.labels[i] for s, i in zip(block_spaces, combo)))
    return OutcomeSpace(dim=dim, outcomes=np.array(rows), labels=tuple(labels) if has_labels else None)


def is_standard_simplex(space: OutcomeSpace, tol: float = 1e-12) -> bool:
    """Whether the outcomes are exactly the standard basis vectors, in any order."""
    if space.size != space.dim:
        return False
    target = np.eye(space.dim)
    remaining = list(range(space.dim))
    for row in space.outcomes:
        hit = next((j for j in remaining if np.allclose(row, target[j], atol=tol)), None)
        if hit is None:
            return False
        remaining.remove(hit)
    return True


def is_hypercube(space: OutcomeSpace, tol: float = 1e-12) -> bool:
    """Whether the outcomes are exactly all 0/1 vectors of the ambient dimension."""
    if space.size != 2 ** space.dim:
        return False
    if np.any(np.minimum(np.abs(space.outcomes), np.abs(space.outcomes - 1.0)) > tol):
        return False
    keys = {tuple(np.round(row).astype(int)) for row in space.outcomes}
    return len(keys) == space.size
