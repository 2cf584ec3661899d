"""Cost-function market makers: prices, conjugates, divergences, inverse prices.

Four cost kinds are provided: quadratic, LMSR, log-partition over an explicit
outcome set, and direct sums of independent blocks. Models are immutable after
construction; every evaluation is a pure function and safe to share across
threads.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import geometry
from .errors import DomainError, MarketInputError
from .geometry import RI_WEIGHT_FLOOR, OutcomeSpace
from .numerics import damped_newton, orthonormal_columns, orthonormal_complement

# Arbitrage verdicts for initial states.
CERTIFIED_YES = "certified_yes"
CERTIFIED_NO = "certified_no"
UNKNOWN = "unknown"

# Safeguarded Newton convergence target, scaled by the query magnitude.
NEWTON_GRAD_TOL = 1e-11
NEWTON_MAX_ITER = 200


@dataclass(frozen=True)
class MarketState:
    """Outstanding shares per security; fractional and negative values allowed."""

    q: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.q, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise MarketInputError("market state must be finite")
        vec.setflags(write=False)
        object.__setattr__(self, "q", vec)


@dataclass(frozen=True)
class PriceVector:
    """A price vector with optional structural membership flags.

    Flags are None when the model alone cannot decide them (e.g. a quadratic
    price may or may not lie in the payoff polytope).
    """

    nu: np.ndarray
    in_M: Optional[bool] = None
    in_ri_domain: Optional[bool] = None


def as_state(value) -> np.ndarray:
    if isinstance(value, MarketState):
        return value.q
    vec = np.asarray(value, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise MarketInputError("market state must be finite")
    return vec


def as_price(value) -> np.ndarray:
    if isinstance(value, PriceVector):
        return value.nu
    return np.asarray(value, dtype=float).reshape(-1)


class CostModel(abc.ABC):
    """Convex potential pricing a market; subclasses fix the functional form."""

    kind: str
    dim: int

    def _check_dim(self, v: np.ndarray, name: str) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.dim:
            raise MarketInputError(f"{name} has length {v.size}, expected {self.dim}")
        return v

    @abc.abstractmethod
    def cost(self, q) -> float:
        """Potential value at state q."""

    @abc.abstractmethod
    def price_array(self, q) -> np.ndarray:
        """Gradient of the potential: instantaneous prices."""

    @abc.abstractmethod
    def hessian(self, q) -> np.ndarray:
        """Second derivative of the potential at q."""

    @abc.abstractmethod
    def conjugate(self, nu, tol: float = 1e-9) -> float:
        """Convex conjugate of the potential; may be +inf off its domain."""

    @abc.abstractmethod
    def inverse_price_array(self, nu, tol: float = 1e-9) -> np.ndarray:
        """Canonical state whose price equals nu; requires nu strictly expressible."""

    @abc.abstractmethod
    def in_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        """Whether the conjugate is finite at nu (within a tol-wide band)."""

    @abc.abstractmethod
    def in_ri_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        """Whether nu lies in the relative interior of the conjugate's domain."""

    @property
    @abc.abstractmethod
    def is_strictly_convex(self) -> bool:
        """Strict convexity of the potential on all of state space."""

    @abc.abstractmethod
    def parallel_directions(self) -> np.ndarray:
        """Orthonormal basis of the span in which prices respond to the state."""

    @abc.abstractmethod
    def irrelevant_directions(self) -> np.ndarray:
        """Orthonormal basis of state displacements that change nothing observable."""

    @abc.abstractmethod
    def conjugate_domain_covers(self, space: OutcomeSpace, tol: float = 1e-9) -> bool:
        """Whether the whole payoff polytope sits inside ri dom of the conjugate."""

    def price_flags(self) -> tuple[Optional[bool], Optional[bool]]:
        """(in_M, in_ri_domain) guarantees that hold for every price this model emits."""
        return None, True

    def price(self, q) -> PriceVector:
        in_m, in_ri = self.price_flags()
        return PriceVector(nu=self.price_array(q), in_M=in_m, in_ri_domain=in_ri)


class QuadraticCost(CostModel):
    """Half squared norm potential; prices equal the state itself."""

    kind = "quadratic"

    def __init__(self, dim: int):
        if dim <= 0:
            raise MarketInputError("dimension must be positive")
        self.dim = int(dim)

    def cost(self, q) -> float:
        q = self._check_dim(q, "q")
        return 0.5 * float(q @ q)

    def price_array(self, q) -> np.ndarray:
        return self._check_dim(q, "q").copy()

    def hessian(self, q) -> np.ndarray:
        return np.eye(self.dim)

    def conjugate(self, nu, tol: float = 1e-9) -> float:
        nu = self._check_dim(nu, "nu")
        return 0.5 * float(nu @ nu)

    def inverse_price_array(self, nu, tol: float = 1e-9) -> np.ndarray:
        return self._check_dim(nu, "nu").copy()

    def in_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        self._check_dim(nu, "nu")
        return True

    def in_ri_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        self._check_dim(nu, "nu")
        return True

    @property
    def is_strictly_convex(self) -> bool:
        return True

    def parallel_directions(self) -> np.ndarray:
        return np.eye(self.dim)

    def irrelevant_directions(self) -> np.ndarray:
        return np.zeros((self.dim, 0))

    def conjugate_domain_covers(self, space: OutcomeSpace, tol: float = 1e-9) -> bool:
        return True


class LmsrCost(CostModel):
    """Log-sum-exp over coordinates: the classic complete-market scoring rule.

    Prices form a probability vector; the conjugate is negative entropy on the
    simplex and +inf elsewhere.
    """

    kind = "lmsr"

    def __init__(self, dim: int):
        if dim < 2:
            raise MarketInputError("lmsr needs at least two securities")
        self.dim = int(dim)
        self._irrelevant = np.ones((self.dim, 1)) / math.sqrt(self.dim)
        self._parallel = orthonormal_complement(self._irrelevant, self.dim)

    def cost(self, q) -> float:
        q = self._check_dim(q, "q")
        return float(logsumexp(q))

    def price_array(self, q) -> np.ndarray:
        q = self._check_dim(q, "q")
        shifted = q - q.max()
        e = np.exp(shifted)
        return e / e.sum()

    def hessian(self, q) -> np.ndarray:
        p = self.price_array(q)
        return np.diag(p) - np.outer(p, p)

    def conjugate(self, nu, tol: float = 1e-9) -> float:
        nu = self._check_dim(nu, "nu")
        if not self.in_conjugate_domain(nu, tol):
            return math.inf
        clipped = np.clip(nu, 0.0, None)
        mask = clipped > 0.0
        return float(np.sum(clipped[mask] * np.log(clipped[mask])))

    def inverse_price_array(self, nu, tol: float = 1e-9) -> np.ndarray:
        nu = self._check_dim(nu, "nu")
        if not self.in_ri_conjugate_domain(nu, tol):
            raise DomainError("price must lie strictly inside the probability simplex")
        # ln nu sums its exponentials to one, so the zero-cost normalization is built in.
        return np.log(nu)

    def in_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        nu = self._check_dim(nu, "nu")
        return bool(np.all(nu >= -tol) and abs(nu.sum() - 1.0) <= tol)

    def in_ri_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        nu = self._check_dim(nu, "nu")
        return bool(np.all(nu >= RI_WEIGHT_FLOOR) and abs(nu.sum() - 1.0) <= tol)

    @property
    def is_strictly_convex(self) -> bool:
        return False

    def parallel_directions(self) -> np.ndarray:
        return self._parallel

    def irrelevant_directions(self) -> np.ndarray:
        return self._irrelevant

    def conjugate_domain_covers(self, space: OutcomeSpace, tol: float = 1e-9) -> bool:
        return all(self.in_ri_conjugate_domain(w, tol) for w in space.outcomes)

    def price_flags(self) -> tuple[Optional[bool], Optional[bool]]:
        return True, True


class LogPartitionCost(CostModel):
    """Log of summed exponentials of payoff scores; generalizes LMSR to any outcome set.

    Prices are expectations of the payoff vectors under the exponential-family
    distribution induced by the state. The conjugate is finite exactly on the
    payoff polytope, where it equals the negative maximum entropy compatible
    with the queried mean.
    """

    kind = "log_partition"

    def __init__(self, space: OutcomeSpace):
        self.space = space
        self.dim = space.dim
        self._payoffs = space.outcomes
        diffs = (space.outcomes[1:] - space.outcomes[0]).T
        self._parallel = orthonormal_columns(diffs)
        self._irrelevant = orthonormal_complement(self._parallel, self.dim)

    def _weights(self, q: np.ndarray) -> np.ndarray:
        z = self._payoffs @ q
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def cost(self, q) -> float:
        q = self._check_dim(q, "q")
        return float(logsumexp(self._payoffs @ q))

    def price_array(self, q) -> np.ndarray:
        q = self._check_dim(q, "q")
        return self._weights(q) @ self._payoffs

    def hessian(self, q) -> np.ndarray:
        q = self._check_dim(q, "q")
        w = self._weights(q)
        mean = w @ self._payoffs
        return (self._payoffs.T * w) @ self._payoffs - np.outer(mean, mean)

    def _dual_optimum(self, nu: np.ndarray, support: Sequence[int]) -> tuple[np.ndarray, float]:
        """Maximize q.nu - cost(q) restricted to outcomes in `support`.

        Returns the canonical maximizer (no component along irrelevant
        directions) and the optimal value.
        """
        payoffs = self._payoffs[list(support)]
        if len(payoffs) == 1:
            return np.zeros(self.dim), 0.0
        basis = orthonormal_columns((payoffs[1:] - payoffs[0]).T)

        def derivs(y):
            q = basis @ y
            z = payoffs @ q
            zmax = z.max()
            e = np.exp(z - zmax)
            total = e.sum()
            value = float(zmax + np.log(total) - q @ nu)
            w = e / total
            mean = w @ payoffs
            grad = basis.T @ (mean - nu)
            hess = basis.T @ ((payoffs.T * w) @ payoffs - np.outer(mean, mean)) @ basis
            return value, grad, hess

        gtol = NEWTON_GRAD_TOL * (1.0 + float(np.linalg.norm(nu)))
        y, value, _, _ = damped_newton(derivs, np.zeros(basis.shape[1]), gtol, NEWTON_MAX_ITER)
        return basis @ y, -value

    def conjugate(self, nu, tol: float = 1e-9) -> float:
        nu = self._check_dim(nu, "nu")
        cert = geometry.hull_membership(nu, self._payoffs, tol)
        if not cert.inside:
            return math.inf
        if self.in_ri_conjugate_domain(nu, tol):
            support: Sequence[int] = range(self.space.size)
        else:
            support = geometry.minimal_face_members(nu, self._payoffs, tol)
        _, value = self._dual_optimum(nu, list(support))
        return value

    def inverse_price_array(self, nu, tol: float = 1e-9) -> np.ndarray:
        nu = self._check_dim(nu, "nu")
        if not self.in_ri_conjugate_domain(nu, tol):
            raise DomainError("price is not strictly inside the payoff polytope")
        q, _ = self._dual_optimum(nu, range(self.space.size))
        return q

    def in_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        nu = self._check_dim(nu, "nu")
        return geometry.hull_membership(nu, self._payoffs, tol).inside

    def in_ri_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        nu = self._check_dim(nu, "nu")
        w = geometry.min_convex_weight(nu, self._payoffs, tol)
        return w is not None and w >= RI_WEIGHT_FLOOR

    @property
    def is_strictly_convex(self) -> bool:
        return self._parallel.shape[1] == self.dim

    def parallel_directions(self) -> np.ndarray:
        return self._parallel

    def irrelevant_directions(self) -> np.ndarray:
        return self._irrelevant

    def conjugate_domain_covers(self, space: OutcomeSpace, tol: float = 1e-9) -> bool:
        return False

    def price_flags(self) -> tuple[Optional[bool], Optional[bool]]:
        return True, True


class DirectSumCost(CostModel):
    """Independent sub-markets priced by separate costs on disjoint coordinates."""

    kind = "direct_sum"

    def __init__(self, blocks: Sequence[CostModel]):
        if not blocks:
            raise MarketInputError("direct sum needs at least one block")
        self.blocks = tuple(blocks)
        self.dims = tuple(b.dim for b in self.blocks)
        self.dim = sum(self.dims)
        offsets = np.cumsum((0,) + self.dims)
        self._slices = tuple(slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:]))
        self._parallel = self._embed([b.parallel_directions() for b in self.blocks])
        self._irrelevant = self._embed([b.irrelevant_directions() for b in self.blocks])

    def _embed(self, block_bases: Sequence[np.ndarray]) -> np.ndarray:
        cols = []
        for sl, basis in zip(self._slices, block_bases):
            for j in range(basis.shape[1]):
                col = np.zeros(self.dim)
                col[sl] = basis[:, j]
                cols.append(col)
        if not cols:
            return np.zeros((self.dim, 0))
        return np.column_stack(cols)

    def split(self, v) -> list[np.ndarray]:
        v = self._check_dim(v, "vector")
        return [v[sl] for sl in self._slices]

    def cost(self, q) -> float:
        return sum(b.cost(part) for b, part in zip(self.blocks, self.split(q)))

    def price_array(self, q) -> np.ndarray:
        return np.concatenate([b.price_array(part) for b, part in zip(self.blocks, self.split(q))])

    def hessian(self, q) -> np.ndarray:
        h = np.zeros((self.dim, self.dim))
        for b, sl, part in zip(self.blocks, self._slices, self.split(q)):
            h[sl, sl] = b.hessian(part)
        return h

    def conjugate(self, nu, tol: float = 1e-9) -> float:
        return sum(b.conjugate(part, tol) for b, part in zip(self.blocks, self.split(nu)))

    def inverse_price_array(self, nu, tol: float = 1e-9) -> np.ndarray:
        return np.concatenate(
            [b.inverse_price_array(part, tol) for b, part in zip(self.blocks, self.split(nu))]
        )

    def in_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        return all(b.in_conjugate_domain(part, tol) for b, part in zip(self.blocks, self.split(nu)))

    def in_ri_conjugate_domain(self, nu, tol: float = 1e-9) -> bool:
        return all(
            b.in_ri_conjugate_domain(part, tol) for b, part in zip(self.blocks, self.split(nu))
        )

    @property
    def is_strictly_convex(self) -> bool:
        return all(b.is_strictly_convex for b in self.blocks)

    def parallel_directions(self) -> np.ndarray:
        return self._parallel

    def irrelevant_directions(self) -> np.ndarray:
        return self._irrelevant

    def conjugate_domain_covers(self, space: OutcomeSpace, tol: float = 1e-9) -> bool:
        for b, sl in zip(self.blocks, self._slices):
            if isinstance(b, QuadraticCost):
                continue
            if isinstance(b, LmsrCost):
                if not all(b.in_ri_conjugate_domain(w[sl], tol) for w in space.outcomes):
                    return False
                continue
            return False
        return True

    def price_flags(self) -> tuple[Optional[bool], Optional[bool]]:
        flags = [b.price_flags() for b in self.blocks]
        in_m = True if all(f[0] for f in flags) else None
        return in_m, True


def cost(model: CostModel, q) -> float:
    """Potential value at state q."""
    return model.cost(as_state(q))


def price(model: CostModel, q) -> PriceVector:
    """Instantaneous prices at state q (the gradient of the cost)."""
    return model.price(as_state(q))


def utility(model: CostModel, q_new, theta, q_old) -> float:
    """Realized or expected payoff of moving the market from q_old to q_new.

    `theta` may be an outcome vector or any expected-payoff vector; the value
    is linear in it.
    """
    q_new = as_state(q_new)
    q_old = as_state(q_old)
    theta = as_price(theta)
    return float((q_new - q_old) @ theta) - model.cost(q_new) + model.cost(q_old)


def conjugate(model: CostModel, nu, tol: float = 1e-9) -> float:
    """Convex conjugate of the cost; +inf outside its effective domain."""
    return model.conjugate(as_price(nu), tol)


def divergence(model: CostModel, q, nu) -> float:
    """Maximum expected utility available at state q under belief nu.

    Nonnegative; zero exactly when the current prices already equal nu.
    """
    q = as_state(q)
    nu = as_price(nu)
    conj = model.conjugate(nu)
    if math.isinf(conj):
        return math.inf
    return model.cost(q) + conj - float(q @ nu)


def inverse_price(model: CostModel, nu, tol: float = 1e-9) -> MarketState:
    """Canonical market state realizing the requested prices."""
    return MarketState(model.inverse_price_array(as_price(nu), tol))


def in_m_tilde(model: CostModel, space: OutcomeSpace, nu, tol: float = 1e-9) -> bool:
    """Membership in the region where the trade characterization applies.

    This is the full payoff polytope when the polytope sits strictly inside
    the conjugate's domain, and the polytope's relative interior otherwise.
    """
    nu = as_price(nu)
    if model.conjugate_domain_covers(space, tol):
        return geometry.hull_membership(nu, space.outcomes, tol).inside
    w = geometry.min_convex_weight(nu, space.outcomes, tol)
    return w is not None and w >= RI_WEIGHT_FLOOR


def is_arbitrage_free(model: CostModel, space: OutcomeSpace, q0, tol: float = 1e-9) -> str:
    """Certify whether a zero-budget trader would stay put at q0.

    Prices outside the payoff polytope refute it outright. Prices in the
    relative interior, or anywhere in the polytope under a strictly convex
    cost, certify it. Everything else is unknown; callers may fall back to a
    zero-budget solve.
    """
    q0 = as_state(q0)
    p0 = model.price_array(q0)
    cert = geometry.hull_membership(p0, space.outcomes, tol)
    if not cert.inside:
        return CERTIFIED_NO
    w = geometry.min_convex_weight(p0, space.outcomes, tol)
    if w is not None and w >= RI_WEIGHT_FLOOR:
        return CERTIFIED_YES
    if model.is_strictly_convex:
        return CERTIFIED_YES
    return UNKNOWN
