"""Small numerical kernels shared across the package."""

from __future__ import annotations

from typing import Callable, Tuple

import numpy as np
from scipy.optimize import nnls

from .errors import NumericalError

Derivs = Callable[[np.ndarray], Tuple[float, np.ndarray, np.ndarray]]


def damped_newton(
    derivs: Derivs,
    y0: np.ndarray,
    grad_tol: float,
    max_iter: int = 200,
    armijo: float = 1e-4,
    diverge_norm: float = 1e10,
    raise_on_limit: bool = True,
) -> tuple[np.ndarray, float, float, int]:
    """Minimize a smooth convex function with safeguarded Newton steps.

    `derivs(y)` returns (value, gradient, hessian). Each step uses a
    backtracking Armijo line search with a machine-epsilon slack so that
    progress below float resolution of the value still counts; near-singular
    hessians get an escalating diagonal shift. Returns
    (argmin, value, grad_norm, iterations).

    Raises NumericalError on stall or, when `raise_on_limit`, on iteration
    exhaustion; the error's `diverged` flag marks iterates that ran off to
    infinity. With `raise_on_limit=False` the best iterate is returned even if
    the gradient target was not met.
    """
    y = np.array(y0, dtype=float)
    if y.size == 0:
        value, grad, _ = derivs(y)
        return y, value, 0.0, 0
    value, grad, hess = derivs(y)
    grad_norm = float(np.linalg.norm(grad))
    for iteration in range(max_iter):
        if grad_norm <= grad_tol:
            return y, value, grad_norm, iteration
        if float(np.linalg.norm(y)) > diverge_norm:
            raise NumericalError(
                "iterates diverged; infimum appears unattained",
                residual=grad_norm,
                diverged=True,
            )
        step = _newton_direction(hess, grad)
        slope = float(grad @ step)
        if slope >= 0.0:
            step = -grad
            slope = -grad_norm ** 2
        slack = 1e-15 * (1.0 + abs(value))
        t = 1.0
        accepted = False
        while t >= 1e-18:
            candidate = y + t * step
            cand_value = derivs(candidate)[0]
            if np.isfinite(cand_value) and cand_value <= value + armijo * t * slope + slack:
                y = candidate
                value, grad, hess = derivs(y)
                grad_norm = float(np.linalg.norm(grad))
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if raise_on_limit:
                raise NumericalError("line search stalled", residual=grad_norm)
            return y, value, grad_norm, iteration
    if raise_on_limit:
        raise NumericalError("newton iteration limit reached", residual=grad_norm)
    return y, value, grad_norm, max_iter


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    n = grad.size
    scale = max(float(np.trace(hess)) / max(n, 1), 1.0)
    ridge = 0.0
    for _ in range(10):
        shifted = hess if ridge == 0.0 else hess + ridge * np.eye(n)
        try:
            d = np.linalg.solve(shifted, -grad)
        except np.linalg.LinAlgError:
            d = None
        if d is not None and np.all(np.isfinite(d)):
            return d
        ridge = max(ridge * 10.0, 1e-12 * scale)
    return -grad


def orthonormal_columns(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (n x r) of the column space of an n x k matrix; r may be 0."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    n = mat.shape[0]
    if mat.shape[1] == 0:
        return np.zeros((n, 0))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.zeros((n, 0))
    rank = int(np.sum(s > tol * s[0]))
    return u[:, :rank]


def orthonormal_complement(basis: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(basis) in R^n."""
    if basis.size == 0:
        return np.eye(n)
    residual = np.eye(n) - basis @ basis.T
    u, s, _ = np.linalg.svd(residual)
    rank = int(np.sum(s > 0.5))
    return u[:, :rank]


def projector_onto(basis: np.ndarray, n: int) -> np.ndarray:
    """Orthogonal projector onto span(basis), given orthonormal columns."""
    if basis.size == 0:
        return np.zeros((n, n))
    return basis @ basis.T


def simplex_weights(generators: np.ndarray, point: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares convex combination of the generator rows hitting `point`.

    Returns (weights, residual) with weights >= 0 summing to one; the residual
    is the Euclidean reproduction error after renormalization.
    """
    gens = np.atleast_2d(np.asarray(generators, dtype=float))
    point = np.asarray(point, dtype=float)
    scale = max(1.0, float(np.abs(gens).max()))
    kappa = 1e4 * scale
    system = np.vstack([gens.T, kappa * np.ones(len(gens))])
    target = np.concatenate([point, [kappa]])
    weights, _ = nnls(system, target)
    total = weights.sum()
    if total > 0.0:
        weights = weights / total
    residual = float(np.linalg.norm(gens.T @ weights - point))
    return weights, residual
