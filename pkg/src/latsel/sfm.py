"""Exact submodular function minimization.

Three entry points:

* :func:`minimize_bruteforce` enumerates every subset (test oracle, small n).
* :func:`min_norm_point` runs Wolfe's minimum-norm-point algorithm on the base
  polytope and reads the minimizer off the negative coordinates.
* :func:`semigradient_prune` shrinks the search interval ``[lower, upper]``
  with marginal-gain tests; :func:`minimize_submodular` chains the two.

All routines return the *minimal* minimizer: among subsets whose value is
within ``TIE_TOL`` (relative) of the minimum, the one of smallest cardinality,
then the smallest bitmask.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from latsel.lattice import (
    SetFunction,
    full_mask,
    greedy_base_vertex,
    mask_from_indices,
    mask_indices,
    popcount,
    restrict,
)

log = logging.getLogger(__name__)

BRUTE_FORCE_SFM_CAP = 16
TIE_TOL = 1e-9
RANK_TOL = 1e-12
WEIGHT_TOL = 1e-12


def tie_tolerance(value: float) -> float:
    return TIE_TOL * max(1.0, abs(value))


@dataclass
class SfmResult:
    minimizer: int
    value: float
    gap_certificate: float
    evaluations: int
    iterations: int = 0
    converged: bool = True
    point: np.ndarray | None = field(default=None, repr=False)
    norm_history: list[float] = field(default_factory=list, repr=False)
    # (best value so far, seconds since start) once per major cycle
    value_history: list[tuple[float, float]] = field(default_factory=list, repr=False)

    @property
    def indices(self) -> list[int]:
        return mask_indices(self.minimizer)


@dataclass
class MinNormState:
    """Wolfe working set: vertices (rows of ``corral``) and convex weights."""

    corral: np.ndarray
    convex_weights: np.ndarray
    current_point: np.ndarray


def _better(candidate: tuple[int, float], incumbent: tuple[int, float] | None) -> bool:
    if incumbent is None:
        return True
    mask, value = candidate
    best_mask, best_value = incumbent
    tol = tie_tolerance(best_value)
    if value < best_value - tol:
        return True
    if value > best_value + tol:
        return False
    return (popcount(mask), mask) < (popcount(best_mask), best_mask)


def minimize_bruteforce(F: SetFunction, cap: int = BRUTE_FORCE_SFM_CAP) -> SfmResult:
    if F.n > cap:
        raise ValueError(f"brute-force minimization refused for n={F.n} > cap {cap}")
    values = F.all_values()
    lowest = values.min()
    masks = np.flatnonzero(values <= lowest + tie_tolerance(lowest))
    best = min(masks.tolist(), key=lambda m: (popcount(m), m))
    return SfmResult(
        minimizer=best,
        value=F(best),
        gap_certificate=0.0,
        evaluations=F.evaluations,
    )


def _affine_minimizer(P: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of the min-norm point of the affine hull of the rows of P."""
    m = P.shape[0]
    M = np.empty((m + 1, m + 1))
    M[0, 0] = 0.0
    M[0, 1:] = 1.0
    M[1:, 0] = 1.0
    M[1:, 1:] = P @ P.T
    rhs = np.zeros(m + 1)
    rhs[0] = 1.0
    sol = np.linalg.lstsq(M, rhs, rcond=RANK_TOL)[0]
    return sol[1:]


def wolfe_min_norm(
    lmo: Callable[[np.ndarray], tuple[np.ndarray, object]],
    n: int,
    scale: np.ndarray | None = None,
    max_iter: int = 10_000,
    eps: float = 1e-12,
    on_major: Callable[[np.ndarray, object], bool] | None = None,
) -> tuple[np.ndarray, MinNormState, int, bool, list[float]]:
    """Nearest point to the origin of ``diag(scale) @ P`` for a polytope ``P``.

    ``lmo(y)`` must return a vertex ``s`` of ``P`` minimizing ``<y, s>`` plus
    any auxiliary object; ``on_major(s, aux)`` is called once per major cycle
    with the current point (unscaled) and the auxiliary result of the linear
    oracle at that point, and may return True to stop early.

    Returns ``(s, state, iterations, optimal, squared_norms)`` where ``s`` is
    the point in unscaled coordinates.
    """
    scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    v, _ = lmo(np.zeros(n))
    P = (scale * v)[None, :]
    lam = np.ones(1)
    x = P[0].copy()
    norms = [float(x @ x)]
    iterations = 0
    optimal = False
    while True:
        q_s, aux = lmo(scale * x)
        if on_major is not None and on_major(x / scale, aux):
            break
        q = scale * q_s
        xx = float(x @ x)
        bound = max(float(q @ q), float(np.max(np.einsum("ij,ij->i", P, P))))
        if xx - float(x @ q) <= eps * max(bound, 1e-300):
            optimal = True
            break
        if np.any(np.all(np.abs(P - q) <= 1e-12 * max(1.0, np.abs(q).max()), axis=1)):
            optimal = True
            break
        if iterations >= max_iter:
            break
        iterations += 1
        P = np.vstack([P, q])
        lam = np.append(lam, 0.0)
        for _ in range(P.shape[0] + 1):
            alpha = _affine_minimizer(P)
            if alpha.min() >= -WEIGHT_TOL:
                lam = np.clip(alpha, 0.0, None)
                lam /= lam.sum()
                x = lam @ P
                break
            neg = alpha < -WEIGHT_TOL
            theta = float(np.min(lam[neg] / (lam[neg] - alpha[neg])))
            lam = (1.0 - theta) * lam + theta * alpha
            keep = lam > WEIGHT_TOL
            P, lam = P[keep], lam[keep]
            lam /= lam.sum()
            x = lam @ P
        else:
            log.warning("minor cycle did not settle; continuing from the last point")
        norms.append(float(x @ x))
    state = MinNormState(corral=P / scale, convex_weights=lam, current_point=x / scale)
    return x / scale, state, iterations, optimal, norms


def min_norm_point(F: SetFunction, tol: float = 1e-4, max_iter: int = 100) -> SfmResult:
    """Minimize a submodular ``F`` with the minimum-norm-point algorithm.

    Stops once the duality gap certificate drops to ``tol`` or Wolfe's
    optimality test passes.  ``max_iter`` bounds the number of major cycles;
    when it runs out the best set seen so far is returned with
    ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = F.n
    f0 = F(0)
    if n == 0:
        return SfmResult(minimizer=0, value=f0, gap_certificate=0.0, evaluations=F.evaluations)

    best: list = [None, -np.inf]  # (mask, value), best lower bound
    history: list[tuple[float, float]] = []
    start = time.perf_counter()

    def lmo(y):
        vertex = greedy_base_vertex(F, np.argsort(y, kind="stable"))
        return vertex.weights, vertex

    def on_major(s, vertex) -> bool:
        prefix = vertex.prefix_values
        lowest = prefix.min()
        k = int(np.flatnonzero(prefix <= lowest + tie_tolerance(lowest))[0])
        cand = (mask_from_indices(vertex.ordering[:k]), float(prefix[k]))
        if _better(cand, best[0]):
            best[0] = cand
        best[1] = max(best[1], f0 + float(np.minimum(s, 0.0).sum()))
        history.append((best[0][1], time.perf_counter() - start))
        return best[0][1] - best[1] <= tol

    s, _, iterations, optimal, norms = wolfe_min_norm(lmo, n, max_iter=max_iter, on_major=on_major)
    mask, value = best[0]
    gap = max(0.0, value - best[1])
    converged = optimal or gap <= tol
    if not converged:
        log.warning("min-norm point stopped after %d major cycles with gap %.3g", iterations, gap)
    return SfmResult(
        minimizer=mask,
        value=F(mask),
        gap_certificate=gap,
        evaluations=F.evaluations,
        iterations=iterations,
        converged=converged,
        point=s,
        norm_history=norms,
        value_history=history,
    )


def semigradient_prune(F: SetFunction) -> tuple[int, int]:
    """Bracket ``lower <= A* <= upper`` around the minimal minimizer ``A*``.

    Element ``i`` joins ``lower`` when adding it to ``lower`` strictly
    decreases ``F`` (then it decreases every superset too), and leaves
    ``upper`` when adding it to ``upper - {i}`` does not decrease ``F`` (then
    no minimal minimizer can hold it).  Iterates to a fixed point.
    """
    lower, upper = 0, full_mask(F.n)
    changed = True
    while changed:
        changed = False
        base = F(lower)
        for i in mask_indices(upper & ~lower):
            bit = 1 << i
            gain = F(lower | bit) - base
            if gain < -tie_tolerance(base):
                lower |= bit
                base = F(lower)
                changed = True
        top = F(upper)
        for i in mask_indices(upper & ~lower):
            bit = 1 << i
            below = F(upper & ~bit)
            if top - below >= -tie_tolerance(top):
                upper &= ~bit
                top = below
                changed = True
    return lower, upper


def minimize_submodular(
    F: SetFunction,
    tol: float = 1e-4,
    max_iter: int = 100,
    prune: bool = True,
) -> SfmResult:
    """Prune the lattice with marginal tests, then run min-norm on what is left."""
    lower, upper = semigradient_prune(F) if prune else (0, full_mask(F.n))
    if lower == upper:
        return SfmResult(minimizer=lower, value=F(lower), gap_certificate=0.0, evaluations=F.evaluations)
    reduced, free = restrict(F, lower, upper)
    res = min_norm_point(reduced, tol=tol, max_iter=max_iter)
    mask = lower | mask_from_indices(free[i] for i in mask_indices(res.minimizer))
    point = None
    if res.point is not None:
        point = np.zeros(F.n)
        point[free] = res.point
    return SfmResult(
        minimizer=mask,
        value=F(mask),
        gap_certificate=res.gap_certificate,
        evaluations=F.evaluations,
        iterations=res.iterations,
        converged=res.converged,
        point=point,
        norm_history=res.norm_history,
        value_history=res.value_history,
    )
