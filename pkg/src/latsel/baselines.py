"""The two comparison solvers.

:func:`pgd_lovasz_minimize`
    projected subgradient descent on the Lovász extension of ``g + H`` over
    the unit cube, with Polyak steps.
:func:`discretized_fw_minimize`
    ignores the set structure altogether: every coordinate is restricted to
    ``k`` grid values and ``f(x) + g(supp(x))`` is minimized as a submodular
    function on the product of chains, by pairwise Frank-Wolfe on the dual of
    its quadratically regularized extension.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from sklearn.isotonic import isotonic_regression

from latsel.inner import CompositeFunction, QuadraticSpec
from latsel.lattice import SetFunction, descending_order, greedy_base_vertex, mask_from_indices, mask_indices
from latsel.sfm import SfmResult, _better, tie_tolerance

MAX_GRID_ENTRIES = 200_000


@dataclass
class TraceRow:
    iteration: int
    objective: float
    elapsed: float


@dataclass
class DiscretizationGrid:
    k: int
    box_lo: np.ndarray
    box_hi: np.ndarray

    def __post_init__(self):
        self.box_lo = np.atleast_1d(np.asarray(self.box_lo, dtype=float))
        self.box_hi = np.atleast_1d(np.asarray(self.box_hi, dtype=float))
        if self.k < 2:
            raise ValueError("a grid needs at least two points per dimension")
        if self.box_lo.shape != self.box_hi.shape or np.any(self.box_lo >= self.box_hi):
            raise ValueError("need box_lo < box_hi elementwise")

    @classmethod
    def uniform(cls, n: int, k: int, lo: float = 0.0, hi: float = 1.0) -> "DiscretizationGrid":
        return cls(k, np.full(n, lo), np.full(n, hi))

    @property
    def n(self) -> int:
        return len(self.box_lo)

    def values(self) -> np.ndarray:
        """``n x k`` array; row ``i`` lists the admissible values of coordinate ``i`` in increasing order."""
        t = np.linspace(0.0, 1.0, self.k)
        return self.box_lo[:, None] + (self.box_hi - self.box_lo)[:, None] * t[None, :]


def pgd_lovasz_minimize(
    comp: SetFunction,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> tuple[SfmResult, list[TraceRow]]:
    """Projected subgradient descent on the Lovász extension, started at the cube center.

    Every subgradient comes from the greedy rule, so each iteration also
    evaluates ``comp`` on the ``n + 1`` prefix sets of the current ordering;
    the best of those sets seen so far is the returned solution.  The step is
    Polyak's, aimed at the best value so far minus ``1/(t+1)``.  The lower
    bound ``comp(empty) + sum(min(s_bar, 0))`` from the running average
    ``s_bar`` of the subgradients certifies the gap; the loop stops once the
    gap is at most ``tol``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    n = comp.n
    f0 = comp(0)
    start = time.perf_counter()
    if n == 0:
        return SfmResult(0, f0, 0.0, comp.evaluations), [TraceRow(0, f0, 0.0)]
    u = np.full(n, 0.5)
    s_sum = np.zeros(n)
    best = None
    lower = -np.inf
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        vertex = greedy_base_vertex(comp, descending_order(u))
        s = vertex.weights
        prefix = vertex.prefix_values
        k = int(np.argmin(prefix))
        cand = (mask_from_indices(vertex.ordering[:k]), float(prefix[k]))
        if _better(cand, best):
            best = cand
        s_sum += s
        lower = max(lower, f0 + float(np.minimum(s_sum / it, 0.0).sum()))
        trace.append(TraceRow(it, best[1], time.perf_counter() - start))
        if best[1] - lower <= tol:
            break
        value = prefix[0] + float(s @ u)
        target = best[1] - 1.0 / (it + 1)
        norm2 = float(s @ s)
        if norm2 == 0.0:
            break
        u = np.clip(u - (value - target) / norm2 * s, 0.0, 1.0)
    gap = max(0.0, best[1] - lower)
    mask = _drop_tied_elements(comp, best[0])
    return (
        SfmResult(
            minimizer=mask,
            value=comp(mask),
            gap_certificate=gap,
            evaluations=comp.evaluations,
            iterations=it,
            converged=gap <= tol,
        ),
        trace,
    )


def _drop_tied_elements(F: SetFunction, mask: int) -> int:
    # The gap certificate can close while the incumbent is a larger member of a
    # tie; shedding elements that do not raise the value leans toward the
    # minimal minimizer without ever giving up objective value.
    value = F(mask)
    changed = True
    while changed:
        changed = False
        for i in reversed(mask_indices(mask)):
            smaller = mask & ~(1 << i)
            if F(smaller) <= value + tie_tolerance(value):
                mask, value, changed = smaller, min(value, F(smaller)), True
    return mask


class _ProductLatticeFunction:
    """``x -> f(x) + g(supp(x))`` on the grid, with greedy walks along the lattice."""

    def __init__(self, fspec: QuadraticSpec, g: SetFunction, grid: DiscretizationGrid):
        n = fspec.n
        if grid.n != n or g.n != n:
            raise ValueError(f"grid has {grid.n} coordinates, f has {n}, g has {g.n}")
        if n * grid.k > MAX_GRID_ENTRIES:
            raise MemoryError(f"n*k = {n * grid.k} exceeds the grid cap {MAX_GRID_ENTRIES}")
        self.fspec, self.g, self.grid = fspec, g, grid
        self.n, self.k = n, grid.k
        self.vals = grid.values()
        self.nonzero = self.vals != 0.0
        self.x0 = self.vals[:, 0].copy()
        self.F0 = self.value_at(np.zeros(n, dtype=int))

    def point(self, levels: np.ndarray) -> np.ndarray:
        return self.vals[np.arange(self.n), levels]

    def value_at(self, levels: np.ndarray) -> float:
        x = self.point(levels)
        return self.fspec.value(x) + self.g(mask_from_indices(np.flatnonzero(x)))

    def walk(self, order_rows: np.ndarray, order_cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Marginal gains along a walk that raises coordinate ``order_rows[t]`` to level ``order_cols[t]+1``.

        Returns the gains (the greedy vertex in walk order) and the objective
        after every step.
        """
        Q, p = self.fspec.Q, self.fspec.p
        i = order_rows
        j = order_cols
        delta = self.vals[i, j + 1] - self.vals[i, j]
        # (Qx)_i just before each step, accumulated along the walk
        steps = delta[:, None] * Q[:, i].T
        Qx = self.fspec.Q @ self.x0 + np.vstack([np.zeros((1, self.n)), np.cumsum(steps[:-1], axis=0)])
        gains = delta * (2.0 * Qx[np.arange(len(i)), i] + Q[i, i] * delta + p[i])
        flips = np.flatnonzero(self.nonzero[i, j] != self.nonzero[i, j + 1])
        if flips.size:
            support = mask_from_indices(np.flatnonzero(self.nonzero[:, 0]))
            before = self.g(support)
            for t in flips:
                support ^= 1 << int(i[t])
                after = self.g(support)
                gains[t] += after - before
                before = after
        return gains, self.F0 + np.cumsum(gains)

    def greedy(self, rho: np.ndarray):
        """Vertex maximizing ``<rho, w>`` plus the best grid point on its walk."""
        n, m = rho.shape
        rows = np.repeat(np.arange(n), m)
        cols = np.tile(np.arange(m), n)
        order = np.lexsort((cols, rows, -rho.ravel()))
        i, j = rows[order], cols[order]
        gains, values = self.walk(i, j)
        w = np.empty((n, m))
        w[i, j] = gains
        t = int(np.argmin(values))
        best_value = float(values[t])
        if self.F0 <= best_value:
            return w, np.zeros(n, dtype=int), self.F0
        levels = np.bincount(i[: t + 1], minlength=n)
        return w, levels, best_value


def _project_nonincreasing(v: np.ndarray) -> np.ndarray:
    return np.vstack([isotonic_regression(row, increasing=False) for row in v])


def discretized_fw_minimize(
    fspec: QuadraticSpec,
    g: SetFunction,
    grid: DiscretizationGrid,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> tuple[np.ndarray, float, list[TraceRow]]:
    """Minimize ``f(x) + g(supp(x))`` over the ``k^n`` grid by pairwise Frank-Wolfe.

    Works on the product of chains ``{0, ..., k-1}^n``.  With ``rho`` the
    ``n x (k-1)`` array of nonincreasing level weights, the regularized
    extension ``h(rho) + ||rho||^2 / 2`` has dual ``min ||Pi(-w)||^2 / 2``
    over the base polytope, where ``Pi`` projects each row onto nonincreasing
    sequences.  Frank-Wolfe vertices come from greedy walks up the lattice
    sorted by ``rho``; every walk passes through all level sets of ``rho``,
    so the best grid point seen on any walk is the rounded answer.  Stops when
    the Frank-Wolfe gap drops to ``tol`` or after ``max_iter`` iterations.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    lat = _ProductLatticeFunction(fspec, g, grid)
    start = time.perf_counter()
    n, m = lat.n, lat.k - 1
    w, best_levels, best_value = lat.greedy(np.zeros((n, m)))
    atoms = [w]
    weights = np.ones(1)
    trace = []
    for it in range(1, max_iter + 1):
        rho = _project_nonincreasing(-w)
        v, levels, value = lat.greedy(rho)
        if value < best_value:
            best_levels, best_value = levels, value
        trace.append(TraceRow(it, best_value, time.perf_counter() - start))
        fw_gap = float(np.sum(rho * (v - w)))
        if fw_gap <= tol:
            break
        scores = np.array([np.sum(rho * a) for a in atoms])
        away = int(np.argmin(scores))
        d = v - atoms[away]
        dd = float(np.sum(d * d))
        if dd == 0.0:
            break
        gamma = min(weights[away], float(np.sum(rho * d)) / dd)
        w = w + gamma * d
        for idx, atom in enumerate(atoms):
            if np.array_equal(atom, v):
                weights[idx] += gamma
                break
        else:
            atoms.append(v)
            weights = np.append(weights, gamma)
        weights[away] -= gamma
        keep = weights > 1e-12
        atoms = [a for a, k in zip(atoms, keep) if k]
        weights = weights[keep]
    x = lat.point(best_levels)
    value = fspec.value(x) + g(mask_from_indices(np.flatnonzero(x)))
    return x, value, trace


def make_grid_for(comp: CompositeFunction, k: int) -> DiscretizationGrid:
    """Unit box for nonnegative instances, ``[-1, 1]`` per coordinate in free mode."""
    lo = 0.0 if comp.fspec.sign_mode == "nonnegative" else -1.0
    return DiscretizationGrid.uniform(comp.n, k, lo, 1.0)
