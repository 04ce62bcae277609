"""Budget-constrained selection through a single convex regularization path.

A budget ``W(x) <= B`` is traded for a penalty ``mu * W(x)``.  For every
``mu`` the penalized problem is a submodular minimization, and all of them
are solved at once by one separable convex problem over ``u >= 0``: the
minimal minimizer for ``mu`` is the strict level set ``{u* > mu}``.

Two budget kinds are supported.

``support_knapsack``
    ``W(x) = sum of w_j over supp(x)``; the path problem is
    ``F_L(u) + 1/2 sum w_j u_j^2`` with ``F = g + H``.
``continuous_separable``
    ``W(x) = sum W_i(x_i)`` with a separable ``f = sum f_i``; the path
    problem is ``g_L(u) + sum_i int_0^{u_i} H_i(t) dt`` where
    ``H_i(t) = min_z f_i(z) + t W_i(z)``.

The convex problem is solved exactly by divide and conquer: guess that a
block of coordinates shares one value ``alpha``, solve one submodular
minimization at ``alpha`` to see which part of the block should sit higher,
and recurse on the two halves.  The returned ``u*`` therefore carries the
exact breakpoints of the path rather than an iterative approximation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from latsel.inner import CompositeFunction, InnerSolution, recover_primal
from latsel.lattice import SetFunction, full_mask, lovasz_extension, mask_from_indices, mask_hex, mask_indices, restrict
from latsel.report import write_csv
from latsel.sfm import TIE_TOL, minimize_bruteforce, minimize_submodular, tie_tolerance

log = logging.getLogger(__name__)

SUPPORT_KNAPSACK = "support_knapsack"
CONTINUOUS = "continuous_separable"
DEFAULT_Z_CAP = 10.0
DEFAULT_CONTINUOUS_EPSILON = 1e-6
SMALL_BLOCK = 10
ZERO_POINT_SEARCH_LIMIT = 1e12


@dataclass(frozen=True)
class ScalarQuadratic:
    """``z -> a z^2 + b z``; vanishes at zero by construction."""

    a: float = 0.0
    b: float = 0.0

    def __call__(self, z: float) -> float:
        return self.a * z * z + self.b * z


ScalarDescriptor = ScalarQuadratic | Callable[[float], float]


def _check_strictly_increasing(W: ScalarDescriptor, z_cap: float, i: int) -> None:
    if isinstance(W, ScalarQuadratic):
        ok = W.b >= 0 and W.b + 2.0 * W.a * z_cap >= 0 and (W.a, W.b) != (0.0, 0.0)
    else:
        zs = np.linspace(0.0, z_cap, 65)
        vals = np.array([W(z) for z in zs])
        ok = abs(vals[0]) == 0.0 and bool(np.all(np.diff(vals) > 0))
    if not ok:
        raise ValueError(f"budget function W_{i} is not strictly increasing on [0, {z_cap}] with W(0) = 0")


@dataclass
class BudgetSpec:
    kind: str
    B: float = math.inf
    w: np.ndarray | None = None
    scalar_f: list = field(default_factory=list)
    scalar_W: list = field(default_factory=list)
    z_cap: float = DEFAULT_Z_CAP

    def __post_init__(self):
        if self.kind == SUPPORT_KNAPSACK:
            if self.w is None:
                raise ValueError("a support knapsack needs item weights w")
            self.w = np.asarray(self.w, dtype=float)
            if np.any(self.w <= 0):
                raise ValueError("knapsack weights must be strictly positive")
        elif self.kind == CONTINUOUS:
            if self.z_cap <= 0:
                raise ValueError("z_cap must be positive")
            if self.scalar_W and self.scalar_f and len(self.scalar_W) != len(self.scalar_f):
                raise ValueError("need one W_i per f_i")
            for i, W in enumerate(self.scalar_W):
                _check_strictly_increasing(W, self.z_cap, i)
            for i, f in enumerate(self.scalar_f):
                if f(0.0) != 0.0:
                    raise ValueError(f"f_{i}(0) must be 0")
        else:
            raise ValueError(f"unknown budget kind {self.kind!r}")

    def W_value(self, x) -> float:
        """Budget consumed by ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind == SUPPORT_KNAPSACK:
            return float(self.w[np.flatnonzero(x)].sum())
        return float(sum(W(float(xi)) for W, xi in zip(self.scalar_W, x)))


def _scalar_argmin(f: ScalarDescriptor, W: ScalarDescriptor, mu: float, z_cap: float) -> tuple[float, float]:
    """``(value, z)`` of ``min_{0 <= z <= z_cap} f(z) + mu W(z)``; ties go to the smaller ``z``."""
    if isinstance(f, ScalarQuadratic) and isinstance(W, ScalarQuadratic):
        a = f.a + mu * W.a
        b = f.b + mu * W.b
        candidates = [0.0]
        if a > 0:
            z = -b / (2.0 * a)
            if 0.0 < z < z_cap:
                candidates.append(z)
        candidates.append(z_cap)
        obj = lambda z: a * z * z + b * z  # noqa: E731
    else:
        obj = lambda z: f(z) + mu * W(z)  # noqa: E731
        res = minimize_scalar(obj, bounds=(0.0, z_cap), method="bounded", options={"xatol": 1e-12})
        candidates = [0.0, float(res.x), z_cap]
    best_z, best_v = 0.0, 0.0
    for z in candidates:
        v = obj(z)
        if v < best_v:
            best_z, best_v = z, v
    return best_v, best_z


def scalar_H(f_i: ScalarDescriptor, W_i: ScalarDescriptor, mu: float, z_cap: float = DEFAULT_Z_CAP) -> float:
    """``H_i(mu) = min over z in [0, z_cap] of f_i(z) + mu W_i(z)``.  Never positive."""
    if z_cap <= 0:
        raise ValueError("z_cap must be positive")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    return _scalar_argmin(f_i, W_i, mu, z_cap)[0]


@dataclass
class ScalarProfile:
    """``H_i`` as a function of the multiplier, with its first zero ``c``.

    ``values`` also accepts negative multipliers; the cap keeps those finite,
    which the path solver needs when it looks for a block value below zero.
    """

    values: Callable[[float], float]
    zero_point: float
    argmin: Callable[[float], float] = field(repr=False, default=None)


def _zero_point(f, W, z_cap: float, H: Callable[[float], float]) -> float:
    if H(0.0) == 0.0:
        return 0.0
    if isinstance(f, ScalarQuadratic) and isinstance(W, ScalarQuadratic):
        # H(mu) = 0 exactly when a z^2 + b z >= 0 on [0, z_cap], i.e. b >= 0 and a z_cap + b >= 0.
        bounds = []
        for alpha, beta in ((f.b, W.b), (f.a * z_cap + f.b, W.a * z_cap + W.b)):
            if alpha >= 0:
                bounds.append(0.0)
            elif beta > 0:
                bounds.append(-alpha / beta)
            else:
                return math.inf
        c = max(bounds)
        # guard against a rounding hair on the wrong side of the boundary
        while H(c) != 0.0:
            c = np.nextafter(c, math.inf)
        return float(c)
    hi = 1.0
    while H(hi) != 0.0:
        hi *= 2.0
        if hi > ZERO_POINT_SEARCH_LIMIT:
            return math.inf
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if H(mid) == 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def scalar_profile(f_i: ScalarDescriptor, W_i: ScalarDescriptor, z_cap: float = DEFAULT_Z_CAP) -> ScalarProfile:
    if z_cap <= 0:
        raise ValueError("z_cap must be positive")
    H = lambda mu: _scalar_argmin(f_i, W_i, mu, z_cap)[0]  # noqa: E731
    arg = lambda mu: _scalar_argmin(f_i, W_i, mu, z_cap)[1]  # noqa: E731
    return ScalarProfile(values=H, zero_point=_zero_point(f_i, W_i, z_cap, H), argmin=arg)


@dataclass
class ThresholdChain:
    u_star: np.ndarray
    epsilon: float = 0.0
    certificate: float = 0.0
    converged: bool = True
    kind: str = SUPPORT_KNAPSACK
    subproblems: int = 0

    @property
    def n(self) -> int:
        return len(self.u_star)

    def breakpoints(self) -> list[float]:
        """Multipliers at which the path changes, plus the floor: one per distinct set."""
        vals = {self.epsilon}
        vals.update(float(v) for v in self.u_star if np.isfinite(v) and v >= self.epsilon)
        return sorted(vals)


def threshold_chain(chain: ThresholdChain, mu: float) -> int:
    """``{i : u*_i > mu}``, the minimal minimizer of the ``mu``-penalized problem."""
    if mu < chain.epsilon:
        raise ValueError(f"mu = {mu} is below the path floor epsilon = {chain.epsilon}")
    return mask_from_indices(np.flatnonzero(chain.u_star > mu))


@dataclass
class _PathProblem:
    """What the divide-and-conquer solver needs: the set function and the penalty derivatives."""

    F: SetFunction
    psi: Callable[[int, float], float]              # psi(i, t): derivative of the separable term
    block_value: Callable[[list[int], float], float | None]  # root of sum_i psi(i, t) = -total
    ceiling: np.ndarray                             # per-coordinate upper clamp


def _decompose(prob: _PathProblem, start_upper: int, sfm_tol: float, sfm_max_iter: int):
    F = prob.F
    n = F.n
    u = np.zeros(n)
    gap = 0.0
    converged = True
    calls = 0
    stack = [(0, start_upper)]
    while stack:
        lo, up = stack.pop()
        idx = mask_indices(up & ~lo)
        if not idx:
            continue
        base = F(lo)
        top = F(up)
        alpha = prob.block_value(idx, top - base)
        if alpha is None:
            u[idx] = prob.ceiling[idx]
            continue
        reduced, free = restrict(F, lo, up)
        shifts = [prob.psi(i, alpha) for i in free]
        shifted = SetFunction(
            len(free),
            lambda m: reduced(m) - base + sum(shifts[k] for k in mask_indices(m)),
            name="path-block",
        )
        if len(free) <= SMALL_BLOCK:
            res = minimize_bruteforce(shifted)
        else:
            res = minimize_submodular(shifted, tol=sfm_tol, max_iter=sfm_max_iter)
            gap = max(gap, res.gap_certificate)
            converged &= res.converged
        calls += 1
        scale = max(abs(base), abs(top), 1.0)
        if res.value >= -TIE_TOL * scale or res.minimizer == full_mask(len(free)):
            u[idx] = alpha
            continue
        top_part = lo | mask_from_indices(free[k] for k in mask_indices(res.minimizer))
        stack.append((lo, top_part))
        stack.append((top_part, up))
    return u, gap, converged, calls


def _knapsack_problem(F: SetFunction, w: np.ndarray) -> _PathProblem:
    if len(w) != F.n:
        raise ValueError(f"{len(w)} knapsack weights for a ground set of size {F.n}")

    def block_value(idx, total):
        return -total / float(w[idx].sum())

    return _PathProblem(F=F, psi=lambda i, t: w[i] * t, block_value=block_value, ceiling=np.full(F.n, np.inf))


def _continuous_problem(g: SetFunction, profiles: list[ScalarProfile]) -> _PathProblem:
    c = np.array([p.zero_point for p in profiles])

    def total_H(idx, t):
        return sum(profiles[i].values(t) for i in idx)

    def block_value(idx, total):
        if total <= tie_tolerance(0.0):
            # g is flat on this block, so every coordinate runs up to its own zero point
            return None
        hi = float(max(c[idx]))
        if not np.isfinite(hi):
            hi = 1.0
            while total_H(idx, hi) + total < 0:
                hi *= 2.0
        lo = -1.0
        while total_H(idx, lo) + total > 0:
            lo *= 2.0
            if lo < -ZERO_POINT_SEARCH_LIMIT:
                raise RuntimeError("could not bracket the block value; is z_cap positive?")
        return brentq(lambda t: total_H(idx, t) + total, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    return _PathProblem(F=g, psi=lambda i, t: profiles[i].values(t), block_value=block_value, ceiling=c)


def _separable_parts(problem, budget: BudgetSpec) -> tuple[SetFunction, list, list]:
    """Penalty and scalar pieces for a continuous budget; derives ``f_i`` from a diagonal quadratic."""
    if isinstance(problem, CompositeFunction):
        Q = problem.fspec.Q
        if np.count_nonzero(Q - np.diag(np.diag(Q))):
            raise ValueError("continuous budgets need a separable f; this quadratic couples coordinates")
        fs = budget.scalar_f or [ScalarQuadratic(float(Q[i, i]), float(problem.fspec.p[i])) for i in range(problem.n)]
        g = problem.g
    else:
        fs, g = budget.scalar_f, problem
    if len(fs) != g.n or len(budget.scalar_W) != g.n:
        raise ValueError(f"need {g.n} scalar f_i and W_i, got {len(fs)} and {len(budget.scalar_W)}")
    return g, fs, budget.scalar_W


def solve_regularization_path(
    problem: SetFunction,
    budget: BudgetSpec,
    epsilon: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> ThresholdChain:
    """Solve the path problem exactly and return ``u*`` as a :class:`ThresholdChain`.

    ``problem`` is the composite ``g + H`` (or any submodular set function)
    for a knapsack budget.  For a continuous budget it is the penalty ``g``
    with the ``f_i`` supplied in ``budget``, or a composite whose quadratic
    is diagonal.  ``tol`` and ``max_iter`` govern the submodular minimizations
    on blocks too large for enumeration.
    """
    if budget.kind == SUPPORT_KNAPSACK:
        eps = 0.0 if epsilon is None else float(epsilon)
        prob = _knapsack_problem(problem, budget.w)
        start = full_mask(problem.n)
    else:
        eps = DEFAULT_CONTINUOUS_EPSILON if epsilon is None else float(epsilon)
        g, fs, Ws = _separable_parts(problem, budget)
        profiles = [scalar_profile(f, W, budget.z_cap) for f, W in zip(fs, Ws)]
        prob = _continuous_problem(g, profiles)
        # coordinates whose profile is identically zero never pay off under a monotone g
        start = mask_from_indices(i for i, p in enumerate(profiles) if p.zero_point > 0)
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")
    u, gap, converged, calls = _decompose(prob, start, tol, max_iter)
    u = np.minimum(np.maximum(u, 0.0), prob.ceiling)
    if not converged:
        log.warning("path solve left a submodular subproblem unconverged (gap %.3g)", gap)
    return ThresholdChain(u_star=u, epsilon=eps, certificate=gap, converged=converged, kind=budget.kind,
                          subproblems=calls)


def path_objective(chain_or_u, problem: SetFunction, budget: BudgetSpec) -> float:
    """Value of the convex path problem at ``u`` (a chain or a plain vector, ``u >= 0``)."""
    u = np.asarray(getattr(chain_or_u, "u_star", chain_or_u), dtype=float)
    if np.any(u < 0):
        raise ValueError("the path problem lives on u >= 0")
    if budget.kind == SUPPORT_KNAPSACK:
        return lovasz_extension(problem, u) + 0.5 * float(budget.w @ (u * u))
    g, fs, Ws = _separable_parts(problem, budget)
    total = lovasz_extension(g, u)
    for i, (f, W) in enumerate(zip(fs, Ws)):
        if u[i] > 0:
            H = lambda t, f=f, W=W: _scalar_argmin(f, W, t, budget.z_cap)[0]  # noqa: E731
            total += quad(H, 0.0, float(u[i]), limit=200)[0]
    return total


@dataclass
class PathRow:
    mu: float
    subset: int
    W_value: float
    objective: float
    x: np.ndarray = field(repr=False, default=None)
    f_value: float = 0.0


class BudgetInfeasibleError(ValueError):
    """No multiplier on the grid meets the budget; ``candidate`` violates it least."""

    def __init__(self, candidate: PathRow, B: float):
        self.candidate = candidate
        super().__init__(
            f"no grid point meets the budget {B}; least violation at mu={candidate.mu} "
            f"with W={candidate.W_value} on {mask_hex(candidate.subset)}"
        )


def _primal_at(chain: ThresholdChain, problem, budget: BudgetSpec, mu: float) -> tuple[int, np.ndarray, float, float]:
    A = threshold_chain(chain, mu)
    if budget.kind == SUPPORT_KNAPSACK:
        if not isinstance(problem, CompositeFunction):
            raise TypeError("knapsack selection needs the composite g + H to recover x")
        sol = recover_primal(problem, A)
        return A, sol.x, sol.value, problem.objective(sol.x)
    g, fs, Ws = _separable_parts(problem, budget)
    x = np.zeros(g.n)
    for i in mask_indices(A):
        x[i] = _scalar_argmin(fs[i], Ws[i], mu, budget.z_cap)[1]
    value = sum(f(float(xi)) for f, xi in zip(fs, x))
    return A, x, value, value + g(mask_from_indices(np.flatnonzero(x)))


def path_table(chain: ThresholdChain, problem, budget: BudgetSpec, grid: Sequence[float] | None = None) -> list[PathRow]:
    """One row per multiplier: the path set, its primal point, budget use and objective.

    Without a grid the chain's own breakpoints are used, which visits every
    distinct set on the path exactly once.
    """
    mus = chain.breakpoints() if grid is None else [float(m) for m in grid]
    if not mus:
        raise ValueError("the multiplier grid is empty")
    rows = []
    for mu in mus:
        A, x, fval, obj = _primal_at(chain, problem, budget, mu)
        rows.append(PathRow(mu=mu, subset=A, W_value=budget.W_value(x), objective=obj, x=x, f_value=fval))
    return rows


def select_under_budget(
    chain: ThresholdChain,
    problem,
    budget: BudgetSpec,
    grid: Sequence[float] | None = None,
) -> tuple[int, InnerSolution]:
    """Best budget-feasible point on the path.

    Among grid multipliers whose recovered ``x`` satisfies ``W(x) <= B``,
    returns the path set with the lowest original objective; ties go to the
    larger multiplier.
    """
    rows = path_table(chain, problem, budget, grid)
    slack = 1e-12 * max(1.0, abs(budget.B)) if math.isfinite(budget.B) else 0.0
    feasible = [r for r in rows if r.W_value <= budget.B + slack]
    if not feasible:
        raise BudgetInfeasibleError(min(rows, key=lambda r: (r.W_value - budget.B, -r.mu)), budget.B)
    best = feasible[0]
    for r in feasible[1:]:
        tol = tie_tolerance(best.objective)
        if r.objective < best.objective - tol or (abs(r.objective - best.objective) <= tol and r.mu > best.mu):
            best = r
    sol = InnerSolution(x=best.x, value=best.f_value, active_set=best.subset & ~mask_from_indices(np.flatnonzero(best.x)))
    return best.subset, sol


PATH_HEADER = ("mu", "subset", "W_value", "objective")


def write_path_csv(path, rows: Sequence[PathRow]) -> None:
    write_csv(path, PATH_HEADER, ((r.mu, mask_hex(r.subset), r.W_value, r.objective) for r in rows))
