"""Robust min-max (or max-min) selection with a support-penalized adversary.

The adversary picks a sub-probability vector ``p`` over ``K`` domains and is
charged ``g(supp(p))``::

    Q(x) = max over p >= 0, sum(p) <= 1 of  sum_i p_i f_i(x) - g(supp(p))

and the learner minimizes ``Q`` over a box or ball.  For the opposite
orientation (learner maximizes a concave ``Q(x) = min_p sum p_i f_i(x) +
g(supp(p))``) every sign is flipped and the same machinery is reused.

Because the inner objective is linear in ``p`` and ``g`` is monotone, the
adversary never gains from spreading mass: on any support ``A`` the best it
can do is put all its mass on the worst domain of ``A`` (or none at all), and
shrinking ``A`` to that domain only lowers the charge.  Hence::

    Q(x) = max( -g(empty), max_i f_i(x) - g({i}) )

which is what :func:`eval_Q` computes by default.  Enumeration over all
supports and the Lagrangian path of :mod:`latsel.constrained` are available
as cross-checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from latsel.constrained import CONTINUOUS, BudgetSpec, ScalarQuadratic, select_under_budget, solve_regularization_path
from latsel.lattice import SetFunction, mask_hex, mask_indices
from latsel.models import penalty_from_descriptor, weighted_cardinality_g
from latsel.report import write_csv

MIN_OUTER = "min_outer_max_inner"
MAX_OUTER = "max_outer_min_inner"
ENUMERATION_CAP = 20
FEASIBILITY_TOL = 1e-12


@dataclass
class QuadraticLoss:
    """``(x - c)' A (x - c) + offset``; convex when ``A`` is PSD, concave when NSD."""

    A: np.ndarray
    c: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.A = np.array(self.A, dtype=float, ndmin=2)
        if self.A.shape != (len(self.c), len(self.c)):
            raise ValueError("A must be square with the dimension of c")
        if not np.allclose(self.A, self.A.T):
            raise ValueError("A must be symmetric")

    def value(self, x) -> float:
        r = np.asarray(x, dtype=float) - self.c
        return float(r @ self.A @ r + self.offset)

    def grad(self, x) -> np.ndarray:
        return 2.0 * self.A @ (np.asarray(x, dtype=float) - self.c)


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("need lo <= hi elementwise")

    def project(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == self.lo.shape and bool(
            np.all(x >= self.lo - FEASIBILITY_TOL) and np.all(x <= self.hi + FEASIBILITY_TOL)
        )

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


@dataclass
class Ball:
    center_point: np.ndarray
    radius: float

    def __post_init__(self):
        self.center_point = np.atleast_1d(np.asarray(self.center_point, dtype=float))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def project(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.center_point
        r = np.linalg.norm(d)
        return self.center_point + d * (self.radius / r) if r > self.radius else np.asarray(x, dtype=float)

    def contains(self, x) -> bool:
        d = np.asarray(x, dtype=float) - self.center_point
        return d.shape == self.center_point.shape and np.linalg.norm(d) <= self.radius * (1 + FEASIBILITY_TOL)

    def center(self) -> np.ndarray:
        return self.center_point.copy()


@dataclass
class SaddleSpec:
    domain_losses: list
    g: SetFunction
    x_feasible: Box | Ball
    orientation: str = MIN_OUTER
    z_cap: float = 1.0

    def __post_init__(self):
        if self.orientation not in (MIN_OUTER, MAX_OUTER):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.g.n != self.K:
            raise ValueError(f"penalty is over {self.g.n} domains, got {self.K} losses")

    @property
    def K(self) -> int:
        return len(self.domain_losses)

    @property
    def sign(self) -> float:
        """+1 when the outer player minimizes, -1 when it maximizes."""
        return 1.0 if self.orientation == MIN_OUTER else -1.0

    def to_dict(self) -> dict:
        feas = self.x_feasible
        return {
            "orientation": self.orientation,
            "losses": [{"A": L.A.tolist(), "c": L.c.tolist(), "offset": L.offset} for L in self.domain_losses],
            "penalty": self.g.descriptor,
            "feasible": {"lo": feas.lo.tolist(), "hi": feas.hi.tolist()} if isinstance(feas, Box)
            else {"center": feas.center_point.tolist(), "radius": feas.radius},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SaddleSpec":
        feas = d["feasible"]
        region = Box(feas["lo"], feas["hi"]) if "lo" in feas else Ball(feas["center"], feas["radius"])
        losses = [QuadraticLoss(L["A"], L["c"], L["offset"]) for L in d["losses"]]
        return cls(losses, penalty_from_descriptor(d["penalty"]), region, d["orientation"])


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{p >= 0, sum(p) <= 1}``."""
    v = np.asarray(v, dtype=float)
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= 1.0:
        return clipped
    # the sum constraint is active: project onto the probability simplex
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / ks > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


@dataclass
class InnerResult:
    value: float
    subgrad: np.ndarray
    p_star: np.ndarray
    A_star: int


def _losses_at(spec: SaddleSpec, x0) -> np.ndarray:
    # adversary payoffs in the min-outer convention
    return spec.sign * np.array([L.value(x0) for L in spec.domain_losses])


def _reduction(spec: SaddleSpec, a: np.ndarray) -> tuple[float, int | None]:
    best_value, best_i = -spec.g(0), None
    for i in range(spec.K):
        v = a[i] - spec.g(1 << i)
        if v > best_value:
            best_value, best_i = v, i
    return best_value, best_i


def _enumerate(spec: SaddleSpec, a: np.ndarray) -> tuple[float, int | None]:
    if spec.K > ENUMERATION_CAP:
        raise ValueError(f"support enumeration refused for K={spec.K} > {ENUMERATION_CAP}")
    best_value, best_i = -spec.g(0), None
    for mask in range(1, 1 << spec.K):
        idx = mask_indices(mask)
        j = idx[int(np.argmax(a[idx]))]
        # the face maximum of a linear function: all mass on the best domain, or none
        v = max(a[j], 0.0) - spec.g(mask)
        if v > best_value:
            best_value, best_i = v, (j if a[j] > 0 else None)
    return best_value, best_i


def _lagrange_path(spec: SaddleSpec, a: np.ndarray) -> tuple[float, int | None]:
    # min over p of sum(-a_i p_i) + g(supp p) with sum(p) <= 1, as a continuous budget on [0, 1]
    budget = BudgetSpec(
        CONTINUOUS,
        B=1.0,
        scalar_f=[ScalarQuadratic(0.0, -float(ai)) for ai in a],
        scalar_W=[ScalarQuadratic(0.0, 1.0)] * spec.K,
        z_cap=spec.z_cap,
    )
    chain = solve_regularization_path(spec.g, budget, epsilon=0.0)
    _, sol = select_under_budget(chain, spec.g, budget)
    support = np.flatnonzero(sol.x)
    if len(support) > 1:
        raise RuntimeError(f"the path selected a multi-domain support {support.tolist()}")
    value = float(a @ sol.x) - spec.g(int(sum(1 << int(i) for i in support)))
    return value, (int(support[0]) if len(support) else None)


INNER_METHODS = {"reduction": _reduction, "enumerate": _enumerate, "path": _lagrange_path}


def eval_Q(spec: SaddleSpec, x0, method: str = "reduction") -> InnerResult:
    """Exact inner solve at ``x0``: value of ``Q``, a subgradient, and the adversary's ``p*``.

    ``method`` is ``"reduction"`` (closed form, any ``K``), ``"enumerate"``
    (all ``2^K`` supports, ``K <= 20``) or ``"path"`` (Lagrangian path of the
    budgeted inner problem).  Ties go to the empty support, then to the
    lowest domain index.
    """
    x0 = np.asarray(x0, dtype=float)
    if not spec.x_feasible.contains(x0):
        raise ValueError(f"x0 = {x0.tolist()} is outside the feasible set")
    try:
        solver = INNER_METHODS[method]
    except KeyError:
        raise ValueError(f"unknown inner method {method!r}; expected one of {sorted(INNER_METHODS)}") from None
    a = _losses_at(spec, x0)
    value, i = solver(spec, a)
    p = np.zeros(spec.K)
    subgrad = np.zeros_like(x0)
    A = 0
    if i is not None:
        p[i] = 1.0
        A = 1 << i
        subgrad = spec.domain_losses[i].grad(x0)
    return InnerResult(value=spec.sign * value, subgrad=subgrad, p_star=p, A_star=A)


@dataclass
class RobustTrace:
    iterates: list = field(repr=False)   # (x, Q value, inner support)
    averaged_x: np.ndarray
    T: int
    best_so_far: list = field(repr=False, default_factory=list)

    @property
    def best_index(self) -> int:
        """First recorded iterate attaining the best value."""
        return next(t for t, (_, q, _) in enumerate(self.iterates) if q == self.best_so_far[-1])

    @property
    def best_value(self) -> float:
        return self.best_so_far[-1]


def robust_solve(spec: SaddleSpec, T: int, start=None, method: str = "reduction") -> RobustTrace:
    """``T`` projected subgradient steps of length ``1/sqrt(T)`` from the feasible set's center.

    Descends ``Q`` when the outer player minimizes and ascends it otherwise.
    Row ``t`` of the trace holds the point at which the ``t``-th subgradient
    was taken, so ``T = 1`` records only the start.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    x = spec.x_feasible.center() if start is None else spec.x_feasible.project(start)
    eta = 1.0 / math.sqrt(T)
    iterates, best = [], []
    total = np.zeros_like(x)
    for _ in range(T):
        res = eval_Q(spec, x, method=method)
        iterates.append((x.copy(), res.value, res.A_star))
        total += x
        if not best:
            best.append(res.value)
        else:
            pick = min if spec.sign > 0 else max
            best.append(pick(best[-1], res.value))
        x = spec.x_feasible.project(x - spec.sign * eta * res.subgrad)
    return RobustTrace(iterates=iterates, averaged_x=total / T, T=T, best_so_far=best)


def gen_multidomain(K: int, seed: int, dim: int = 2, penalty_scale: float = 0.1) -> SaddleSpec:
    """``K`` random quadratic domain losses on ``[-1, 1]^dim`` and a weighted-cardinality ``g``.

    Loss ``i`` is ``a_i ||x - c_i||^2 + o_i`` with ``a_i ~ U(0.5, 2)``,
    ``c_i ~ U(-1, 1)^dim`` and ``o_i ~ U(0.2, 0.5)``.  The domain weights of
    ``g`` are ``U(0, penalty_scale)``; since every offset exceeds every
    weight, the robust value is positive.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 2.0, size=K)
    c = rng.uniform(-1.0, 1.0, size=(K, dim))
    o = rng.uniform(0.2, 0.5, size=K)
    w = rng.uniform(0.0, penalty_scale, size=K) if penalty_scale > 0 else np.zeros(K)
    losses = [QuadraticLoss(a[i] * np.eye(dim), c[i], float(o[i])) for i in range(K)]
    return SaddleSpec(losses, weighted_cardinality_g(w), Box(-np.ones(dim), np.ones(dim)))


ROBUST_HEADER = ("iteration", "Q_value", "support")


def write_robust_trace_csv(path, trace: RobustTrace) -> None:
    write_csv(path, ROBUST_HEADER, ((t + 1, q, mask_hex(A)) for t, (_, q, A) in enumerate(trace.iterates)))
