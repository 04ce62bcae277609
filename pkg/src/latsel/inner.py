"""Inner convex solves ``H(A) = min { f(x) : supp(x) in A }`` for quadratic ``f``.

``f(x) = x'Qx + p'x + offset``.  In ``nonnegative`` sign mode the inner
problem also carries ``x >= 0``; in ``free`` mode the coordinates in ``A`` are
unconstrained.  :class:`CompositeFunction` exposes ``A -> g(A) + H(A)`` as a
:class:`~latsel.lattice.SetFunction` and keeps the primal witness of every
evaluated subset.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from latsel.lattice import SetFunction, check_hessian_offdiag, mask_from_indices, mask_indices

NONNEGATIVE = "nonnegative"
FREE = "free"


class IndefiniteRestrictionError(ValueError):
    """The quadratic has negative curvature on the queried coordinates."""

    def __init__(self, coordinates: list[int], eigenvalue: float):
        self.coordinates = coordinates
        self.eigenvalue = eigenvalue
        super().__init__(
            f"quadratic is indefinite on coordinates {coordinates} (eigenvalue {eigenvalue:.3g})"
        )


class InnerSolveError(RuntimeError):
    pass


@dataclass
class QuadraticSpec:
    Q: np.ndarray
    p: np.ndarray
    offset: float = 0.0
    sign_mode: str = NONNEGATIVE
    enforce_submodular: bool = True

    def __post_init__(self):
        self.Q = np.array(self.Q, dtype=float, ndmin=2)
        self.p = np.array(self.p, dtype=float, ndmin=1)
        self.offset = float(self.offset)
        n = self.p.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        if self.sign_mode not in (NONNEGATIVE, FREE):
            raise ValueError(f"unknown sign_mode {self.sign_mode!r}")
        passes = check_hessian_offdiag(self.Q)  # also rejects asymmetric Q
        if self.sign_mode == NONNEGATIVE and self.enforce_submodular and not passes:
            raise ValueError(
                "Q has positive off-diagonal entries, so f is not submodular on the orthant; "
                "pass enforce_submodular=False to build it anyway"
            )

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x + self.p @ x + self.offset)

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.Q @ np.asarray(x, dtype=float) + self.p

    def hessian(self) -> np.ndarray:
        return 2.0 * self.Q

    @classmethod
    def least_squares(cls, D, b, sign_mode: str = NONNEGATIVE, **kw) -> "QuadraticSpec":
        """``||Dx - b||^2`` in expanded form."""
        D = np.asarray(D, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(Q=D.T @ D, p=-2.0 * D.T @ b, offset=float(b @ b), sign_mode=sign_mode, **kw)


@dataclass
class InnerSolution:
    x: np.ndarray
    value: float
    active_set: int
    iterations: int = 0

    @property
    def support(self) -> int:
        return mask_from_indices(np.flatnonzero(self.x))


def _solve_block(H: np.ndarray, rhs: np.ndarray, coords: list[int]) -> np.ndarray:
    try:
        return cho_solve(cho_factor(H, lower=True, check_finite=False), rhs, check_finite=False)
    except LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(H)
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if evals[0] < -1e-10 * scale:
        vec = evecs[:, 0]
        culprits = [coords[k] for k in np.flatnonzero(np.abs(vec) > 1e-8)]
        raise IndefiniteRestrictionError(culprits, float(evals[0]))
    return np.linalg.lstsq(H, rhs, rcond=1e-12)[0]


def solve_restricted_qp(
    fspec: QuadraticSpec,
    A: int,
    tol: float = 1e-8,
    warm_start: np.ndarray | None = None,
    max_iter: int | None = None,
) -> InnerSolution:
    """Minimize ``f`` over vectors supported in ``A`` (and ``>= 0`` in nonnegative mode).

    Uses a primal active-set method: solve the equality-constrained problem on
    the current free coordinates, step back to the boundary when a coordinate
    would turn negative, and free the bound coordinate with the most negative
    gradient until none is left.  ``tol`` bounds the projected-gradient
    residual of the returned point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = fspec.n
    idx = mask_indices(A, n)
    x = np.zeros(n)
    if not idx:
        return InnerSolution(x=x, value=fspec.offset, active_set=0)
    H = 2.0 * fspec.Q[np.ix_(idx, idx)]
    c = fspec.p[idx]
    m = len(idx)

    if fspec.sign_mode == FREE:
        z = _solve_block(H, -c, idx)
        x[idx] = z
        residual = np.abs(H @ z + c).max()
        if residual > tol:
            raise InnerSolveError(f"free-mode solve residual {residual:.3g} exceeds tol {tol:.3g}")
        return InnerSolution(x=x, value=fspec.value(x), active_set=0, iterations=1)

    z = np.zeros(m)
    if warm_start is not None:
        z = np.clip(np.asarray(warm_start, dtype=float)[idx], 0.0, None)
    free = z > 0
    max_iter = max_iter or 10 * (m + 1)
    for it in range(1, max_iter + 1):
        F = np.flatnonzero(free)
        trial = np.zeros(m)
        if F.size:
            trial[F] = _solve_block(H[np.ix_(F, F)], -c[F], [idx[k] for k in F])
        if F.size and trial[F].min() <= 0.0:
            blocking = F[trial[F] <= 0.0]
            step = z[blocking] / (z[blocking] - trial[blocking])
            alpha = float(step.min()) if step.size else 0.0
            z = z + alpha * (trial - z)
            z[blocking[step <= alpha]] = 0.0
            z[np.abs(z) <= 1e-15] = 0.0
            z = np.clip(z, 0.0, None)
            free = z > 0
            continue
        z = trial
        grad = H @ z + c
        bound = ~free
        if not bound.any() or grad[bound].min() >= -tol:
            break
        candidates = np.flatnonzero(bound)
        free[candidates[np.argmin(grad[bound])]] = True
    else:
        raise InnerSolveError(f"active-set method did not settle in {max_iter} iterations on {idx}")

    grad = H @ z + c
    residual = float(np.abs(np.minimum(z, grad)).max())
    if residual > tol:
        raise InnerSolveError(f"projected-gradient residual {residual:.3g} exceeds tol {tol:.3g}")
    x[idx] = z
    clamped = mask_from_indices(idx[k] for k in np.flatnonzero(z == 0.0))
    return InnerSolution(x=x, value=fspec.value(x), active_set=clamped, iterations=it)


class CompositeFunction(SetFunction):
    """``A -> g(A) + H(A)`` with every inner solution cached by bitmask."""

    def __init__(self, fspec: QuadraticSpec, g: SetFunction, qp_tol: float = 1e-8):
        if g.n != fspec.n:
            raise ValueError(f"penalty is over {g.n} indices but f has dimension {fspec.n}")
        self.fspec = fspec
        self.g = g
        self.qp_tol = qp_tol
        self.h_memo: dict[int, InnerSolution] = {}
        self._h_lock = threading.Lock()
        self._last: np.ndarray | None = None
        super().__init__(fspec.n, self._evaluate, name=f"{g.name}+H")

    def _warm_start(self, A: int) -> np.ndarray | None:
        for i in mask_indices(A):
            hit = self.h_memo.get(A & ~(1 << i))
            if hit is not None:
                return hit.x
        return self._last

    def solve(self, A: int) -> InnerSolution:
        hit = self.h_memo.get(A)
        if hit is not None:
            return hit
        sol = solve_restricted_qp(self.fspec, A, tol=self.qp_tol, warm_start=self._warm_start(A))
        with self._h_lock:
            self.h_memo.setdefault(A, sol)
        self._last = sol.x
        return self.h_memo[A]

    def H(self, A: int) -> float:
        return self.solve(A).value

    def _evaluate(self, A: int) -> float:
        return self.g(A) + self.H(A)

    def objective(self, x) -> float:
        """Original objective ``f(x) + g(supp(x))``."""
        x = np.asarray(x, dtype=float)
        return self.fspec.value(x) + self.g(mask_from_indices(np.flatnonzero(x)))


def make_composite(fspec: QuadraticSpec, g: SetFunction, qp_tol: float = 1e-8) -> CompositeFunction:
    return CompositeFunction(fspec, g, qp_tol=qp_tol)


def eval_H(comp: CompositeFunction, A: int) -> float:
    return comp.H(A)


def recover_primal(comp: CompositeFunction, A_star: int) -> InnerSolution:
    """Primal point supported in ``A_star`` attaining ``H(A_star)``."""
    return comp.solve(A_star)
