"""Set functions over a finite ground set, the Lovász extension, and brute-force verifiers.

Subsets are ``int`` bitmasks over ``{0, ..., n-1}``.  A :class:`SetFunction`
wraps an evaluator ``mask -> float`` with a memo so that solvers can query the
same subset repeatedly at no cost.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

BRUTE_FORCE_CAP = 12
STRUCTURE_TOL = 1e-8


def mask_from_indices(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def mask_indices(mask: int, n: int | None = None) -> list[int]:
    """Indices of the set bits of ``mask`` in ascending order."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    if n is not None and out and out[-1] >= n:
        raise ValueError(f"subset {out} has an index outside the ground set of size {n}")
    return out


def full_mask(n: int) -> int:
    return (1 << n) - 1


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def indicator(mask: int, n: int) -> np.ndarray:
    u = np.zeros(n)
    u[mask_indices(mask)] = 1.0
    return u


def mask_hex(mask: int) -> str:
    return f"0x{mask:x}"


class SetFunction:
    """A memoizing set function on the subsets of ``{0, ..., n-1}``.

    ``evaluator`` receives a bitmask and returns a float.  Values are cached
    forever; concurrent readers are fine, insertions go through a lock and are
    idempotent since the evaluator is deterministic.

    ``descriptor`` is an optional JSON-friendly description used to serialize
    the named penalty families.
    """

    def __init__(
        self,
        n: int,
        evaluator: Callable[[int], float],
        name: str = "",
        descriptor: dict | None = None,
    ):
        if n < 0:
            raise ValueError("ground-set size must be nonnegative")
        self.n = int(n)
        self._evaluator = evaluator
        self.name = name
        self.descriptor = descriptor
        self._memo: dict[int, float] = {}
        self._lock = threading.Lock()
        self.evaluations = 0

    def __call__(self, mask: int) -> float:
        try:
            return self._memo[mask]
        except KeyError:
            pass
        if mask >> self.n:
            raise ValueError(f"subset {mask_hex(mask)} not in a ground set of size {self.n}")
        value = float(self._evaluator(mask))
        if not np.isfinite(value):
            raise FloatingPointError(f"{self.name or 'set function'} is not finite at {mask_hex(mask)}")
        with self._lock:
            if mask not in self._memo:
                self._memo[mask] = value
                self.evaluations += 1
        return self._memo[mask]

    def of(self, indices: Iterable[int]) -> float:
        """Evaluate at a subset given as an iterable of indices."""
        return self(mask_from_indices(indices))

    def all_values(self) -> np.ndarray:
        """Values at every subset, indexed by bitmask (``2**n`` entries)."""
        return np.array([self(m) for m in range(1 << self.n)])

    def __repr__(self) -> str:
        label = self.name or "SetFunction"
        return f"<{label} n={self.n} cached={len(self._memo)}>"


def modular_function(weights: Sequence[float], offset: float = 0.0, name: str = "modular") -> SetFunction:
    w = np.asarray(weights, dtype=float)

    def evaluate(mask: int) -> float:
        return offset + float(sum(w[i] for i in mask_indices(mask)))

    return SetFunction(len(w), evaluate, name=name, descriptor={"kind": "modular", "weights": w.tolist()})


def restrict(F: SetFunction, lower: int, upper: int) -> tuple[SetFunction, list[int]]:
    """The function ``B -> F(lower | B)`` on subsets ``B`` of ``upper \\ lower``.

    Returns the reduced function and the original indices of its ground set.
    """
    free = mask_indices(upper & ~lower)

    def evaluate(mask: int) -> float:
        full = lower
        for k in mask_indices(mask):
            full |= 1 << free[k]
        return F(full)

    return SetFunction(len(free), evaluate, name=f"{F.name}|reduced"), free


@dataclass
class BaseVertex:
    """Greedy vertex of the base polytope of ``F - F(empty)`` for one ordering.

    ``prefix_values[k]`` is ``F`` at the first ``k`` elements of ``ordering``.
    """

    weights: np.ndarray
    ordering: np.ndarray
    prefix_values: np.ndarray = field(repr=False)

    @property
    def best_prefix(self) -> int:
        return int(np.argmin(self.prefix_values))


def _check_ordering(ordering, n: int) -> np.ndarray:
    order = np.asarray(ordering, dtype=int)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError(f"ordering {list(order)} is not a permutation of range({n})")
    return order


def greedy_base_vertex(F: SetFunction, ordering: Sequence[int]) -> BaseVertex:
    """Marginal gains of ``F`` along ``ordering``: ``w[o_k] = F(S_k) - F(S_{k-1})``."""
    n = F.n
    order = _check_ordering(ordering, n)
    prefix = np.empty(n + 1)
    weights = np.empty(n)
    mask = 0
    prefix[0] = F(0)
    for k, i in enumerate(order):
        mask |= 1 << int(i)
        prefix[k + 1] = F(mask)
        weights[i] = prefix[k + 1] - prefix[k]
    return BaseVertex(weights=weights, ordering=order, prefix_values=prefix)


def descending_order(u: np.ndarray) -> np.ndarray:
    # stable sort keeps ties in ascending index order
    return np.argsort(-np.asarray(u, dtype=float), kind="stable")


def lovasz_extension(F: SetFunction, u: Sequence[float]) -> float:
    """Lovász extension of ``F`` at ``u``, including the ``F(empty)`` offset."""
    u = np.asarray(u, dtype=float)
    if u.shape != (F.n,):
        raise ValueError(f"expected a vector of length {F.n}, got shape {u.shape}")
    vertex = greedy_base_vertex(F, descending_order(u))
    return float(vertex.prefix_values[0] + vertex.weights @ u)


def check_submodular_bruteforce(F: SetFunction, tol: float = STRUCTURE_TOL, cap: int = BRUTE_FORCE_CAP) -> bool:
    """True iff ``F(A) + F(B) >= F(A | B) + F(A & B) - tol`` for every pair of subsets."""
    if F.n > cap:
        raise ValueError(f"brute-force submodularity check refused for n={F.n} > cap {cap} (4^n pairs)")
    values = F.all_values()
    masks = np.arange(1 << F.n)
    chunk = max(1, (1 << 22) >> F.n)
    for start in range(0, len(masks), chunk):
        a = masks[start : start + chunk, None]
        lhs = values[a] + values[None, :]
        rhs = values[a | masks[None, :]] + values[a & masks[None, :]]
        if np.any(lhs < rhs - tol):
            return False
    return True


def check_monotone_bruteforce(F: SetFunction, tol: float = STRUCTURE_TOL, cap: int = BRUTE_FORCE_CAP) -> bool:
    """True iff ``A <= B`` implies ``F(A) <= F(B) + tol``.

    Checking every single-element extension is enough: any chain ``A <= B`` is
    a sequence of such steps.
    """
    if F.n > cap:
        raise ValueError(f"brute-force monotonicity check refused for n={F.n} > cap {cap}")
    values = F.all_values()
    masks = np.arange(1 << F.n)
    for i in range(F.n):
        without = masks[((masks >> i) & 1) == 0]
        if np.any(values[without] > values[without | (1 << i)] + tol):
            return False
    return True


def check_hessian_offdiag(Q, tol: float = 0.0) -> bool:
    """Second-order submodularity test for a quadratic: all off-diagonal entries are <= tol."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    off = Q - np.diag(np.diag(Q))
    return bool(np.all(off <= tol))
