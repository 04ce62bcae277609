"""Shared fixtures and independent oracles.

The oracles deliberately avoid the library's own solvers: inner problems go
through ``scipy.optimize.nnls`` or plain projected gradient, set minimization
through explicit enumeration.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import nnls

from latsel import QuadraticSpec, make_composite
from latsel.lattice import SetFunction, mask_indices, popcount
from latsel.models import cardinality_g

PENALTY_KINDS = ("cardinality", "range", "interval")


@pytest.fixture
def b12_composite():
    """``sum (x_i - b_i)^2`` with ``b = (1, 2)`` and ``g = |A|``."""
    fspec = QuadraticSpec.least_squares(np.eye(2), [1.0, 2.0])
    return make_composite(fspec, cardinality_g(2, 1.0))


def nnls_H(D: np.ndarray, b: np.ndarray, mask: int) -> tuple[float, np.ndarray]:
    """``min ||D x - b||^2`` over ``x >= 0`` supported in ``mask``, by scipy's NNLS."""
    n = D.shape[1]
    idx = mask_indices(mask)
    x = np.zeros(n)
    if idx:
        x[idx], _ = nnls(D[:, idx], b)
    r = D @ x - b
    return float(r @ r), x


def enumerate_objective(D, b, g: SetFunction) -> tuple[float, int]:
    """Exhaustive ``min over A of g(A) + H(A)``, every ``H(A)`` solved by NNLS on the columns in ``A``."""
    best = (np.inf, 0)
    for mask in range(1 << D.shape[1]):
        value = g(mask) + nnls_H(D, b, mask)[0]
        if value < best[0]:
            best = (value, mask)
    return best


def projected_gradient_qp(Q, p, mask: int, iters: int = 200_000) -> np.ndarray:
    """Plain projected gradient with step ``1/L`` on ``x'Qx + p'x`` over the nonnegative face ``mask``."""
    Q = np.asarray(Q, dtype=float)
    p = np.asarray(p, dtype=float)
    n = len(p)
    free = np.zeros(n, dtype=bool)
    free[mask_indices(mask)] = True
    L = 2.0 * np.linalg.eigvalsh(Q).max()
    x = np.zeros(n)
    for _ in range(iters):
        x_new = np.where(free, np.maximum(x - (2.0 * Q @ x + p) / L, 0.0), 0.0)
        if np.max(np.abs(x_new - x)) < 1e-15:
            break
        x = x_new
    return x


def level_set_lovasz(F: SetFunction, u) -> float:
    """``F(empty) + integral over theta of F({u >= theta}) - F(empty)``, summed over the breakpoint intervals.

    Handles negative entries through ``F({u >= theta}) - F(ground)`` below zero.
    """
    u = np.asarray(u, dtype=float)
    n = len(u)
    full = (1 << n) - 1
    levels = np.unique(np.concatenate([u, [0.0]]))
    total = F(0)
    for lo, hi in zip(levels[:-1], levels[1:]):
        mid = 0.5 * (lo + hi)
        mask = int(sum(1 << i for i in range(n) if u[i] >= mid))
        if mid > 0:
            total += (hi - lo) * (F(mask) - F(0))
        else:
            total -= (hi - lo) * (F(full) - F(mask))
    return total


def minimal_minimizer_by_enumeration(values: np.ndarray, tol: float = 1e-9) -> int:
    low = values.min()
    cands = [m for m in range(len(values)) if values[m] <= low + tol * max(1.0, abs(low))]
    return min(cands, key=lambda m: (popcount(m), m))


def random_submodular(n: int, seed: int) -> SetFunction:
    """Graph cut plus a concave function of a positive modular weight plus a signed modular term.

    Each piece is submodular by construction, so no library check is involved.
    """
    rng = np.random.default_rng(seed)
    W = np.triu(rng.uniform(0.0, 1.0, (n, n)) * (rng.random((n, n)) < 0.5), 1)
    W = W + W.T
    a = rng.uniform(0.0, 1.0, n)
    c = rng.normal(0.0, 1.0, n)
    scale = rng.uniform(0.5, 3.0)

    def evaluate(mask: int) -> float:
        x = np.array([(mask >> i) & 1 for i in range(n)], dtype=float)
        cut = float(x @ W @ (1.0 - x))
        return cut + scale * np.sqrt(a @ x) + c @ x

    return SetFunction(n, evaluate, name="random_submodular")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
