"""Problem instances: random submodular least squares, the structured penalties,
signal denoising, and the sign-split lifting of ordinary least squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from latsel.inner import FREE, QuadraticSpec
from latsel.lattice import SetFunction, check_hessian_offdiag, mask_indices, popcount

MAX_CHOLESKY_ATTEMPTS = 100


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"penalty strength must be nonnegative, got {lam}")
    return lam


def cardinality_g(n: int, lam: float = 1.0) -> SetFunction:
    lam = _check_lambda(lam)
    return SetFunction(n, lambda m: lam * popcount(m), name="cardinality",
                       descriptor={"kind": "cardinality", "n": n, "lambda": lam})


def weighted_cardinality_g(weights) -> SetFunction:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return SetFunction(len(w), lambda m: float(sum(w[i] for i in mask_indices(m))),
                       name="weighted_cardinality",
                       descriptor={"kind": "weighted_cardinality", "weights": w.tolist()})


def zero_g(n: int) -> SetFunction:
    return SetFunction(n, lambda m: 0.0, name="zero", descriptor={"kind": "zero", "n": n})


def range_penalty_g(n: int, lam: float = 1.0) -> SetFunction:
    """``lam * ((n-1) + max(A) - min(A) + |A|)`` for nonempty ``A``, zero at the empty set."""
    lam = _check_lambda(lam)

    def evaluate(mask: int) -> float:
        if mask == 0:
            return 0.0
        hi = mask.bit_length() - 1
        lo = (mask & -mask).bit_length() - 1
        return lam * ((n - 1) + hi - lo + popcount(mask))

    return SetFunction(n, evaluate, name="range", descriptor={"kind": "range", "n": n, "lambda": lam})


def count_runs(mask: int) -> int:
    """Number of maximal blocks of consecutive indices in ``mask``."""
    return popcount(mask & ~(mask << 1))


def interval_penalty_g(n: int, lam: float = 1.0) -> SetFunction:
    """``lam * (|A| + number of contiguous runs in A)``."""
    lam = _check_lambda(lam)
    return SetFunction(n, lambda m: lam * (popcount(m) + count_runs(m)), name="interval",
                       descriptor={"kind": "interval", "n": n, "lambda": lam})


PENALTIES = {
    "cardinality": cardinality_g,
    "range": range_penalty_g,
    "interval": interval_penalty_g,
}


def penalty_from_descriptor(desc: dict) -> SetFunction:
    kind = desc["kind"]
    if kind in PENALTIES:
        return PENALTIES[kind](desc["n"], desc["lambda"])
    if kind == "weighted_cardinality":
        return weighted_cardinality_g(desc["weights"])
    if kind == "zero":
        return zero_g(desc["n"])
    raise ValueError(f"unknown penalty kind {kind!r}")


def make_penalty(kind: str, n: int, lam: float) -> SetFunction:
    try:
        return PENALTIES[kind](n, lam)
    except KeyError:
        raise ValueError(f"unknown penalty {kind!r}; expected one of {sorted(PENALTIES)}") from None


def _raised_cosine(t: np.ndarray, center: float, half_width: float) -> np.ndarray:
    z = (t - center) / half_width
    return np.where(np.abs(z) < 1.0, 0.5 * (1.0 + np.cos(np.pi * z)), 0.0)


def test_signal(n: int) -> np.ndarray:
    """Nonnegative target: two smooth bumps on an exactly-zero background.

    A synthetic stand-in for the regression target; values lie in [0, 1].
    """
    t = np.linspace(0.0, 1.0, n)
    return 0.9 * _raised_cosine(t, 0.3, 0.12) + 0.5 * _raised_cosine(t, 0.72, 0.08)


def denoising_signal(n: int) -> np.ndarray:
    """Signed smooth signal living on two windows; values lie in [-1, 1]."""
    t = np.linspace(0.0, 1.0, n)
    return 0.8 * _raised_cosine(t, 0.25, 0.1) - 0.6 * _raised_cosine(t, 0.7, 0.12)


@dataclass
class InstanceSpec:
    fspec: QuadraticSpec
    g: SetFunction
    n: int
    seed: int | None = None
    lam: float = 0.0
    mu_smooth: float = 0.0
    b_target: np.ndarray | None = None
    kind: str = "custom"
    D: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready description; matrices are nested row-major lists."""
        return {
            "kind": self.kind,
            "n": self.n,
            "seed": self.seed,
            "lambda": self.lam,
            "mu_smooth": self.mu_smooth,
            "b_target": None if self.b_target is None else self.b_target.tolist(),
            "D": None if self.D is None else self.D.tolist(),
            "Q": self.fspec.Q.tolist(),
            "p": self.fspec.p.tolist(),
            "offset": self.fspec.offset,
            "sign_mode": self.fspec.sign_mode,
            "penalty": self.g.descriptor,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceSpec":
        fspec = QuadraticSpec(Q=d["Q"], p=d["p"], offset=d["offset"], sign_mode=d["sign_mode"],
                              enforce_submodular=False)
        return cls(
            fspec=fspec,
            g=penalty_from_descriptor(d["penalty"]),
            n=d["n"],
            seed=d["seed"],
            lam=d["lambda"],
            mu_smooth=d["mu_smooth"],
            b_target=None if d["b_target"] is None else np.asarray(d["b_target"]),
            kind=d["kind"],
            D=None if d["D"] is None else np.asarray(d["D"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "InstanceSpec":
        return cls.from_dict(json.loads(text))


def gen_regression_instance(
    n: int,
    seed: int,
    lam: float = 0.05,
    penalty: str = "range",
    b: np.ndarray | None = None,
) -> InstanceSpec:
    """Random least squares ``||Dx - b||^2`` with ``D'D = C + C' + nI``, ``C_ij ~ U(-1, 0)``.

    ``C`` is resampled until the Cholesky factorization succeeds, so the
    quadratic is convex and its Hessian has nonpositive off-diagonals.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_CHOLESKY_ATTEMPTS):
        C = rng.uniform(-1.0, 0.0, size=(n, n))
        try:
            inst = regression_from_matrix(C, b=b, lam=lam, penalty=penalty)
        except np.linalg.LinAlgError:
            continue
        inst.seed = seed
        return inst
    raise RuntimeError(f"no positive definite draw in {MAX_CHOLESKY_ATTEMPTS} attempts (n={n}, seed={seed})")


def regression_from_matrix(C, b=None, lam: float = 0.05, penalty: str = "range") -> InstanceSpec:
    """Build the least-squares instance from a given ``C``; raises ``LinAlgError`` if not PD."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    M = C + C.T + n * np.eye(n)
    L = np.linalg.cholesky(M)
    D = L.T
    b = test_signal(n) if b is None else np.asarray(b, dtype=float)
    fspec = QuadraticSpec(Q=M, p=-2.0 * D.T @ b, offset=float(b @ b))
    return InstanceSpec(fspec=fspec, g=make_penalty(penalty, n, lam), n=n, lam=lam,
                        b_target=b, kind="sparse_regression", D=D)


def denoising_instance(y, mu_smooth: float, lam: float, seed: int | None = None) -> InstanceSpec:
    """``1/2 ||x - y||^2 + mu * sum (x_i - x_{i+1})^2`` with the interval penalty, free sign mode."""
    y = np.asarray(y, dtype=float)
    if mu_smooth < 0:
        raise ValueError("smoothness weight must be nonnegative")
    n = len(y)
    lap = np.zeros((n, n))
    for i in range(n - 1):
        lap[i, i] += 1.0
        lap[i + 1, i + 1] += 1.0
        lap[i, i + 1] -= 1.0
        lap[i + 1, i] -= 1.0
    fspec = QuadraticSpec(Q=0.5 * np.eye(n) + mu_smooth * lap, p=-y, offset=0.5 * float(y @ y),
                          sign_mode=FREE)
    return InstanceSpec(fspec=fspec, g=interval_penalty_g(n, lam), n=n, seed=seed, lam=lam,
                        mu_smooth=mu_smooth, b_target=y, kind="denoising")


def gen_denoising_instance(
    n: int,
    seed: int,
    mu_smooth: float = 0.8,
    lam: float = 0.05,
    noise_var: float = 0.1,
) -> InstanceSpec:
    """Noisy observation ``y = x + w`` of :func:`denoising_signal`, ``w ~ N(0, noise_var I)``."""
    rng = np.random.default_rng(seed)
    y = denoising_signal(n) + rng.normal(0.0, np.sqrt(noise_var), size=n)
    return denoising_instance(y, mu_smooth, lam, seed=seed)


def lift_least_squares(Amat, b, lam: float = 1.0) -> tuple[InstanceSpec, bool]:
    """Split ``x = x_plus - x_minus`` to pose least squares on the nonnegative orthant.

    Returns the 2n-dimensional instance and whether its Hessian passes the
    off-diagonal test (true exactly when ``A'A`` is diagonal).  Off-diagonal
    Gram entries within ``1e-12`` of the largest entry count as zero, so
    orthogonal designs built in floating point still pass.
    """
    A = np.asarray(Amat, dtype=float)
    b = np.asarray(b, dtype=float)
    G = A.T @ A
    Q = np.block([[G, -G], [-G, G]])
    Atb = A.T @ b
    p = -2.0 * np.concatenate([Atb, -Atb])
    fspec = QuadraticSpec(Q=Q, p=p, offset=float(b @ b), enforce_submodular=False)
    n2 = 2 * A.shape[1]
    inst = InstanceSpec(fspec=fspec, g=cardinality_g(n2, lam), n=n2, lam=lam, b_target=b, kind="lifted")
    return inst, check_hessian_offdiag(Q, tol=1e-12 * max(1.0, float(np.abs(G).max(initial=0.0))))


def coherence(Amat, absolute: bool = False) -> float:
    """Largest off-diagonal Gram entry after normalizing columns to unit norm.

    Signed by default; ``absolute=True`` gives the usual ``max |<a_i, a_j>|``.
    """
    A = np.asarray(Amat, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"zero columns {np.flatnonzero(norms == 0).tolist()} cannot be normalized")
    A = A / norms
    G = A.T @ A
    if G.shape[0] < 2:
        return 0.0
    off = G[~np.eye(G.shape[0], dtype=bool)]
    if absolute:
        off = np.abs(off)
    return float(off.max())
