"""Exact solvers for support-regularized model selection via submodular minimization.

The library minimizes ``f(x) + g(supp(x))`` over the nonnegative orthant (or over
R^n in ``free`` sign mode) by minimizing the set function ``A -> g(A) + H(A)``,
where ``H(A)`` is the best value of ``f`` over vectors supported inside ``A``.

Subsets of the ground set ``{0, ..., n-1}`` are plain Python ``int`` bitmasks
throughout: bit ``i`` set means index ``i`` is in the subset.
"""

from latsel.lattice import (
    BaseVertex,
    SetFunction,
    check_hessian_offdiag,
    check_monotone_bruteforce,
    check_submodular_bruteforce,
    greedy_base_vertex,
    lovasz_extension,
    mask_from_indices,
    mask_indices,
)
from latsel.sfm import (
    SfmResult,
    min_norm_point,
    minimize_bruteforce,
    minimize_submodular,
    semigradient_prune,
)
from latsel.inner import (
    CompositeFunction,
    InnerSolution,
    QuadraticSpec,
    eval_H,
    make_composite,
    recover_primal,
    solve_restricted_qp,
)

__version__ = "0.1.0"

__all__ = [
    "BaseVertex",
    "CompositeFunction",
    "InnerSolution",
    "QuadraticSpec",
    "SetFunction",
    "SfmResult",
    "check_hessian_offdiag",
    "check_monotone_bruteforce",
    "check_submodular_bruteforce",
    "eval_H",
    "greedy_base_vertex",
    "lovasz_extension",
    "make_composite",
    "mask_from_indices",
    "mask_indices",
    "min_norm_point",
    "minimize_bruteforce",
    "minimize_submodular",
    "recover_primal",
    "semigradient_prune",
    "solve_restricted_qp",
    "__version__",
]
