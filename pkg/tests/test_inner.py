import numpy as np
import pytest

from conftest import enumerate_objective, nnls_H, projected_gradient_qp
from latsel.inner import (
    FREE,
    IndefiniteRestrictionError,
    QuadraticSpec,
    eval_H,
    make_composite,
    recover_primal,
    solve_restricted_qp,
)
from latsel.lattice import check_submodular_bruteforce, mask_indices
from latsel.models import cardinality_g, gen_regression_instance, zero_g
from latsel.sfm import min_norm_point


def test_b12_values(b12_composite):
    comp = b12_composite
    assert eval_H(comp, 0) == pytest.approx(5.0)
    assert eval_H(comp, 0b10) == pytest.approx(1.0)
    assert eval_H(comp, 0b11) == pytest.approx(0.0)
    assert comp(0b10) == pytest.approx(2.0)
    sol = recover_primal(comp, 0b11)
    assert sol.x == pytest.approx([1.0, 2.0])


def test_negative_target_clamps_to_zero():
    fspec = QuadraticSpec.least_squares(np.eye(2), [-1.0, 2.0])
    sol = solve_restricted_qp(fspec, 0b11)
    assert sol.x[0] == 0.0
    assert sol.x[1] == pytest.approx(2.0)
    assert sol.active_set == 0b01
    assert sol.value == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(6))
def test_matches_nnls_on_every_support(seed):
    inst = gen_regression_instance(6, seed, penalty="cardinality")
    for mask in range(64):
        sol = solve_restricted_qp(inst.fspec, mask, tol=1e-10)
        ref, _ = nnls_H(inst.D, inst.b_target, mask)
        assert sol.value == pytest.approx(ref, abs=1e-8)
        assert sol.support & ~mask == 0


def test_matches_projected_gradient_on_general_qp():
    rng = np.random.default_rng(11)
    M = -rng.uniform(0.0, 0.4, (5, 5))
    Q = (M + M.T) / 2
    np.fill_diagonal(Q, 2.0)
    p = rng.normal(size=5)
    fspec = QuadraticSpec(Q=Q, p=p)
    for mask in (0b11111, 0b10101, 0b01110):
        ref = projected_gradient_qp(Q, p, mask)
        sol = solve_restricted_qp(fspec, mask, tol=1e-10)
        assert sol.x == pytest.approx(ref, abs=1e-7)


def test_warm_start_does_not_change_answer():
    inst = gen_regression_instance(7, 2, penalty="cardinality")
    cold = solve_restricted_qp(inst.fspec, 0b1111111)
    warm = solve_restricted_qp(inst.fspec, 0b1111111, warm_start=np.ones(7))
    assert warm.x == pytest.approx(cold.x, abs=1e-10)


def test_free_mode_solves_normal_equations():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(6, 3))
    b = rng.normal(size=6)
    fspec = QuadraticSpec.least_squares(D, b, sign_mode=FREE)
    sol = solve_restricted_qp(fspec, 0b111)
    assert sol.x == pytest.approx(np.linalg.lstsq(D, b, rcond=None)[0], abs=1e-10)


def test_indefinite_restriction_reports_coordinates():
    fspec = QuadraticSpec(Q=[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]], p=[0.0, 0.0, 0.0], sign_mode=FREE)
    with pytest.raises(IndefiniteRestrictionError) as err:
        solve_restricted_qp(fspec, 0b111)
    assert err.value.coordinates == [1]


def test_positive_offdiagonal_rejected_unless_asked():
    Q = [[1.0, 0.5], [0.5, 1.0]]
    with pytest.raises(ValueError):
        QuadraticSpec(Q=Q, p=[0.0, 0.0])
    QuadraticSpec(Q=Q, p=[0.0, 0.0], enforce_submodular=False)
    QuadraticSpec(Q=Q, p=[0.0, 0.0], sign_mode=FREE)


def test_shape_and_tol_validation():
    with pytest.raises(ValueError):
        QuadraticSpec(Q=np.eye(3), p=[0.0, 0.0])
    with pytest.raises(ValueError):
        solve_restricted_qp(QuadraticSpec(Q=np.eye(1), p=[0.0]), 1, tol=0.0)
    with pytest.raises(ValueError):
        make_composite(QuadraticSpec(Q=np.eye(2), p=[0.0, 0.0]), cardinality_g(3))


def test_H_is_antitone_and_composite_submodular():
    inst = gen_regression_instance(6, 5)
    comp = make_composite(inst.fspec, zero_g(6))
    values = comp.all_values()
    for mask in range(64):
        for i in range(6):
            assert values[mask | (1 << i)] <= values[mask] + 1e-10
    assert check_submodular_bruteforce(make_composite(inst.fspec, inst.g))


def test_composite_caches_inner_solves():
    inst = gen_regression_instance(5, 1)
    comp = make_composite(inst.fspec, inst.g)
    comp.all_values()
    assert len(comp.h_memo) == 32
    first = comp.solve(0b10110)
    assert comp.solve(0b10110) is first


def test_objective_uses_actual_support(b12_composite):
    assert b12_composite.objective([0.0, 2.0]) == pytest.approx(2.0)
    assert b12_composite.objective([1.0, 2.0]) == pytest.approx(2.0)
    assert mask_indices(recover_primal(b12_composite, 0b10).support) == [1]


def test_worked_qp_examples():
    fspec = QuadraticSpec(Q=np.eye(2), p=[-2.0, -4.0], offset=3.0)
    sol = solve_restricted_qp(fspec, 0b11)
    assert sol.x == pytest.approx([1.0, 2.0])
    assert sol.value == pytest.approx(-5.0 + 3.0)
    empty = solve_restricted_qp(fspec, 0)
    assert empty.x.tolist() == [0.0, 0.0] and empty.value == 3.0
    sol = solve_restricted_qp(QuadraticSpec(Q=np.eye(2), p=[2.0, -2.0]), 0b11)
    assert sol.x == pytest.approx([0.0, 1.0])
    assert sol.value == pytest.approx(-1.0)


def test_recover_primal_on_generated_instance():
    inst = gen_regression_instance(8, 0)
    comp = make_composite(inst.fspec, inst.g)
    res = min_norm_point(comp, tol=1e-10, max_iter=1000)
    x = recover_primal(comp, res.minimizer).x
    best, _ = enumerate_objective(inst.D, inst.b_target, inst.g)
    assert comp.objective(x) == pytest.approx(best, abs=1e-6)
    assert recover_primal(comp, 0).x.tolist() == [0.0] * 8
