"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every line states the criterion, the measured quantity against its pinned
tolerance, and the wall time against the time budget.  Oracles here are
independent of the code under test: NNLS for inner solves, exhaustive
enumeration for set minimization, per-support LPs for the robust inner
problem, an SLSQP epigraph solve for the robust optimum, and the normal
equations for least squares.
"""

from __future__ import annotations

import csv
import io
import subprocess
import sys
import time

import numpy as np
from scipy.optimize import linprog, minimize

import conftest
from conftest import enumerate_objective, minimal_minimizer_by_enumeration, random_submodular
from latsel.baselines import discretized_fw_minimize, make_grid_for, pgd_lovasz_minimize
from latsel.constrained import (
    SUPPORT_KNAPSACK,
    BudgetSpec,
    ScalarQuadratic,
    scalar_profile,
    solve_regularization_path,
    threshold_chain,
)
from latsel.inner import make_composite, recover_primal, solve_restricted_qp
from latsel.lattice import (
    SetFunction,
    check_submodular_bruteforce,
    indicator,
    lovasz_extension,
    mask_indices,
)
from latsel.models import PENALTIES, gen_regression_instance, lift_least_squares, make_penalty
from latsel.robust import eval_Q, gen_multidomain, robust_solve
from latsel.sfm import min_norm_point, minimize_bruteforce, semigradient_prune

PENALTY_CYCLE = ("cardinality", "range", "interval")
LAMBDA = 0.05


class Criterion:
    """Times a criterion and records its PASS/FAIL line for the session summary."""

    def __init__(self, number: int, title: str, budget_s: float | None):
        self.number, self.title, self.budget = number, title, budget_s

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        return False

    def verdict(self, ok: bool, detail: str) -> None:
        elapsed = time.perf_counter() - self.start
        in_time = self.budget is None or elapsed < self.budget
        budget = "" if self.budget is None else f" / budget {self.budget:.0f} s"
        status = "PASS" if ok and in_time else "FAIL"
        line = f"[AC-{self.number:02d}] {status}  {self.title}: {detail}  ({elapsed:.1f} s{budget})"
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
        assert in_time, line


def test_ac01_end_to_end_exactness():
    with Criterion(1, "pipeline objective vs support enumeration, n in {4, 8, 10} x 50 seeds x 3 penalties",
                   180) as c:
        worst, failures, count = 0.0, [], 0
        for n in (4, 8, 10):
            for seed in range(50):
                for penalty in PENALTY_CYCLE:
                    inst = gen_regression_instance(n, seed, lam=LAMBDA, penalty=penalty)
                    comp = make_composite(inst.fspec, inst.g)
                    res = min_norm_point(comp, tol=1e-10, max_iter=1000)
                    x = recover_primal(comp, res.minimizer).x
                    got = comp.objective(x)
                    ref, _ = enumerate_objective(inst.D, inst.b_target, inst.g)
                    err = abs(got - ref)
                    worst = max(worst, err)
                    count += 1
                    if err > 1e-6:
                        failures.append((n, seed, penalty, err))
        c.verdict(not failures, f"{count} instances, max |diff| = {worst:.2e} (tol 1e-6), failures {failures[:3]}")


def test_ac02_composite_submodularity():
    with Criterion(2, "g + H passes the pairwise submodularity check, 100 seeds at n = 6", 60) as c:
        bad = []
        for seed in range(100):
            inst = gen_regression_instance(6, seed, lam=LAMBDA, penalty=PENALTY_CYCLE[seed % 3])
            if not check_submodular_bruteforce(make_composite(inst.fspec, inst.g), tol=1e-8):
                bad.append(seed)
        c.verdict(not bad, f"100 instances, violating seeds {bad} (tol 1e-8)")


def _sfm_instance(n: int, seed: int) -> SetFunction:
    # even seeds: generated regression composites; odd seeds: cut + concave + modular functions
    if seed % 2 == 0:
        inst = gen_regression_instance(n, seed, lam=LAMBDA, penalty=PENALTY_CYCLE[(seed // 2) % 3])
        return make_composite(inst.fspec, inst.g)
    return random_submodular(n, seed)


def test_ac03_sfm_oracle_equivalence():
    with Criterion(3, "min-norm point = brute force (set and value) and prune bracket, 150 instances n <= 12",
                   120) as c:
        mismatches, bracket_misses, worst = [], [], 0.0
        for n in (4, 8, 12):
            for seed in range(50):
                F = _sfm_instance(n, seed)
                ref = minimize_bruteforce(F)
                target = minimal_minimizer_by_enumeration(F.all_values())
                res = min_norm_point(F, tol=1e-10, max_iter=1000)
                worst = max(worst, abs(res.value - ref.value))
                if res.minimizer != ref.minimizer or ref.minimizer != target or abs(res.value - ref.value) > 1e-6:
                    mismatches.append((n, seed))
                lower, upper = semigradient_prune(F)
                if lower & ~target or target & ~upper:
                    bracket_misses.append((n, seed))
        c.verdict(not mismatches and not bracket_misses,
                  f"max |value diff| = {worst:.2e} (tol 1e-6), set mismatches {mismatches}, "
                  f"bracket misses {bracket_misses}")


def test_ac04_baseline_agreement():
    with Criterion(4, "pgd vs min-norm at n = 100, 5 seeds, default stopping rule (tol 1e-4, 100 iterations)",
                   180) as c:
        worst, support_diff, notes = 0.0, [], []
        for seed in range(5):
            inst = gen_regression_instance(100, seed, lam=LAMBDA)
            exact_comp = make_composite(inst.fspec, inst.g)
            exact = min_norm_point(exact_comp)
            x_exact = recover_primal(exact_comp, exact.minimizer).x
            pgd_comp = make_composite(inst.fspec, inst.g)
            pgd, _ = pgd_lovasz_minimize(pgd_comp)
            x_pgd = recover_primal(pgd_comp, pgd.minimizer).x
            worst = max(worst, abs(exact_comp.objective(x_exact) - pgd_comp.objective(x_pgd)))
            if pgd.minimizer != exact.minimizer or np.any((x_exact != 0) != (x_pgd != 0)):
                support_diff.append(seed)
            notes.append(f"{pgd.gap_certificate:.1e}")
        c.verdict(worst <= 1e-4 and not support_diff,
                  f"max |objective diff| = {worst:.2e} (tol 1e-4), support mismatches {support_diff}, "
                  f"pgd certificates {notes}")


def test_ac05_discretization_gap():
    ks = (50, 100, 200, 400)
    with Criterion(5, "discretized gap >= 0 and weakly decreasing over k = 50..400, n = 20, seeds 0-2", 300) as c:
        rows, ok = [], True
        for seed in range(3):
            inst = gen_regression_instance(20, seed, lam=LAMBDA)
            comp = make_composite(inst.fspec, inst.g)
            exact = min_norm_point(comp, tol=1e-10, max_iter=1000)
            exact_value = comp.objective(recover_primal(comp, exact.minimizer).x)
            gaps = []
            for k in ks:
                _, value, _ = discretized_fw_minimize(inst.fspec, inst.g, make_grid_for(comp, k), max_iter=1000)
                gaps.append(value - exact_value)
            ok &= min(gaps) >= -1e-9 and all(b <= a for a, b in zip(gaps, gaps[1:]))
            rows.append(f"seed {seed}: " + ", ".join(f"{g:.2e}" for g in gaps))
        c.verdict(ok, "; ".join(rows) + " (max_iter 1000)")


def _knapsack_instance(seed: int):
    inst = gen_regression_instance(8, seed, lam=LAMBDA, penalty=PENALTY_CYCLE[seed % 3])
    comp = make_composite(inst.fspec, inst.g)
    w = np.random.default_rng(1000 + seed).uniform(0.5, 2.0, 8)
    return comp, w


def _profile_grid_check(f, W, cap: float) -> bool:
    prof = scalar_profile(f, W, cap)
    top = 10.0 if not np.isfinite(prof.zero_point) else 2.0 * max(prof.zero_point, 1e-3)
    mus = np.linspace(0.0, top, 100)
    vals = np.array([prof.values(m) for m in mus])
    tail = vals[mus >= prof.zero_point]
    return bool(np.all(vals <= 1e-9) and np.all(np.diff(vals) >= -1e-9) and np.all(np.abs(tail) <= 1e-9))


def test_ac06_regularization_path():
    with Criterion(6, "threshold chain = minimal minimizer of the mu-penalized problem, 20 knapsack instances "
                   "n = 8 x 20 mu values; nesting; scalar profile grid check", 120) as c:
        mismatches, nesting, points = [], [], 0
        for seed in range(20):
            comp, w = _knapsack_instance(seed)
            chain = solve_regularization_path(comp, BudgetSpec(SUPPORT_KNAPSACK, w=w))
            values = comp.all_values()
            weight = np.array([w[mask_indices(m)].sum() for m in range(256)])
            # past mu_bar the empty set is the unique minimizer, so the grid spans every change
            mu_bar = max((values[0] - values[m]) / weight[m] for m in range(1, 256))
            sets = []
            for mu in np.linspace(0.0, 1.05 * max(mu_bar, 0.0) + 1e-3, 20):
                direct = minimize_bruteforce(SetFunction(8, lambda m, mu=mu: values[m] + mu * weight[m]))
                A = threshold_chain(chain, mu)
                points += 1
                if A != direct.minimizer:
                    mismatches.append((seed, round(float(mu), 4)))
                sets.append(A)
            if any(b & ~a for a, b in zip(sets, sets[1:])):
                nesting.append(seed)
        rng = np.random.default_rng(6)
        profiles_ok = 0
        for _ in range(50):
            f = ScalarQuadratic(rng.uniform(0.0, 2.0), rng.uniform(-3.0, 1.0))
            W = ScalarQuadratic(rng.uniform(0.0, 1.0), rng.uniform(0.1, 2.0))
            profiles_ok += _profile_grid_check(f, W, 10.0)
        profiles_ok += _profile_grid_check(lambda z: np.exp(-z) - 1.0 + 0.1 * z * z, lambda z: z + z ** 3, 5.0)
        c.verdict(not mismatches and not nesting and profiles_ok == 51,
                  f"{points} (instance, mu) pairs, mismatches {mismatches[:5]}, nesting failures {nesting}, "
                  f"profiles passing {profiles_ok}/51 (tol 1e-9)")


def test_ac07_lovasz_vertex_consistency():
    with Criterion(7, "extension at indicators = set values, every subset, n = 10, every penalty family", 30) as c:
        worst = 0.0
        families = [make_penalty(kind, 10, 0.7) for kind in sorted(PENALTIES)]
        inst = gen_regression_instance(10, 0, lam=LAMBDA)
        families.append(make_composite(inst.fspec, inst.g))
        for F in families:
            for mask in range(1 << 10):
                worst = max(worst, abs(lovasz_extension(F, indicator(mask, 10)) - F(mask)))
        c.verdict(worst <= 1e-10, f"{len(families)} families x 1024 subsets, max |diff| = {worst:.2e} (tol 1e-10)")


def _lp_inner_value(spec, x0) -> float:
    a = np.array([L.value(x0) for L in spec.domain_losses])
    best = -spec.g(0)
    for mask in range(1, 1 << spec.K):
        idx = mask_indices(mask)
        res = linprog(-a[idx], A_ub=np.ones((1, len(idx))), b_ub=[1.0], bounds=[(0, None)] * len(idx))
        best = max(best, -res.fun - spec.g(mask))
    return best


def _robust_optimum(spec) -> float:
    """Fine grid over the box, then an SLSQP epigraph polish with one constraint per (support, domain) pair."""
    K = spec.K
    pairs = [(mask, i) for mask in range(1, 1 << K) for i in mask_indices(mask)]
    g_of = {mask: spec.g(mask) for mask in range(1 << K)}

    def q(x):
        vals = [spec.domain_losses[i].value(x) - g_of[mask] for mask, i in pairs]
        return max(-g_of[0], max(vals))

    axis = np.linspace(-1.0, 1.0, 201)
    best_x, best_q = None, np.inf
    for u in axis:
        for v in axis:
            val = q(np.array([u, v]))
            if val < best_q:
                best_x, best_q = np.array([u, v]), val
    cons = [{"type": "ineq", "fun": lambda z, m=m, i=i: z[2] - (spec.domain_losses[i].value(z[:2]) - g_of[m])}
            for m, i in pairs]
    cons.append({"type": "ineq", "fun": lambda z: z[2] + g_of[0]})
    res = minimize(lambda z: z[2], np.append(best_x, best_q), constraints=cons,
                   bounds=[(-1, 1), (-1, 1), (None, None)], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    return min(best_q, q(res.x[:2]))


def test_ac08_robust_solver():
    with Criterion(8, "robust inner solve vs per-support LPs, subgradient inequality, convergence slope", 180) as c:
        worst_inner, sub_violations = 0.0, 0
        rng = np.random.default_rng(8)
        for K in (2, 5, 8, 10):
            for seed in range(3):
                spec = gen_multidomain(K, seed, penalty_scale=0.5)
                for x0 in rng.uniform(-1, 1, (3, 2)):
                    worst_inner = max(worst_inner, abs(eval_Q(spec, x0, method="enumerate").value
                                                       - _lp_inner_value(spec, x0)))
                    worst_inner = max(worst_inner, abs(eval_Q(spec, x0).value - _lp_inner_value(spec, x0)))
                x0 = rng.uniform(-1, 1, 2)
                r = eval_Q(spec, x0)
                for x in rng.uniform(-1, 1, (100, 2)):
                    if eval_Q(spec, x).value < r.value + r.subgrad @ (x - x0) - 1e-6:
                        sub_violations += 1
        spec = gen_multidomain(5, 0)
        opt = _robust_optimum(spec)
        Ts = np.array([100, 400, 1600, 6400])
        subopt = np.array([robust_solve(spec, int(T)).best_value - opt for T in Ts])
        positive = bool(np.all(subopt > 0))
        slope = float(np.polyfit(np.log(Ts), np.log(np.maximum(subopt, 1e-300)), 1)[0]) if positive else np.nan
        ok = worst_inner <= 1e-8 and sub_violations == 0 and positive and slope <= -0.4
        c.verdict(ok, f"max inner |diff| = {worst_inner:.2e} (tol 1e-8), subgradient violations {sub_violations} "
                      f"(slack 1e-6), suboptimality {', '.join(f'{s:.2e}' for s in subopt)}, "
                      f"log-log slope {slope:.2f} (need <= -0.4)")


def test_ac09_lifting():
    with Criterion(9, "lifted orthogonal designs pass the Hessian test; lifted g = 0 solve = normal equations", 30) \
            as c:
        rng = np.random.default_rng(9)
        passes, worst = 0, 0.0
        for seed in range(10):
            Qm, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(5, 5)))
            design = Qm[:, :3] * rng.uniform(0.5, 2.0, 3)
            _, ok = lift_least_squares(design, rng.normal(size=5))
            passes += ok
        for seed in range(10):
            r = np.random.default_rng(100 + seed)
            A, b = r.normal(size=(3, 3)), r.normal(size=3)
            inst, _ = lift_least_squares(A, b, lam=0.0)
            x_lift = solve_restricted_qp(inst.fspec, (1 << 6) - 1, tol=1e-10).x
            x = x_lift[:3] - x_lift[3:]
            ref = np.linalg.solve(A.T @ A, A.T @ b)
            worst = max(worst, float(np.abs(x - ref).max()))
        c.verdict(passes == 10 and worst <= 1e-6,
                  f"orthogonal lifts passing {passes}/10, max |x - x_normal_eq| = {worst:.2e} (tol 1e-6)")


def _results_without_wall(path) -> bytes:
    rows = list(csv.reader(io.StringIO(path.read_text())))
    col = rows[0].index("wall_seconds")
    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerows([r[:col] + r[col + 1:] for r in rows])
    return out.getvalue().encode()


def test_ac10_cli_determinism(tmp_path):
    runs = {
        "sparse_regression": ["--n", "30"],
        "denoising": ["--n", "30"],
        "discretization_sweep": ["--n", "10", "--k", "5,10"],
        "knapsack_path": ["--n", "8"],
        "robust": ["--n", "4"],
    }
    with Criterion(10, "repeated CLI runs give byte-identical results.csv except wall_seconds", None) as c:
        differing = []
        for exp, extra in runs.items():
            outputs = []
            for rep in range(2):
                out = tmp_path / f"{exp}_{rep}"
                cmd = [sys.executable, "-m", "latsel.cli", "run", "--experiment", exp, "--seed", "3",
                       "--out", str(out), *extra]
                proc = subprocess.run(cmd, capture_output=True, text=True)
                assert proc.returncode == 0, proc.stderr
                outputs.append(_results_without_wall(out / "results.csv"))
            if outputs[0] != outputs[1]:
                differing.append(exp)
        c.verdict(not differing, f"{len(runs)} experiments run twice in separate processes, differing {differing}")
