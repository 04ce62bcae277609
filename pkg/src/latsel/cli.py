"""Experiment runner: ``latsel run --config cfg.json [overrides]``.

Each run writes into its output directory:

* ``results.csv``: one row per solver (or per grid size in a sweep)
* ``trace_<solver>.csv``: objective per iteration
* ``solution_<solver>.csv``: the returned vector, one ``index,value`` row per coordinate
* ``manifest.json``: the resolved configuration and the library version

Exit codes: 0 on success, 2 for configuration or I/O errors, 3 when the
exact solver stops without meeting its tolerance (outputs are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from latsel import __version__
from latsel.baselines import discretized_fw_minimize, make_grid_for, pgd_lovasz_minimize
from latsel.constrained import (
    SUPPORT_KNAPSACK,
    BudgetSpec,
    path_table,
    select_under_budget,
    solve_regularization_path,
    write_path_csv,
)
from latsel.inner import make_composite, recover_primal
from latsel.lattice import mask_from_indices, mask_hex
from latsel.models import PENALTIES, InstanceSpec, gen_denoising_instance, gen_regression_instance
from latsel.report import write_csv
from latsel.robust import eval_Q, gen_multidomain, robust_solve, write_robust_trace_csv
from latsel.sfm import minimize_submodular

log = logging.getLogger("latsel")

EXPERIMENTS = ("sparse_regression", "denoising", "discretization_sweep", "knapsack_path", "robust")
SOLVERS = ("minnorm", "pgd", "discretized")
RESULTS_HEADER = (
    "experiment", "solver", "n", "k", "seed", "objective", "wall_seconds", "iterations", "support", "certificate", "gap",
)
EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "sparse_regression"
    n: int = 100
    seed: int = 0
    lam: float = 0.05
    mu_smooth: float = 0.8
    k_list: list[int] | None = None
    tol: float = 1e-4
    max_iter: int = 100
    repeats: int = 5
    solvers: list[str] | None = None
    output_dir: str = "results"
    penalty: str = "range"
    budget: float | None = None
    T: int = 1000

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        if self.k_list is None:
            if self.experiment == "discretization_sweep":
                self.k_list = [50, 100, 200, 400]
            else:
                self.k_list = [101 if self.experiment == "denoising" else 51]
        if self.solvers is None:
            self.solvers = ["discretized"] if self.experiment == "discretization_sweep" else ["minnorm", "pgd"]
        self.validate()

    def validate(self) -> None:
        if not self.solvers:
            raise ConfigError("the solver list is empty; name at least one of " + ", ".join(SOLVERS))
        unknown = sorted(set(self.solvers) - set(SOLVERS))
        if unknown:
            raise ConfigError(f"unknown solvers {unknown}; expected a subset of {list(SOLVERS)}")
        if not self.k_list or any(k < 2 for k in self.k_list) or sorted(self.k_list) != list(self.k_list):
            raise ConfigError(f"k_list must be a nonempty ascending list of integers >= 2, got {self.k_list}")
        if self.n < 1 or self.repeats < 1 or self.max_iter < 1 or self.T < 1:
            raise ConfigError("n, repeats, max_iter and T must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.lam < 0 or self.mu_smooth < 0:
            raise ConfigError("lambda and mu_smooth must be nonnegative")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"unknown penalty {self.penalty!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class ReportRow:
    experiment: str
    solver: str
    n: int
    k: int | None
    seed: int
    objective: float
    wall_seconds: float
    iterations: int
    support: int
    certificate: float | None = None
    gap: float | None = None

    def cells(self) -> tuple:
        return (
            self.experiment, self.solver, self.n, self.k, self.seed, float(self.objective),
            float(self.wall_seconds), self.iterations, mask_hex(self.support),
            None if self.certificate is None else float(self.certificate),
            None if self.gap is None else float(self.gap),
        )

    @classmethod
    def parse(cls, cells: list[str]) -> "ReportRow":
        opt = lambda s, conv: None if s == "" else conv(s)  # noqa: E731
        return cls(
            experiment=cells[0], solver=cells[1], n=int(cells[2]), k=opt(cells[3], int), seed=int(cells[4]),
            objective=float(cells[5]), wall_seconds=float(cells[6]), iterations=int(cells[7]),
            support=int(cells[8], 16), certificate=opt(cells[9], float), gap=opt(cells[10], float),
        )


@dataclass
class _SolverOutcome:
    objective: float
    x: np.ndarray
    iterations: int
    certificate: float | None
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    k: int | None = None


def _support(x: np.ndarray) -> int:
    return mask_from_indices(np.flatnonzero(x))


def _build_instance(cfg: ExperimentConfig) -> InstanceSpec:
    if cfg.experiment == "denoising":
        return gen_denoising_instance(cfg.n, cfg.seed, mu_smooth=cfg.mu_smooth, lam=cfg.lam)
    return gen_regression_instance(cfg.n, cfg.seed, lam=cfg.lam, penalty=cfg.penalty)


def _run_solver(solver: str, inst: InstanceSpec, cfg: ExperimentConfig, k: int | None = None) -> _SolverOutcome:
    comp = make_composite(inst.fspec, inst.g)
    if solver == "minnorm":
        res = minimize_submodular(comp, tol=cfg.tol, max_iter=cfg.max_iter)
        x = recover_primal(comp, res.minimizer).x
        trace = [(t + 1, v, s) for t, (v, s) in enumerate(res.value_history)]
        return _SolverOutcome(comp.objective(x), x, res.iterations, res.gap_certificate, res.converged, trace)
    if solver == "pgd":
        res, rows = pgd_lovasz_minimize(comp, max_iter=cfg.max_iter, tol=cfg.tol)
        x = recover_primal(comp, res.minimizer).x
        trace = [(r.iteration, r.objective, r.elapsed) for r in rows]
        return _SolverOutcome(comp.objective(x), x, res.iterations, res.gap_certificate, res.converged, trace)
    k = cfg.k_list[0] if k is None else k
    x, value, rows = discretized_fw_minimize(inst.fspec, inst.g, make_grid_for(comp, k), max_iter=cfg.max_iter,
                                             tol=cfg.tol)
    trace = [(r.iteration, r.objective, r.elapsed) for r in rows]
    return _SolverOutcome(value, x, len(rows), None, True, trace, k=k)


def _timed(solver: str, cfg: ExperimentConfig, k: int | None = None) -> tuple[_SolverOutcome, float]:
    # instance generation stays outside the clock; every repeat starts from cold caches
    times = []
    outcome = None
    for _ in range(cfg.repeats):
        inst = _build_instance(cfg)
        start = time.perf_counter()
        outcome = _run_solver(solver, inst, cfg, k)
        times.append(time.perf_counter() - start)
    return outcome, float(np.mean(times))


def _write_trace(out: Path, name: str, trace) -> None:
    write_csv(out / f"trace_{name}.csv", ("iteration", "objective", "elapsed"), trace)


def _write_solution(out: Path, name: str, x: np.ndarray) -> None:
    write_csv(out / f"solution_{name}.csv", ("index", "value"), ((i, float(v)) for i, v in enumerate(x)))


def _solver_experiment(cfg: ExperimentConfig, out: Path) -> tuple[list[ReportRow], bool]:
    rows, ok = [], True
    outcomes = {}
    for solver in cfg.solvers:
        outcome, wall = _timed(solver, cfg)
        outcomes[solver] = (outcome, wall)
        _write_trace(out, solver, outcome.trace)
        _write_solution(out, solver, outcome.x)
        if solver == "minnorm":
            ok &= outcome.converged
    reference = outcomes.get("minnorm", (None,))[0]
    for solver, (o, wall) in outcomes.items():
        gap = None if reference is None else o.objective - reference.objective
        rows.append(ReportRow(cfg.experiment, solver, cfg.n, o.k, cfg.seed, o.objective, wall, o.iterations,
                              _support(o.x), o.certificate, gap))
    return rows, ok


def discretization_sweep(cfg: ExperimentConfig, out: Path) -> tuple[list[ReportRow], bool]:
    """One discretized row per grid size plus the exact reference row; gap = discretized - exact."""
    exact, wall = _timed("minnorm", cfg)
    _write_trace(out, "minnorm", exact.trace)
    _write_solution(out, "minnorm", exact.x)
    rows = [ReportRow(cfg.experiment, "minnorm", cfg.n, None, cfg.seed, exact.objective, wall, exact.iterations,
                      _support(exact.x), exact.certificate, 0.0)]
    for k in cfg.k_list:
        o, wall = _timed("discretized", cfg, k)
        _write_trace(out, f"discretized_k{k}", o.trace)
        _write_solution(out, f"discretized_k{k}", o.x)
        rows.append(ReportRow(cfg.experiment, "discretized", cfg.n, k, cfg.seed, o.objective, wall, o.iterations,
                              _support(o.x), None, o.objective - exact.objective))
    return rows, exact.converged


def _knapsack_experiment(cfg: ExperimentConfig, out: Path) -> tuple[list[ReportRow], bool]:
    inst = gen_regression_instance(cfg.n, cfg.seed, lam=cfg.lam, penalty=cfg.penalty)
    comp = make_composite(inst.fspec, inst.g)
    budget = BudgetSpec(SUPPORT_KNAPSACK, B=math.inf if cfg.budget is None else cfg.budget, w=np.ones(cfg.n))
    start = time.perf_counter()
    chain = solve_regularization_path(comp, budget, tol=min(cfg.tol, 1e-10))
    A, sol = select_under_budget(chain, comp, budget)
    wall = time.perf_counter() - start
    write_path_csv(out / "path.csv", path_table(chain, comp, budget))
    _write_solution(out, "path", sol.x)
    objective = comp.objective(sol.x)
    row = ReportRow(cfg.experiment, "path", cfg.n, None, cfg.seed, objective, wall, chain.subproblems,
                    _support(sol.x), chain.certificate, None)
    return [row], chain.converged


def _robust_experiment(cfg: ExperimentConfig, out: Path) -> tuple[list[ReportRow], bool]:
    spec = gen_multidomain(cfg.n, cfg.seed)
    start = time.perf_counter()
    trace = robust_solve(spec, cfg.T)
    wall = time.perf_counter() - start
    at_avg = eval_Q(spec, trace.averaged_x)
    write_robust_trace_csv(out / "trace_subgradient.csv", trace)
    _write_solution(out, "subgradient", trace.averaged_x)
    row = ReportRow(cfg.experiment, "subgradient", cfg.n, None, cfg.seed, at_avg.value, wall, cfg.T,
                    at_avg.A_star, None, None)
    return [row], True


def run_experiment(cfg: ExperimentConfig) -> tuple[list[ReportRow], bool]:
    """Run one configured experiment, write every report file, return the rows and a convergence flag."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    runner = {
        "sparse_regression": _solver_experiment,
        "denoising": _solver_experiment,
        "discretization_sweep": discretization_sweep,
        "knapsack_path": _knapsack_experiment,
        "robust": _robust_experiment,
    }[cfg.experiment]
    rows, converged = runner(cfg, out)
    write_csv(out / "results.csv", RESULTS_HEADER, (r.cells() for r in rows))
    manifest = {"library": "latsel", "version": __version__, "config": cfg.to_dict(), "converged": converged,
                "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return rows, converged


def _parse_k(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latsel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="JSON configuration file")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--n", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--k", dest="k_list", type=_parse_k, help="grid sizes, e.g. 50,100,200")
    run.add_argument("--out", dest="output_dir")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("the config file must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in ("experiment", "n", "seed", "lam", "k_list", "output_dir")}
    if overrides.get("lam") is not None:
        overrides["lambda"] = overrides.pop("lam")
    try:
        cfg = load_config(args.config, overrides)
        _, converged = run_experiment(cfg)
    except (ConfigError, OSError) as exc:
        print(f"latsel: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not converged:
        print("latsel: the exact solver stopped before reaching its tolerance", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
