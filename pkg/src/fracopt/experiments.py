"""Experiment runners: one validated config in, a report plus files out.

Every runner is a pure function of (config, seed): no clocks, no global
state, seeded RNGs only, so identical inputs give byte-identical artifacts.
Exit codes: 0 success, 2 solver non-convergence, 4 failed --assert (invalid
configs raise ConfigError before any runner starts; callers map that to 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import (ConfigError, FieldConfig, RunConfig, build_box, build_field,
                     build_grid, build_nonlinearity, build_operator, require)
from .grid import Grid, GridFunction, function_to_csv, inner, interval, lp_norm
from .integral import getoor_constant
from .nonlinearity import PowerLaw, check_delta2, check_growth, check_monotone_odd
from .optimizer import (ControlProblem, first_order_residual, projected_gradient,
                        quadratic_growth_sample, semismooth_newton, ssc_probe)
from .reports import convergence_to_csv, report_to_json
from .sensitivity import (SensitivityContext, gradient_fd_table, hessian_fd_table,
                          hessian_vec)
from .spectral import apply_power, build_spectral
from .state import StateSolveError, solve_state, two_norm_gap


@dataclass
class ExperimentResult:
    exit_code: int
    report: dict
    files: list  # (name, content) pairs, report.json first


def _convergence_rows(ns, hs, errors) -> list:
    """Rows (n, h, error, observed_order); order = log(e_prev/e_cur) over
    log(h_prev/h_cur), the log2 error ratio when the mesh doubles."""
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError("check.ns: must be strictly increasing")
    rows = []
    prev = None
    for n, h, e in zip(ns, hs, errors):
        row = {"n": n, "h": h, "error": e}
        if prev is not None and e > 0 and prev[1] > 0:
            row["observed_order"] = math.log(prev[1] / e) / math.log(prev[0] / h)
        rows.append(row)
        prev = (h, e)
    return rows


def _solve_control_problem(config: RunConfig, seed: int):
    """Shared setup for the control experiments: build and run the solver."""
    problem_cfg = config.problem
    grid = build_grid(problem_cfg.grid)
    op = build_operator(grid, problem_cfg.operator)
    nl = build_nonlinearity(grid, problem_cfg.nonlinearity)
    mu = require(problem_cfg.mu, "problem.mu", config.experiment)
    u_d = build_field(grid, require(problem_cfg.u_d, "problem.u_d", config.experiment),
                      "problem.u_d")
    box = build_box(grid, require(problem_cfg.box, "problem.box", config.experiment))
    problem = ControlProblem(op, nl, u_d, mu, box, state_tol=config.solver.state_tol)
    if problem_cfg.z is not None:
        z0 = build_field(grid, problem_cfg.z, "problem.z")
    else:
        z0 = grid.function(0.0)
    solver = projected_gradient if config.solver.method == "projected-gradient" \
        else semismooth_newton
    report = solver(problem, z0, tol=config.solver.tol,
                    max_iter=config.solver.max_iter, taus=tuple(config.check.taus))
    return problem, report


def _solve_summary(rep) -> dict:
    return {
        "method": rep.method,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "kkt_residual": rep.kkt_residual,
        "cost": rep.cost,
    }


def _run_solve_state(config: RunConfig, seed: int):
    problem_cfg = config.problem
    grid = build_grid(problem_cfg.grid)
    op = build_operator(grid, problem_cfg.operator)
    nl = build_nonlinearity(grid, problem_cfg.nonlinearity)
    z = build_field(grid, require(problem_cfg.z, "problem.z", "solve-state"),
                    "problem.z")
    gap = two_norm_gap(grid.dimension, op.s)
    try:
        rep = solve_state(op, nl, z, tol=config.solver.state_tol,
                          max_newton=config.solver.max_newton)
    except StateSolveError as exc:
        report = {
            "backend": op.backend, "s": op.s, "n": grid.n,
            "dimension": grid.dimension,
            "two_norm_gap": gap.to_dict(),
            "converged": False,
            "error": str(exc),
        }
        return report, [], None, False
    u = rep.u
    report = {
        "backend": op.backend, "s": op.s, "n": grid.n,
        "dimension": grid.dimension,
        "two_norm_gap": gap.to_dict(),
        "converged": rep.converged,
        "state": rep.to_dict(),
        "norms": {"l2": lp_norm(u, 2), "linf": lp_norm(u, math.inf)},
    }
    files = [("state.csv", function_to_csv(u))]
    return report, files, None, rep.converged


def _run_solve_control(config: RunConfig, seed: int):
    problem, rep = _solve_control_problem(config, seed)
    check = config.check
    if check.run_ssc or (check.run_growth and check.beta is None):
        probe = ssc_probe(problem, rep.z, tau=check.tau, iters=check.iters,
                          seed=seed)
        rep.ssc = probe
    if check.run_growth:
        beta = check.beta
        if beta is None:
            if rep.ssc.get("empty_cone"):
                raise ConfigError("check.beta: required when the strongly active "
                                  "set covers every node (empty cone)")
            beta = rep.ssc["delta_est"] / 4.0
        rep.growth = quadratic_growth_sample(problem, rep.z, rho=check.rho,
                                             beta=beta, n_samples=check.n_samples,
                                             seed=seed, tau=check.tau)
    report = rep.to_dict()
    files = [
        ("control.csv", function_to_csv(rep.z)),
        ("state.csv", function_to_csv(rep.u)),
        ("adjoint.csv", function_to_csv(rep.phi)),
    ]
    return report, files, None, rep.converged


def _run_check_gradient(config: RunConfig, seed: int):
    problem_cfg = config.problem
    check = config.check
    grid = build_grid(problem_cfg.grid)
    op = build_operator(grid, problem_cfg.operator)
    nl = build_nonlinearity(grid, problem_cfg.nonlinearity)
    mu = require(problem_cfg.mu, "problem.mu", "check-gradient")
    u_d = build_field(grid, require(problem_cfg.u_d, "problem.u_d", "check-gradient"),
                      "problem.u_d")
    z = build_field(grid, problem_cfg.z, "problem.z") if problem_cfg.z is not None \
        else grid.function(0.0)
    if check.direction is not None:
        zeta = build_field(grid, check.direction, "check.direction")
    else:
        # smooth low-mode default; amplitude keeps FD truncation above roundoff
        zeta = build_field(grid, FieldConfig(type="sine", amplitude=10.0),
                           "check.direction")
    rows = gradient_fd_table(op, nl, z, u_d, mu, zeta, steps=tuple(check.fd_steps),
                             state_tol=config.solver.state_tol)
    lo, hi = check.order_band
    passed = rows[-1]["rel_error"] <= check.max_rel_error
    if len(rows) >= 2 and "observed_order" in rows[-1]:
        passed = passed and lo <= rows[-1]["observed_order"] <= hi
    report = {
        "backend": op.backend, "s": op.s, "n": grid.n,
        "gradient": {"rows": rows, "max_rel_error": check.max_rel_error,
                     "order_band": [lo, hi]},
    }
    if nl.differentiability_order >= 2:
        hrows = hessian_fd_table(op, nl, z, u_d, mu, zeta,
                                 steps=tuple(check.hess_steps),
                                 state_tol=config.solver.state_tol)
        ctx = SensitivityContext(op, nl, z, u_d, mu, state_tol=config.solver.state_tol)
        rng = np.random.default_rng(seed)
        sym = 0.0
        for _ in range(3):
            v1 = GridFunction(grid, rng.standard_normal(grid.size))
            v2 = GridFunction(grid, rng.standard_normal(grid.size))
            a = inner(hessian_vec(ctx, v1), v2)
            b = inner(hessian_vec(ctx, v2), v1)
            sym = max(sym, abs(a - b) / max(1.0, abs(a)))
        hlo, hhi = check.hess_order_band
        horder = hrows[1].get("observed_order") if len(hrows) >= 2 else None
        hess_ok = sym <= check.oracle_tol and horder is not None \
            and hlo <= horder <= hhi
        passed = passed and hess_ok
        report["hessian"] = {"rows": hrows, "symmetry_defect": sym,
                             "order_band": [hlo, hhi]}
    report["passed"] = passed
    files = [("convergence.csv",
              convergence_to_csv(rows, ["h", "rel_error", "observed_order"]))]
    return report, files, passed, None


def _run_check_kkt(config: RunConfig, seed: int):
    problem, rep = _solve_control_problem(config, seed)
    check = config.check
    diag = first_order_residual(problem, rep.z, n_directions=check.n_directions,
                                seed=seed, sign_threshold=check.sign_threshold)
    passed = rep.converged and diag["residual_linf"] <= check.kkt_tol \
        and diag["sign_pattern_ok"]
    report = {
        "solve": _solve_summary(rep),
        "kkt": diag,
        "kkt_tol": check.kkt_tol,
        "passed": passed,
    }
    return report, [], passed, rep.converged


def _run_check_ssc(config: RunConfig, seed: int):
    problem, rep = _solve_control_problem(config, seed)
    check = config.check
    probe = ssc_probe(problem, rep.z, tau=check.tau, iters=check.iters, seed=seed)
    passed = bool(probe.get("empty_cone")) or probe["delta_est"] > 0.0
    report = {"solve": _solve_summary(rep), "ssc": probe, "passed": passed}
    return report, [], passed, rep.converged


def _run_check_growth_quadratic(config: RunConfig, seed: int):
    problem, rep = _solve_control_problem(config, seed)
    check = config.check
    beta = check.beta
    report = {"solve": _solve_summary(rep)}
    if beta is None:
        probe = ssc_probe(problem, rep.z, tau=check.tau, iters=check.iters,
                          seed=seed)
        report["ssc"] = probe
        if probe.get("empty_cone"):
            raise ConfigError("check.beta: required when the strongly active "
                              "set covers every node (empty cone)")
        beta = probe["delta_est"] / 4.0
    sample = quadratic_growth_sample(problem, rep.z, rho=check.rho, beta=beta,
                                     n_samples=check.n_samples, seed=seed,
                                     tau=check.tau)
    passed = sample["violations"] == 0
    report["growth"] = sample
    report["passed"] = passed
    return report, [], passed, rep.converged


def _run_check_growth_condition(config: RunConfig, seed: int):
    problem_cfg = config.problem
    check = config.check
    grid = build_grid(problem_cfg.grid)
    nl = build_nonlinearity(grid, problem_cfg.nonlinearity)
    if not isinstance(nl, PowerLaw):
        raise ConfigError("problem.nonlinearity: check-growth-condition needs "
                          "a power_law nonlinearity")
    c = check.c if check.c is not None else nl.growth_c
    growth = check_growth(nl, grid, c, sample_count=check.sample_count,
                          m_range=check.m_range, seed=seed)
    mono = check_monotone_odd(nl, grid, sample_count=check.sample_count,
                              m_range=check.m_range, seed=seed)
    d2 = check_delta2(nl, grid, sample_count=check.sample_count,
                      m_range=check.m_range, seed=seed)
    report = {
        "q": nl.q,
        "c": c,
        "growth": growth.to_dict(),
        "monotone_odd": mono.to_dict(),
        "delta2": d2.to_dict(),
        "passed": growth.passed,
    }
    return report, [], growth.passed, None


def _run_convergence_study(config: RunConfig, seed: int):
    check = config.check
    study = require(check.study, "check.study", "convergence-study")
    problem_cfg = config.problem
    op_cfg = problem_cfg.operator
    grid_cfg = problem_cfg.grid
    ns = list(check.ns)
    if study == "getoor":
        if op_cfg.backend != "integral":
            raise ConfigError("problem.operator.backend: getoor study needs "
                              "the integral backend")
        if grid_cfg.kind != "interval" or grid_cfg.bounds != [-1.0, 1.0]:
            raise ConfigError("problem.grid: getoor study needs interval "
                              "bounds [-1, 1]")
        s = op_cfg.s
        const = getoor_constant(s)
        hs, errors = [], []
        for n in ns:
            grid = Grid(interval(-1.0, 1.0), n)
            op = build_operator(grid, op_cfg)
            x = grid.coords()
            u = grid.function(np.maximum(1.0 - x**2, 0.0) ** s)
            out = op.apply(u)
            center = np.abs(x) <= 0.5
            err = float(np.max(np.abs(out.values[center] - const)) / const)
            hs.append(grid.h[0])
            errors.append(err)
        rows = _convergence_rows(ns, hs, errors)
        decreasing = all(b < a for a, b in zip(errors, errors[1:]))
        passed = decreasing and errors[-1] <= check.getoor_tol
        report = {
            "study": "getoor", "s": s, "constant": const,
            "rows": rows, "monotone_decreasing": decreasing,
            "tolerance": check.getoor_tol, "passed": passed,
        }
    else:  # state-sine: spectral linear solve against the continuum mode
        if op_cfg.backend != "spectral":
            raise ConfigError("problem.operator.backend: state-sine study "
                              "needs the spectral backend")
        if problem_cfg.nonlinearity.type != "zero":
            raise ConfigError("problem.nonlinearity: state-sine study needs "
                              "the zero nonlinearity (closed-form solution)")
        s = op_cfg.s
        a_coeff = op_cfg.coefficient if op_cfg.coefficient is not None else 1.0
        k = check.mode
        hs, errors = [], []
        for n in ns:
            grid = build_grid(grid_cfg.model_copy(update={"n": n}))
            op = build_operator(grid, op_cfg)
            nl = build_nonlinearity(grid, problem_cfg.nonlinearity)
            lam_cont = 1.0
            vals = np.ones(grid.size)
            coords = grid.coords()
            if grid.dimension == 1:
                coords = coords.reshape(-1, 1)
            for axis in range(grid.dimension):
                (a, b) = grid.domain.bounds[axis]
                lam_axis = (k * math.pi / (b - a)) ** 2
                vals = vals * np.sin(k * math.pi * (coords[:, axis] - a) / (b - a))
                lam_cont = lam_axis if axis == 0 else lam_cont + lam_axis
            lam_cont = a_coeff * lam_cont
            z = GridFunction(grid, vals)
            u_exact = vals * lam_cont ** (-s)
            rep = solve_state(op, nl, z, tol=config.solver.state_tol,
                              max_newton=config.solver.max_newton)
            err = float(np.max(np.abs(rep.u.values - u_exact)))
            hs.append(max(grid.h))
            errors.append(err)
        rows = _convergence_rows(ns, hs, errors)
        lo, hi = check.order_band
        orders = [r["observed_order"] for r in rows if "observed_order" in r]
        passed = bool(orders) and lo <= orders[-1] <= hi
        report = {
            "study": "state-sine", "s": s, "mode": k,
            "rows": rows, "order_band": [lo, hi], "passed": passed,
        }
    files = [("convergence.csv",
              convergence_to_csv(rows, ["n", "h", "error", "observed_order"]))]
    return report, files, passed, None


def _run_operator_oracle(config: RunConfig, seed: int):
    problem_cfg = config.problem
    check = config.check
    grid = build_grid(problem_cfg.grid)
    op = build_operator(grid, problem_cfg.operator)
    rng = np.random.default_rng(seed)
    if op.backend in ("analytic-sine", "dense-eig"):
        lam = op.eigenvalues
        phi = op.eigenvectors
        s = op.s
        worst = 0.0
        for col in range(grid.size):
            mode = GridFunction(grid, phi[:, col])
            out = apply_power(op, mode, s)
            defect = np.max(np.abs(out.values - lam[col] ** s * phi[:, col]))
            worst = max(worst, float(defect / lam[col] ** s))
        u = GridFunction(grid, rng.standard_normal(grid.size))
        half = apply_power(op, apply_power(op, u, s / 2), s / 2)
        full = apply_power(op, u, s)
        semigroup = float(np.max(np.abs(half.values - full.values))
                          / np.max(np.abs(full.values)))
        back = apply_power(op, full, -s)
        inverse = float(np.max(np.abs(back.values - u.values))
                        / np.max(np.abs(u.values)))
        passed = max(worst, semigroup, inverse) <= check.oracle_tol
        report = {
            "backend": op.backend, "s": s, "n": grid.n,
            "eigen_defect": worst, "semigroup_defect": semigroup,
            "inverse_defect": inverse, "tolerance": check.oracle_tol,
            "passed": passed,
        }
    else:
        if problem_cfg.grid.kind != "interval" or problem_cfg.grid.bounds != [-1.0, 1.0]:
            raise ConfigError("problem.grid: the integral-backend oracle needs "
                              "interval bounds [-1, 1]")
        s = op.s
        const = getoor_constant(s)
        x = grid.coords()
        u = grid.function(np.maximum(1.0 - x**2, 0.0) ** s)
        out = op.apply(u)
        center = np.abs(x) <= 0.5
        err = float(np.max(np.abs(out.values[center] - const)) / const)
        passed = err <= check.getoor_tol
        report = {
            "backend": op.backend, "s": s, "n": grid.n,
            "constant": const, "rel_error": err,
            "tolerance": check.getoor_tol, "passed": passed,
        }
    return report, [], passed, None


_RUNNERS = {
    "solve-state": _run_solve_state,
    "solve-control": _run_solve_control,
    "check-gradient": _run_check_gradient,
    "check-kkt": _run_check_kkt,
    "check-ssc": _run_check_ssc,
    "check-growth-quadratic": _run_check_growth_quadratic,
    "check-growth-condition": _run_check_growth_condition,
    "convergence-study": _run_convergence_study,
    "operator-oracle": _run_operator_oracle,
}


def run_experiment(config: RunConfig, seed: int | None = None,
                   assert_checks: bool = False) -> ExperimentResult:
    """Execute the configured experiment deterministically.

    seed overrides config.seed when given. With assert_checks, a check
    experiment whose 'passed' flag is false exits 4; solver non-convergence
    exits 2 either way.
    """
    effective_seed = config.seed if seed is None else seed
    runner = _RUNNERS[config.experiment]
    try:
        body, files, passed, converged = runner(config, effective_seed)
    except StateSolveError as exc:
        report = {"experiment": config.experiment, "seed": effective_seed,
                  "converged": False, "error": str(exc)}
        return ExperimentResult(2, report,
                                [("report.json", report_to_json(report))])
    report = {"experiment": config.experiment, "seed": effective_seed}
    report.update(body)
    if files:
        report["files"] = [name for name, _ in files]
    exit_code = 0
    if converged is False:
        exit_code = 2
    elif assert_checks and passed is False:
        exit_code = 4
    out_files = [("report.json", report_to_json(report))] + files
    return ExperimentResult(exit_code, report, out_files)
