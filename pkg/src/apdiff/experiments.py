"""Experiment runners: convergence, angle sweep, nonlinear iteration, eps limit.

Each study produces an :class:`ExperimentReport` holding per-run rows (one
CSV schema for all experiments), derived log-log slope fits, and a summary
with pass/fail checks against configurable thresholds.  Error norms are
always taken over interior nodes only; ghost values never enter a reported
number.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .apcore import solve_linear_ap
from .grid import INTERIOR, NodeField, make_grid, sample_node
from .gummel import StopRule, error_plateau_check, gummel_solve
from .linsolve import SolverConfig
from .naive import conditioning_sweep
from .problems import case_angle, case_ap_limit, case_linear_variable, case_nonlinear

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "rel_error",
    "fit_loglog_slope",
    "convergence_study",
    "angle_sweep",
    "gummel_study",
    "epsilon_limit_study",
    "conditioning_study",
    "unit_square_grid",
]

ROW_FIELDS = [
    "case", "N_x", "N_y", "h", "eps", "alpha", "norm", "error",
    "iterations", "residual_h", "residual_L", "residual_l",
    "cond_estimate", "runtime_ms",
]

HISTORY_FIELDS = ["N", "correction_rel", "error_rel_l2", "residual_h", "residual_L", "residual_l"]


def unit_square_grid(cells: int):
    """Grid of ``cells x cells`` squares over the benchmark domain [1,2]^2."""
    return make_grid(((1.0, 2.0), (1.0, 2.0)), cells - 1, cells - 1)


def rel_error(exact: NodeField, app: NodeField, norm) -> float:
    """Relative error over interior nodes in the 1, 2 or inf norm."""
    if exact.grid is not app.grid and exact.grid != app.grid:
        raise ValueError("fields live on different grids")
    diff = (exact.values[INTERIOR] - app.values[INTERIOR]).ravel()
    ref = exact.values[INTERIOR].ravel()
    ordm = {1: 1, 2: 2, "inf": np.inf, np.inf: np.inf}[norm]
    denom = float(np.linalg.norm(ref, ordm))
    if denom == 0.0:
        raise ValueError("exact field has zero norm; relative error undefined")
    return float(np.linalg.norm(diff, ordm)) / denom


def fit_loglog_slope(xs, ys) -> float:
    """Ordinary least-squares slope of log(y) against log(x)."""
    xs = np.log(np.asarray(xs, dtype=float))
    ys = np.log(np.asarray(ys, dtype=float))
    if xs.size < 2:
        raise ValueError("need at least two points for a slope fit")
    return float(np.polyfit(xs, ys, 1)[0])


@dataclass
class ExperimentConfig:
    case: str = "linear-variable"
    meshes: list = field(default_factory=lambda: [25, 50, 100, 200])  # cells per side
    eps_list: list = field(default_factory=lambda: [1e-1, 1e-9, 0.0])
    alphas: list = field(default_factory=lambda: list(np.linspace(0.0, np.pi / 2, 19)))
    eta: float = 0.1
    mu: float = 60.0
    tol_rel: float = 1e-12
    n_max: int = 30
    solver: SolverConfig = field(default_factory=SolverConfig)
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        solver = data.pop("solver", None)
        cfg = cls(**data)
        if solver is not None:
            cfg.solver = SolverConfig(**solver)
        return cfg


@dataclass
class ExperimentReport:
    experiment: str
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)  # dicts: name, value, limit, passed
    histories: dict = field(default_factory=dict)  # label -> iteration records
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def add_check(self, name: str, value, limit_descr: str, passed: bool) -> None:
        self.checks.append(
            {"name": name, "value": value, "limit": limit_descr, "passed": bool(passed)}
        )

    def sorted_rows(self) -> list:
        def key(r):
            return (r["case"], r["N_x"], r["eps"], r["alpha"], str(r["norm"]))

        return sorted(self.rows, key=key)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
            w.writeheader()
            for row in self.sorted_rows():
                w.writerow({k: row.get(k, "") for k in ROW_FIELDS})

    def write_history_csv(self, label: str, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_FIELDS)
            for rec in self.histories[label]:
                w.writerow([rec.n, repr(rec.correction_rel), repr(rec.error_rel_l2),
                            repr(rec.residual_h), repr(rec.residual_L), repr(rec.residual_l)])

    def write_summary(self, path) -> None:
        payload = {
            "experiment": self.experiment,
            "passed": self.passed,
            "checks": self.checks,
            "slopes": self.slopes,
            "extras": self.extras,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, default=float)

    def write_outputs(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.write_csv(out / f"{self.experiment}.csv")
        for label in self.histories:
            self.write_history_csv(label, out / f"{self.experiment}-history-{label}.csv")
        if "sweep" in self.extras:
            with open(out / f"{self.experiment}-sweep.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["eps", "cond_estimate", "solve_residual", "status"])
                for entry in self.extras["sweep"]:
                    w.writerow([repr(entry["eps"]), repr(entry["cond_estimate"]),
                                repr(entry["solve_residual"]), entry["status"]])
        self.write_summary(out / f"{self.experiment}-summary.json")


def _base_row(case: str, grid, eps: float, alpha=np.nan) -> dict:
    return {
        "case": case, "N_x": grid.nx, "N_y": grid.ny, "h": grid.h,
        "eps": eps, "alpha": alpha, "norm": "", "error": np.nan,
        "iterations": 0, "residual_h": np.nan, "residual_L": np.nan,
        "residual_l": np.nan, "cond_estimate": np.nan, "runtime_ms": np.nan,
    }


def convergence_study(config: ExperimentConfig | None = None) -> ExperimentReport:
    """Error decay under mesh refinement, for several anisotropy strengths.

    Also records the along-direction gradient of the reconstructed mean part
    (the kernel property diagnostic) per run.
    """
    config = config or ExperimentConfig()
    report = ExperimentReport("convergence")
    errors: dict = {}
    for cells in config.meshes:
        grid = unit_square_grid(cells)
        for eps in config.eps_list:
            case = case_linear_variable(grid, eps)
            t0 = time.perf_counter()
            try:
                dec = solve_linear_ap(case.problem, config.solver)
            except Exception as exc:
                row = _base_row(case.name, grid, eps)
                row.update(norm="failed", error=np.nan)
                row["status"] = str(exc)
                report.rows.append(row)
                continue
            ms = 1e3 * (time.perf_counter() - t0)
            exact = case.exact_field()
            for norm in (2, "inf"):
                row = _base_row(case.name, grid, eps)
                row.update(
                    norm=norm,
                    error=rel_error(exact, dec.p, norm),
                    residual_h=dec.residuals["h"],
                    residual_L=dec.residuals["L"],
                    residual_l=dec.residuals["l"],
                    runtime_ms=ms,
                )
                report.rows.append(row)
                errors[(eps, norm, cells)] = row["error"]
            report.extras.setdefault("mean_gradient_l2", {})[f"{cells}:{eps}"] = dec.mean_gradient_l2

    for eps in config.eps_list:
        for norm in (2, "inf"):
            pairs = [
                (unit_square_grid(c).h, errors[(eps, norm, c)])
                for c in config.meshes
                if (eps, norm, c) in errors
            ]
            if len(pairs) >= 3:
                report.slopes[f"eps={eps}:l{norm}"] = fit_loglog_slope(*zip(*pairs))

    lo, hi = config.thresholds.get("slope_range", (1.8, 2.2))
    for key, slope in report.slopes.items():
        report.add_check(f"slope {key}", slope, f"[{lo}, {hi}]", lo <= slope <= hi)
    spread_tol = config.thresholds.get("eps_spread", 0.10)
    for cells in config.meshes:
        for norm in (2, "inf"):
            vals = [errors[(eps, norm, cells)] for eps in config.eps_list if (eps, norm, cells) in errors]
            if len(vals) >= 2:
                spread = (max(vals) - min(vals)) / max(vals)
                report.add_check(
                    f"eps spread M{cells} l{norm}", spread, f"< {spread_tol}", spread < spread_tol
                )
    kernel_tol = config.thresholds.get("mean_gradient", 1e-9)
    worst = max(report.extras.get("mean_gradient_l2", {0: 0.0}).values())
    report.add_check("mean-part gradient ratio", worst, f"<= {kernel_tol}", worst <= kernel_tol)
    return report


def angle_sweep(config: ExperimentConfig | None = None) -> ExperimentReport:
    """Accuracy as a function of the anisotropy angle on a fixed mesh."""
    if config is None:
        config = ExperimentConfig(case="angle", meshes=[200], eps_list=[1e-3, 1e-8])
    report = ExperimentReport("angle")
    cells = config.meshes[0]
    grid = unit_square_grid(cells)
    per_norm: dict = {}
    for eps in config.eps_list:
        for alpha in config.alphas:
            case = case_angle(grid, eps, alpha)
            t0 = time.perf_counter()
            dec = solve_linear_ap(case.problem, config.solver)
            ms = 1e3 * (time.perf_counter() - t0)
            exact = case.exact_field()
            for norm in (1, 2, "inf"):
                row = _base_row(case.name, grid, eps, alpha)
                row.update(
                    norm=norm,
                    error=rel_error(exact, dec.p, norm),
                    residual_h=dec.residuals["h"],
                    residual_L=dec.residuals["L"],
                    residual_l=dec.residuals["l"],
                    runtime_ms=ms,
                )
                report.rows.append(row)
                per_norm.setdefault((eps, norm), []).append(row["error"])

    var_12 = config.thresholds.get("variation_l1_l2", 0.06)
    var_inf = config.thresholds.get("variation_linf", 0.10)
    for (eps, norm), errs in per_norm.items():
        variation = max(errs) / min(errs) - 1.0
        report.extras.setdefault("variation", {})[f"eps={eps}:l{norm}"] = variation
        limit = var_inf if norm == "inf" else var_12
        report.add_check(
            f"angle variation eps={eps} l{norm}", variation, f"<= {limit}", variation <= limit
        )
    return report


def gummel_study(config: ExperimentConfig | None = None) -> ExperimentReport:
    """Nonlinear-iteration behavior: convergence speed, plateau, error table."""
    if config is None:
        config = ExperimentConfig(case="nonlinear-spline", meshes=[100, 200],
                                  eps_list=[1e-1, 1e-12, 0.0])
    report = ExperimentReport("gummel")
    stop = StopRule(tol_rel=config.tol_rel, n_max=config.n_max)
    max_iters = config.thresholds.get("max_iterations", 6)
    plateau_tol = config.thresholds.get("plateau_change", 0.01)
    for cells in config.meshes:
        grid = unit_square_grid(cells)
        for eps in config.eps_list:
            case = case_nonlinear(grid, eps, eta=config.eta, mu=config.mu)
            exact = case.exact_field()
            p0 = sample_node(case.initial_guess, grid)
            t0 = time.perf_counter()
            p, state = gummel_solve(case.problem, p0, stop, config.solver, exact=exact)
            ms = 1e3 * (time.perf_counter() - t0)
            label = f"M{cells}-eps{eps:g}"
            report.histories[label] = state.history
            last = state.history[-1] if state.history else None
            for norm in (1, 2, "inf"):
                row = _base_row(case.name, grid, eps)
                row.update(
                    norm=norm,
                    error=rel_error(exact, p, norm) if state.status == "converged" else np.nan,
                    iterations=state.n_iterations,
                    residual_h=last.residual_h if last else np.nan,
                    residual_L=last.residual_L if last else np.nan,
                    residual_l=last.residual_l if last else np.nan,
                    runtime_ms=ms,
                )
                row["status"] = state.status
                report.rows.append(row)
            report.add_check(
                f"converged M{cells} eps={eps:g}",
                state.status,
                "converged",
                state.status == "converged",
            )
            report.add_check(
                f"iterations M{cells} eps={eps:g}",
                state.n_iterations,
                f"<= {max_iters}",
                state.status == "converged" and state.n_iterations <= max_iters,
            )
            plateau = error_plateau_check(state.history, plateau_tol)
            report.add_check(
                f"error plateau M{cells} eps={eps:g}",
                plateau.max_rel_change,
                f"<= {plateau_tol}",
                plateau.ok,
            )
    return report


def epsilon_limit_study(config: ExperimentConfig | None = None) -> ExperimentReport:
    """Distance of the computed solution to the exact limit as eps -> 0.

    Two regimes: a linear-in-eps decay while the eps-part dominates, then a
    plateau at the discretization error of the limit solution, which shrinks
    quadratically with the mesh step.
    """
    if config is None:
        config = ExperimentConfig(
            case="ap-limit",
            meshes=[100, 200],
            eps_list=sorted(np.logspace(-8, -1, 8)) + [0.0],
        )
    report = ExperimentReport("eps-limit")
    stop = StopRule(tol_rel=config.tol_rel, n_max=config.n_max)
    plateau_by_mesh = {}
    for cells in config.meshes:
        grid = unit_square_grid(cells)
        base = case_ap_limit(grid, 0.0, eta=config.eta, mu=config.mu)
        limit_field = sample_node(base.limit_exact, grid)
        limit_norm = float(np.linalg.norm(limit_field.values[INTERIOR]))
        solutions = {}
        for eps in sorted(config.eps_list):
            case = case_ap_limit(grid, eps, eta=config.eta, mu=config.mu)
            p0 = sample_node(case.initial_guess, grid)
            t0 = time.perf_counter()
            p, state = gummel_solve(case.problem, p0, stop, config.solver)
            ms = 1e3 * (time.perf_counter() - t0)
            solutions[eps] = p
            err_limit = float(
                np.linalg.norm(p.values[INTERIOR] - limit_field.values[INTERIOR])
            ) / limit_norm
            row = _base_row(case.name, grid, eps)
            row.update(norm="E_eps", error=err_limit, iterations=state.n_iterations, runtime_ms=ms)
            row["status"] = state.status
            report.rows.append(row)

        p0_app = solutions[0.0]
        e0 = float(
            np.linalg.norm(p0_app.values[INTERIOR] - limit_field.values[INTERIOR])
        ) / limit_norm
        plateau_by_mesh[cells] = e0
        report.extras.setdefault("e0", {})[str(cells)] = e0
        eps_pos, eapp = [], []
        for eps in sorted(e for e in config.eps_list if e > 0):
            diff = float(
                np.linalg.norm(solutions[eps].values[INTERIOR] - p0_app.values[INTERIOR])
            ) / limit_norm
            row = _base_row("ap-limit", grid, eps)
            row.update(norm="E_eps_app", error=diff)
            report.rows.append(row)
            eps_pos.append(eps)
            eapp.append(diff)

        floor = 100.0 * max(e0 * 1e-9, 1e-13)
        fit_eps = [e for e, d in zip(eps_pos, eapp) if d > floor]
        fit_val = [d for d in eapp if d > floor]
        if len(fit_eps) >= 3:
            slope = fit_loglog_slope(fit_eps, fit_val)
            report.slopes[f"M{cells}:E_eps_app"] = slope
            lo, hi = config.thresholds.get("eps_slope_range", (0.8, 1.2))
            report.add_check(f"eps slope M{cells}", slope, f"[{lo}, {hi}]", lo <= slope <= hi)

        err_small = [
            r["error"] for r in report.rows
            if r["norm"] == "E_eps" and r["N_x"] == grid.nx and 0 < r["eps"] <= min(e for e in config.eps_list if e > 0)
        ]
        if err_small:
            drift = abs(err_small[0] - e0) / e0
            tol = config.thresholds.get("plateau_match", 0.05)
            report.add_check(f"plateau matches e0 M{cells}", drift, f"<= {tol}", drift <= tol)

    if len(config.meshes) >= 2:
        c1, c2 = sorted(config.meshes)[-2:]
        ratio = plateau_by_mesh[c1] / plateau_by_mesh[c2]
        expected = (c2 / c1) ** 2
        lo, hi = expected / 2.0, expected * 2.0
        report.add_check(
            f"plateau mesh scaling M{c1}/M{c2}", ratio, f"[{lo:.3g}, {hi:.3g}]", lo <= ratio <= hi
        )
    return report


def conditioning_study(config: ExperimentConfig | None = None) -> ExperimentReport:
    """Condition growth of the direct discretization as eps decreases."""
    if config is None:
        config = ExperimentConfig(case="linear-variable", meshes=[50], eps_list=[1.0, 1e-3, 1e-6])
    report = ExperimentReport("conditioning")
    grid = unit_square_grid(config.meshes[0])
    sweep = conditioning_sweep(config.case, sorted(config.eps_list, reverse=True), grid,
                               config.solver)
    conds = []
    for entry in sweep:
        row = _base_row(config.case, grid, entry["eps"])
        row.update(norm="cond", error=np.nan, cond_estimate=entry["cond_estimate"],
                   runtime_ms=entry["runtime_ms"])
        row["status"] = entry["status"]
        row["residual_h"] = entry["solve_residual"]
        report.rows.append(row)
        conds.append(entry["cond_estimate"])
    report.extras["sweep"] = sweep

    increasing = all(a < b or not np.isfinite(b) for a, b in zip(conds, conds[1:]))
    report.add_check("condition growth as eps decreases", conds, "monotone", increasing)
    if np.isfinite(conds[0]) and len(conds) >= 2:
        ratio = conds[-1] / conds[0] if np.isfinite(conds[-1]) else np.inf
        min_ratio = config.thresholds.get("blowup_ratio", 1e3)
        report.add_check("blow-up ratio", ratio, f">= {min_ratio:g}", ratio >= min_ratio)
    return report
