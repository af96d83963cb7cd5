"""Newton-type linearization loop for the nonlinear reaction term.

The nonlinear problem

    -div( H (b ox b) (grad p - S) / eps ) + g(p) = f

is solved by iterating: linearize g around the current iterate, solve the
resulting linear anisotropic problem for the correction with the
decomposition pipeline, add the correction, refill the ghost ring from the
flux boundary condition.  For a linear reaction law the first correction is
exact, so the loop converges in one iteration up to solver residuals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .apcore import LinearProblem, fill_ghost, solve_linear_ap
from .grid import INTERIOR, CellField, CellVectorField, Grid, NodeField
from .linsolve import SolverConfig
from .operators import OperatorContext, apply_dh

__all__ = [
    "NonlinearProblem",
    "StopRule",
    "GummelState",
    "linearize",
    "gummel_solve",
    "error_plateau_check",
    "PlateauReport",
]

SLOPE_FLOOR = 1e-12  # guards reaction laws whose derivative can vanish


@dataclass
class NonlinearProblem:
    """Nonlinear reaction-diffusion data; ``reaction_law`` must be increasing."""

    grid: Grid
    eps: float
    diffusivity_cell: CellField
    direction: CellVectorField
    source_node: NodeField
    grad_source_cell: CellField
    reaction_law: object  # g : p -> g(p), vectorized
    reaction_slope: object  # g' : p -> g'(p), vectorized

    def __post_init__(self):
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not np.all(self.diffusivity_cell.values > 0.0):
            raise ValueError("diffusivity must be strictly positive")

    def context(self) -> OperatorContext:
        return OperatorContext(self.grid, self.direction)


@dataclass
class StopRule:
    tol_rel: float = 1e-12  # on ||correction||_2 / ||iterate||_2 over interior nodes
    n_max: int = 30

    def __post_init__(self):
        if self.tol_rel <= 0.0:
            raise ValueError("tol_rel must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")


@dataclass
class IterationRecord:
    n: int
    correction_rel: float
    error_rel_l2: float  # nan when no exact solution was supplied
    residual_h: float
    residual_L: float
    residual_l: float
    slope_floored: int  # number of samples where g' fell below the safeguard


@dataclass
class GummelState:
    status: str = "running"  # converged | diverged | max_iterations
    n_iterations: int = 0
    history: list = field(default_factory=list)
    detail: str = ""  # mechanism of a divergence abort, when applicable

    @property
    def corrections(self) -> list:
        return [r.correction_rel for r in self.history]


def _cell_average(values: np.ndarray) -> np.ndarray:
    """Four-point average of node values onto every cell center."""
    return 0.25 * (values[1:, 1:] + values[1:, :-1] + values[:-1, 1:] + values[:-1, :-1])


def linearize(problem: NonlinearProblem, p: NodeField) -> LinearProblem:
    """Linear problem for the correction around the iterate ``p``.

    Reaction coefficient = g'(p) at nodes and at four-point node averages at
    cells, source = f - g(p), gradient offset = b.S - dh(p).  Slopes at or
    below the safeguard floor are clamped with a warning; converged iterates
    in the monotone region are unaffected.
    """
    g = problem.grid
    with np.errstate(over="ignore", invalid="ignore"):
        slope_node = np.asarray(problem.reaction_slope(p.values), dtype=float)
        slope_cell = np.asarray(problem.reaction_slope(_cell_average(p.values)), dtype=float)
        reacted = np.asarray(problem.reaction_law(p.values), dtype=float)

    floored = int(np.sum(slope_node < SLOPE_FLOOR) + np.sum(slope_cell < SLOPE_FLOOR))
    if floored:
        warnings.warn(
            f"reaction slope fell below {SLOPE_FLOOR:g} at {floored} samples; clamped",
            RuntimeWarning,
            stacklevel=2,
        )
        slope_node = np.maximum(slope_node, SLOPE_FLOOR)
        slope_cell = np.maximum(slope_cell, SLOPE_FLOOR)

    grad_iter = apply_dh(p, problem.context())
    lp = LinearProblem(
        grid=g,
        eps=problem.eps,
        reaction_node=NodeField(g, slope_node),
        reaction_cell=CellField(g, slope_cell),
        diffusivity_cell=problem.diffusivity_cell,
        direction=problem.direction,
        source_node=NodeField(g, problem.source_node.values - reacted),
        grad_source_cell=CellField(g, problem.grad_source_cell.values - grad_iter.values),
    )
    lp._slope_floored = floored  # diagnostic, consumed by the driver
    return lp


def gummel_solve(
    problem: NonlinearProblem,
    p0: NodeField,
    stop: StopRule | None = None,
    config: SolverConfig | None = None,
    exact: NodeField | None = None,
):
    """Iterate to the nonlinear solution from the initial guess ``p0``.

    ``p0`` must carry ghost values (sample the guess analytically on the full
    lattice, or pass interior values through :func:`apcore.fill_ghost`).
    Returns ``(p, state)``; a diverging correction (growth above 10x over
    three iterations, or non-finite iterates) aborts with the history kept.
    """
    stop = stop or StopRule()
    config = config or SolverConfig()
    state = GummelState()
    p = p0.copy()
    exact_norm = None
    if exact is not None:
        exact_norm = float(np.linalg.norm(exact.values[INTERIOR]))

    for n in range(stop.n_max):
        lp = linearize(problem, p)
        try:
            dec = solve_linear_ap(lp, config, fill=False)
        except Exception as exc:
            # An iterate whose linearized system is no longer solvable has
            # left the workable basin; report it as divergence, not a crash.
            state.status = "diverged"
            state.detail = f"linearized solve broke down at iteration {n}: {exc}"
            state.n_iterations = n
            return p, state

        delta = dec.p.values[INTERIOR]
        p_new = p.copy()
        p_new.values[INTERIOR] = p.values[INTERIOR] + delta
        norm_new = float(np.linalg.norm(p_new.values[INTERIOR]))
        corr = float(np.linalg.norm(delta)) / max(norm_new, 1e-300)

        if np.isfinite(corr) and np.all(np.isfinite(p_new.values[INTERIOR])):
            p_new, _ = fill_ghost(p_new, _with_original_source(problem))
            p = p_new
        err = np.nan
        if exact is not None and exact_norm:
            err = float(np.linalg.norm(p.values[INTERIOR] - exact.values[INTERIOR])) / exact_norm
        state.history.append(
            IterationRecord(
                n=n,
                correction_rel=corr,
                error_rel_l2=err,
                residual_h=dec.residuals["h"],
                residual_L=dec.residuals["L"],
                residual_l=dec.residuals["l"],
                slope_floored=getattr(lp, "_slope_floored", 0),
            )
        )
        state.n_iterations = n + 1

        if not np.isfinite(corr) or not np.all(np.isfinite(p.values)):
            state.status = "diverged"
            state.detail = f"non-finite iterate at iteration {n}"
            return p, state
        corrs = state.corrections
        if len(corrs) >= 4 and corrs[-1] > 10.0 * corrs[-4]:
            state.status = "diverged"
            state.detail = f"correction grew more than 10x over three iterations at {n}"
            return p, state
        if corr <= stop.tol_rel:
            state.status = "converged"
            return p, state

    state.status = "max_iterations"
    return p, state


def _with_original_source(problem: NonlinearProblem) -> LinearProblem:
    """Wrap the nonlinear data so fill_ghost sees the original b.S."""
    g = problem.grid
    ones_node = NodeField(g, np.ones(g.node_shape))
    ones_cell = CellField(g, np.ones(g.cell_shape))
    return LinearProblem(
        grid=g,
        eps=problem.eps,
        reaction_node=ones_node,
        reaction_cell=ones_cell,
        diffusivity_cell=problem.diffusivity_cell,
        direction=problem.direction,
        source_node=problem.source_node,
        grad_source_cell=problem.grad_source_cell,
    )


@dataclass
class PlateauReport:
    plateau_start: int  # first iteration whose error is within 1% of the final one
    plateau_error: float
    max_rel_change: float  # largest relative error change after the start
    ok: bool


def error_plateau_check(history: list, change_tol: float = 0.01) -> PlateauReport:
    """Verify the error stops improving once the correction bottoms out.

    The plateau value is the discretization error; iterating further must
    not change it by more than ``change_tol`` relative.
    """
    errs = [r.error_rel_l2 for r in history if np.isfinite(r.error_rel_l2)]
    if not errs:
        return PlateauReport(0, np.nan, np.nan, False)
    final = errs[-1]
    start = len(errs) - 1
    for i, e in enumerate(errs):
        if abs(e - final) <= change_tol * final:
            start = i
            break
    tail = errs[start:]
    max_change = max(abs(e - final) / final for e in tail) if final > 0 else 0.0
    return PlateauReport(start, final, max_change, max_change <= change_tol)
