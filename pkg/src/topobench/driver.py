"""Shared iteration loop: solve, record criteria, test convergence, update.

Every optimiser supplies a small stepper object; the loop owns the history,
the per-step tolerance schedule and the failure handling, so criteria are
computed identically for all methods.
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Protocol, Sequence

import numpy as np

from .convergence import evaluate, objective_criterion, tolerance_schedule, topology_criterion
from .fem import SolveResult, SolverError, StateSolver
from .problem import MethodConfig, ProblemSpec, RunRecord
from .sensitivity import objective

log = logging.getLogger(__name__)


class Stepper(Protocol):
    topology_mode: str
    lam: float

    def scale(self) -> np.ndarray: ...
    def design(self) -> np.ndarray: ...
    def volume_fraction(self) -> float: ...
    def ready(self) -> bool: ...
    def begin_step(self, j: int, target: float) -> None: ...
    def update(self, sol: SolveResult, target: float) -> None: ...


def make_solver(problem: ProblemSpec, rel_tol: float = 1e-8, method: str = "auto") -> StateSolver:
    return StateSolver(problem.grid, problem.masks.fixed_dofs, problem.springs,
                       problem.material, rel_tol=rel_tol, method=method)


def full_solid_scale(problem: ProblemSpec) -> np.ndarray:
    scale = np.ones(problem.grid.elem_count)
    scale[problem.masks.passive_void] = problem.material.alpha
    return scale


def design_fraction(values: np.ndarray, problem: ProblemSpec) -> float:
    """Mean of an element field over the design domain (uniform elements)."""
    return float(np.mean(np.asarray(values)[problem.design_mask]))


def optimize(problem: ProblemSpec, cfg: MethodConfig, stepper: Stepper,
             targets: Sequence[float], solver: StateSolver | None = None,
             callback: Callable[[int, np.ndarray], None] | None = None) -> RunRecord:
    """Run the time-step loop over ``targets`` (one stiff-fraction target per step).

    Row 0 is a full-solid reference solve. Each later row records the design
    that was just analysed; the update is applied only if that design fails
    the convergence test.
    """
    grid = problem.grid
    conv = cfg.convergence
    record = RunRecord(method=cfg.method, case=problem.name)
    solver = solver or make_solver(problem)
    loads = problem.loads
    n_steps = len(targets)
    try:
        sol0 = solver.solve(full_solid_scale(problem), loads)
        record.append(it=0, step=0, J=objective(problem.kind, sol0, loads), vol=1.0,
                      dJ=math.nan, dtopo=math.nan, lam=math.nan)
        if record.J0 == 0 or not math.isfinite(record.J0):
            raise RuntimeError(f"degenerate reference objective J0={record.J0}")
        it = 0
        prev = None
        for j, target in enumerate(targets, start=1):
            stepper.begin_step(j, target)
            tol_J = None if conv.tol_J is None else tolerance_schedule(j, n_steps, conv.tol_J)
            tol_T = tolerance_schedule(j, n_steps, conv.tol_topology)
            J_step: list[float] = []
            done = False
            while it < conv.max_iter:
                it += 1
                sol = solver.solve(stepper.scale(), loads)
                J = objective(problem.kind, sol, loads)
                if not math.isfinite(J):
                    raise RuntimeError(f"non-finite objective at iteration {it}")
                design = stepper.design()
                if callback is not None:
                    callback(it, design)
                ready = stepper.ready()
                if ready:
                    J_step.append(J)
                dJ = objective_criterion(J_step, conv.window, record.J0) if ready else math.nan
                dtopo = (math.nan if prev is None else
                         topology_criterion(prev, design, grid, stepper.topology_mode,
                                            tau=conv.tau_criterion))
                vol = stepper.volume_fraction()
                record.append(it=it, step=j if ready else 0, J=J, vol=vol, dJ=dJ,
                              dtopo=dtopo, lam=stepper.lam)
                prev = design
                if ready and evaluate(vol - target, dJ, dtopo, conv.tol_volume, tol_J, tol_T):
                    done = True
                    break
                stepper.update(sol, target)
            record.step_converged.append(done)
            if not done:
                record.message = f"iteration cap {conv.max_iter} reached in step {j}"
                log.warning("%s: %s", cfg.method, record.message)
                break
        record.converged = len(record.step_converged) == n_steps and all(record.step_converged)
    except (SolverError, RuntimeError, FloatingPointError) as exc:
        record.message = f"aborted: {exc}"
        record.converged = False
        log.error("%s: %s", cfg.method, record.message)
    record.design = stepper.design()
    record.nodal = getattr(stepper, "nodal", None)
    record.stiff_fraction = getattr(stepper, "stiff_fraction", None)
    return record
