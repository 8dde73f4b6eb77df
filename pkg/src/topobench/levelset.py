"""Level-set optimiser: explicit Hamilton-Jacobi steps on a clipped nodal field.

The velocity is the shifted and normalised pseudo-energy shared with
VARTOP; the volume constraint is driven by an augmented Lagrangian and only
checked, not enforced, at each iteration.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .driver import optimize
from .filters import element_to_nodes, laplacian_regularize
from .grid import Grid
from .problem import MethodConfig, ProblemSpec, RunRecord
from .sensitivity import ShiftNorm, vartop_pseudo_energy
from .vartop import VartopStepper, _apply_masks, element_stiff_fractions, vartop_targets

# multipliers act on volume fractions, so the domain measure is normalised to one
OMEGA_NORMALISED = 1.0


@dataclass
class Multiplier:
    """Augmented-Lagrangian multiplier with the update lam <- lam + s * C0."""

    lam: float = 0.0
    s: float = 1e-4

    def shifted(self, C0: float) -> float:
        return self.lam + self.s * C0

    def advance(self, C0: float) -> float:
        self.lam = self.shifted(C0)
        return self.lam


def hj_update(phi: np.ndarray, sens_nodal: np.ndarray, lam: float, s: float, C0: float,
              dt: float, kappa: float = 1.0, tau: float = 0.0, grid: Grid | None = None,
              omega: float = OMEGA_NORMALISED) -> np.ndarray:
    """phi' = clip(phi + dt kappa (sens - (lam + s C0) / |Omega|), -1, 1), then regularised.

    With ``tau > 0`` the clipped field is smoothed by the screened Laplacian
    solve and clipped again so the bounds hold on return.
    """
    phi = np.asarray(phi, float)
    step = dt * kappa * (np.asarray(sens_nodal, float) - (lam + s * C0) / omega)
    out = np.clip(phi + step, -1.0, 1.0)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite level-set update")
    if tau > 0:
        if grid is None:
            raise ValueError("regularisation needs the grid")
        out = np.clip(laplacian_regularize(out, tau, grid), -1.0, 1.0)
    return out


class LevelsetStepper(VartopStepper):
    def __init__(self, problem: ProblemSpec, cfg: MethodConfig, volume_method: str = "columns"):
        super().__init__(problem, cfg, volume_method)
        self.multiplier = Multiplier(0.0, cfg.s)
        self.lam = 0.0

    def update(self, sol, target):
        pb, cfg = self.problem, self.cfg
        chi = self.chi
        xi = vartop_pseudo_energy(pb.kind, chi, sol, pb.grid, cfg.m, self.beta)
        if self.norm is None:
            self.norm = ShiftNorm.from_initial(xi)
        self.xi_hat = self.norm(xi, chi)
        sens = element_to_nodes(self.xi_hat, pb.grid)
        C0 = self.volume_fraction() - target
        self.nodal = hj_update(self.nodal, sens, self.multiplier.lam, cfg.s, C0, cfg.dt,
                               cfg.kappa, cfg.tau, pb.grid)
        self.lam = self.multiplier.advance(C0)
        self.stiff_fraction = _apply_masks(
            element_stiff_fractions(self.nodal, pb.grid, self.volume_method), pb)


def run_levelset(problem: ProblemSpec, cfg: MethodConfig,
                 callback: Callable[[int, np.ndarray], None] | None = None) -> RunRecord:
    """Single time-step level-set run from a full-solid start (phi = 1)."""
    stepper = LevelsetStepper(problem, cfg)
    targets = vartop_targets(problem, cfg) if cfg.n_steps > 1 else [problem.volume_fraction]
    record = optimize(problem, cfg, stepper, targets, callback=callback)
    if not record.converged and record.vol_frac:
        err = abs(record.vol_frac[-1] - problem.volume_fraction)
        if err > cfg.convergence.tol_volume:
            record.message += f"; volume error {err:.3g} still above tolerance"
    return record
