"""SIMP with optimality-criteria updates.

Variants: ``I`` Helmholtz sensitivity filter, ``II`` the same filter with a
decreasing volume schedule, ``III`` the distance-weighted convolution filter.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .convergence import volume_schedule
from .driver import design_fraction, optimize
from .fem import SolveResult
from .filters import convolution_filter, helmholtz_sensitivity_filter
from .problem import MethodConfig, ObjectiveKind, ProblemSpec, RunRecord
from .sensitivity import simp_sensitivity, simp_stiffness

log = logging.getLogger(__name__)

Mode = Literal["compliance", "mechanism"]
VARIANTS = {"I": "simp1", "II": "simp2", "III": "simp3"}
RHO_FLOOR_MECHANISM = 1e-3


def oc_update(rho: np.ndarray, dJ: np.ndarray, dC: np.ndarray | float, lam: float,
              move: float = 0.2, eta: float = 0.5, mode: Mode = "compliance") -> np.ndarray:
    """One optimality-criteria step at multiplier ``lam``.

    rho' = clamp(rho B^eta, max(lo, rho - move), min(1, rho + move)) with
    B = max(0, -dJ) / (lam dC). Mechanism mode floors -dJ at a small
    fraction of max|dJ| and keeps densities above a small positive bound.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    rho = np.asarray(rho, float)
    dJ = np.asarray(dJ, float)
    dC = np.broadcast_to(np.asarray(dC, float), rho.shape)
    if np.any(dC <= 0):
        raise ValueError("volume derivatives must be positive")
    if mode == "compliance":
        num, lo = np.maximum(0.0, -dJ), 0.0
    elif mode == "mechanism":
        eps = 1e-9 * max(float(np.max(np.abs(dJ))), np.finfo(float).tiny)
        num, lo = np.maximum(eps, -dJ), RHO_FLOOR_MECHANISM
    else:
        raise ValueError(f"unknown OC mode {mode!r}")
    B = num / (lam * dC)
    if not np.all(np.isfinite(B)):
        raise FloatingPointError("non-finite OC ratio B_e")
    cand = rho * B ** eta
    return np.clip(cand, np.maximum(lo, rho - move), np.minimum(1.0, rho + move))


@dataclass
class OCResult:
    rho: np.ndarray
    lam: float
    ok: bool
    steps: int


def oc_bisection(rho: np.ndarray, dJ: np.ndarray, dC: np.ndarray | float, target: float,
                 active: np.ndarray | None = None, design: np.ndarray | None = None,
                 move: float = 0.2, eta: float = 0.5, mode: Mode = "compliance",
                 tol_volume: float = 1e-3, max_steps: int = 200) -> OCResult:
    """Bisect lambda (log scale) so the design-domain mean of rho' hits ``target``.

    ``active`` marks elements the update may change; the others keep their
    value. ``design`` marks elements counted in the volume (default: all).
    ``ok`` is False when the move limits or masks make the target unreachable;
    the closest feasible design is returned in that case.
    """
    rho = np.asarray(rho, float)
    active = np.ones(rho.size, bool) if active is None else np.asarray(active, bool)
    design = np.ones(rho.size, bool) if design is None else np.asarray(design, bool)
    dJa = np.asarray(dJ, float)[active]
    dCa = np.broadcast_to(np.asarray(dC, float), rho.shape)[active]

    def trial(lam: float) -> tuple[np.ndarray, float]:
        out = rho.copy()
        out[active] = oc_update(rho[active], dJa, dCa, lam, move, eta, mode)
        return out, float(np.mean(out[design]))

    lo, hi = 1e-9, 1e9
    while trial(lo)[1] < target and lo > 1e-300:
        lo /= 10.0
    while trial(hi)[1] > target and hi < 1e300:
        hi *= 10.0
    steps = 0
    best = None
    for steps in range(1, max_steps + 1):
        mid = math.sqrt(lo * hi)
        out, vol = trial(mid)
        if best is None or abs(vol - target) < abs(best[1] - target):
            best = (out, vol, mid)
        if vol > target:
            lo = mid
        else:
            hi = mid
        if abs(vol - target) <= 1e-10 or hi / lo - 1.0 < 1e-13:
            break
    out, vol, lam = best
    return OCResult(out, lam, abs(vol - target) <= tol_volume, steps)


@dataclass
class SimpStepper:
    """Design state of one SIMP run."""

    problem: ProblemSpec
    cfg: MethodConfig
    variant: str
    rho: np.ndarray = field(init=False)
    lam: float = math.nan
    topology_mode: str = "element"
    flags: int = 0

    def __post_init__(self):
        pb = self.problem
        self.active = pb.active_mask
        self.n_design = int(np.count_nonzero(pb.design_mask))
        self.rho = np.ones(pb.grid.elem_count)
        if self.variant != "II":
            n_ps = pb.masks.passive_solid.size
            n_act = int(np.count_nonzero(self.active))
            if n_act:
                self.rho[self.active] = np.clip((pb.volume_fraction * self.n_design - n_ps) / n_act,
                                                0.0, 1.0)
        self.rho[pb.masks.passive_void] = 0.0
        self.rho[pb.masks.passive_solid] = 1.0
        self.mode = "mechanism" if pb.kind is ObjectiveKind.MECHANISM else "compliance"

    def scale(self):
        return simp_stiffness(self.rho, self.cfg.p, self.problem.material.alpha)

    def design(self):
        return self.rho.copy()

    def volume_fraction(self):
        return design_fraction(self.rho, self.problem)

    def ready(self):
        return True

    def begin_step(self, j, target):
        pass

    def filtered_sensitivity(self, sol: SolveResult) -> np.ndarray:
        pb, cfg = self.problem, self.cfg
        dJ = simp_sensitivity(pb.kind, self.rho, sol, pb.grid, cfg.p, pb.material.alpha)
        if self.variant == "III":
            return convolution_filter(dJ, self.rho, cfg.r_min, pb.grid, mode="simp")
        return helmholtz_sensitivity_filter(dJ, self.rho, cfg.r_min, pb.grid)

    def update(self, sol, target):
        dJf = self.filtered_sensitivity(sol)
        res = oc_bisection(self.rho, dJf, 1.0 / self.n_design, target, self.active,
                           self.problem.design_mask, self.cfg.move, self.cfg.eta, self.mode,
                           self.cfg.convergence.tol_volume)
        if not res.ok:
            self.flags += 1
        self.rho, self.lam = res.rho, res.lam


def simp_targets(variant: str, problem: ProblemSpec, cfg: MethodConfig) -> list[float]:
    f = problem.volume_fraction
    if variant == "II":
        return [volume_schedule(1.0, f, cfg.k, cfg.n_steps, j) for j in range(1, cfg.n_steps + 1)]
    return [f]


def run_simp(variant: str, problem: ProblemSpec, cfg: MethodConfig,
             callback: Callable[[int, np.ndarray], None] | None = None) -> RunRecord:
    """Run SIMP variant ``I``, ``II`` or ``III`` and return its history."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown SIMP variant {variant!r}")
    stepper = SimpStepper(problem, cfg, variant)
    record = optimize(problem, cfg, stepper, simp_targets(variant, problem, cfg), callback=callback)
    if stepper.flags:
        log.info("SIMP(%s): %d OC updates could not reach the volume target", variant, stepper.flags)
    return record
