"""Soft-kill BESO: evolutionary volume reduction with discrete density updates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .driver import optimize
from .fem import SolveResult
from .filters import TemporalAverage, convolution_filter
from .problem import MethodConfig, ObjectiveKind, ProblemSpec, RunRecord
from .sensitivity import beso_rho_min, beso_sensitivity, beso_stiffness


def beso_volume_step(f_k: float, ER: float, f_final: float) -> float:
    """f_{k+1} = max(f_final, (1 - ER) f_k)."""
    if not 0.0 < ER < 1.0:
        raise ValueError("evolution ratio ER must lie in (0, 1)")
    return max(f_final, (1.0 - ER) * f_k)


def steps_to_target(f0: float, ER: float, f_final: float) -> int:
    f, n = f0, 0
    while f > f_final:
        f = beso_volume_step(f, ER, f_final)
        n += 1
    return n


@dataclass
class BesoUpdate:
    rho: np.ndarray
    lam: float
    added: int


def _ranked(score: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending element index."""
    return idx[np.lexsort((idx, -score[idx]))]


def beso_update(rho: np.ndarray, score: np.ndarray, f_target: float, AR_max: float,
                rho_min: float, active: np.ndarray | None = None,
                design: np.ndarray | None = None,
                mode: Literal["compliance", "mechanism"] = "compliance",
                move: float = 0.1) -> BesoUpdate:
    """Threshold update on the sensitivity numbers ``score`` (higher keeps material).

    compliance: the top-ranked active elements become solid so the stiff
    fraction equals ``f_target``; at most floor(AR_max * n_active) void elements
    may turn solid, the balance comes from the best currently-solid elements.
    mechanism: elements above the threshold step up by ``move``, the rest down;
    the element at the threshold takes a partial step so the volume is exact.
    """
    rho = np.asarray(rho, float)
    score = np.asarray(score, float)
    active = np.ones(rho.size, bool) if active is None else np.asarray(active, bool)
    design = np.ones(rho.size, bool) if design is None else np.asarray(design, bool)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        raise RuntimeError("BESO update: no active elements")
    n_design = int(np.count_nonzero(design))
    out = rho.copy()
    stiff = lambda r: (r - rho_min) / (1.0 - rho_min)  # noqa: E731
    fixed_stiff = float(np.sum(stiff(rho[design & ~active])))
    order = _ranked(score, idx)
    if mode == "compliance":
        n_target = int(round(f_target * n_design - fixed_stiff))
        n_target = min(max(n_target, 0), idx.size)
        limit = int(math.floor(AR_max * idx.size))
        is_solid = rho[order] >= 1.0
        chosen = order[:n_target]
        added = int(np.count_nonzero(rho[chosen] < 1.0))
        if added > limit:
            voids = order[~is_solid][:limit]
            solids = order[is_solid][: max(n_target - voids.size, 0)]
            if voids.size + solids.size < n_target:
                extra = order[~is_solid][limit: limit + n_target - voids.size - solids.size]
                voids = np.concatenate([voids, extra])
            chosen = np.concatenate([voids, solids])
            added = int(voids.size)
        out[idx] = rho_min
        out[chosen] = 1.0
        lam = float(np.min(score[chosen])) if chosen.size else math.inf
        return BesoUpdate(out, lam, added)
    if mode != "mechanism":
        raise ValueError(f"unknown BESO mode {mode!r}")
    up = np.minimum(rho[order] + move, 1.0)
    down = np.maximum(rho[order] - move, rho_min)
    base = fixed_stiff + np.sum(stiff(down))
    need = f_target * n_design - base
    gain = np.cumsum(stiff(up) - stiff(down))
    new = down.copy()
    k = int(np.searchsorted(gain, need))
    if need <= 0:
        k = 0
    elif k >= order.size:
        new = up
        k = order.size
    else:
        new[:k] = up[:k]
        prev = gain[k - 1] if k else 0.0
        span = gain[k] - prev
        frac = 0.0 if span <= 0 else (need - prev) / span
        new[k] = down[k] + frac * (up[k] - down[k])
    out[order] = new
    lam = float(score[order[min(k, order.size - 1)]])
    return BesoUpdate(out, lam, int(np.count_nonzero((rho[order] <= rho_min) & (new > rho_min))))


@dataclass
class BesoStepper:
    problem: ProblemSpec
    cfg: MethodConfig
    lam: float = math.nan
    topology_mode: str = "nodal"
    f_current: float = 1.0
    f_history: list[float] = field(default_factory=list)
    added_history: list[int] = field(default_factory=list)

    def __post_init__(self):
        pb = self.problem
        self.mode = "mechanism" if pb.kind is ObjectiveKind.MECHANISM else "compliance"
        self.rho_min = beso_rho_min(pb.material.alpha, self.cfg.p)
        self.rho = np.ones(pb.grid.elem_count)
        self.rho[pb.masks.passive_void] = self.rho_min
        self.active = pb.active_mask
        self.design_mask = pb.design_mask
        self.temporal = TemporalAverage()
        self.f_final = pb.volume_fraction
        self.f_history.append(self.f_current)

    def scale(self):
        return beso_stiffness(self.rho, self.cfg.p)

    def design(self):
        return self.rho.copy()

    def volume_fraction(self):
        s = (self.rho[self.design_mask] - self.rho_min) / (1.0 - self.rho_min)
        return float(np.mean(s))

    def ready(self):
        return self.f_current <= self.f_final

    def begin_step(self, j, target):
        pass

    def sensitivity_numbers(self, sol: SolveResult) -> np.ndarray:
        pb = self.problem
        dJ = beso_sensitivity(pb.kind, self.rho, sol, pb.grid, self.cfg.p)
        spatial = convolution_filter(dJ, None, self.cfg.r_min, pb.grid, mode="beso")
        return -self.temporal(spatial)

    def update(self, sol, target):
        score = self.sensitivity_numbers(sol)
        self.f_current = beso_volume_step(self.f_current, self.cfg.ER, self.f_final)
        self.f_history.append(self.f_current)
        res = beso_update(self.rho, score, self.f_current, self.cfg.AR_max, self.rho_min,
                          self.active, self.design_mask, self.mode, self.cfg.move)
        self.rho, self.lam = res.rho, res.lam
        self.added_history.append(res.added)


def run_beso(problem: ProblemSpec, cfg: MethodConfig,
             callback: Callable[[int, np.ndarray], None] | None = None,
             stepper: BesoStepper | None = None) -> RunRecord:
    """Soft-kill BESO from a full-solid start; criteria apply once the final fraction is reached."""
    stepper = stepper or BesoStepper(problem, cfg)
    return optimize(problem, cfg, stepper, [problem.volume_fraction], callback=callback)
