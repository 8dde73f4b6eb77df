"""Convergence protocol shared by all optimisers.

Volume, objective and topology criteria; the exponential volume schedule
and the linear tolerance schedule of time-advancing runs; estimation of
the order of convergence from an objective history.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .filters import nodal_matrices, regularize_element_field
from .grid import Grid

TOPOLOGY_TAU = 8.0


@dataclass(frozen=True)
class ConvergenceConfig:
    """Tolerances and window length; ``tol_J=None`` disables the objective criterion."""

    tol_volume: float = 1e-3
    tol_J: float | None = 1e-3
    tol_topology: float = 2.5e-3
    window: int = 3
    tau_criterion: float = TOPOLOGY_TAU
    max_iter: int = 500

    def __post_init__(self):
        for name in ("tol_volume", "tol_topology", "tau_criterion"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tol_J is not None and not self.tol_J > 0:
            raise ValueError("tol_J must be positive or None")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def objective_criterion(J: Sequence[float], n: int, J0: float) -> float:
    """Moving mean of |J_i - J_{i-1}| / J0 over the last ``n`` differences.

    ``J`` holds the objective values of the current time-step only. Returns
    NaN when fewer than n + 1 values are available.
    """
    J = np.asarray(J, float)
    if J.size < n + 1:
        return math.nan
    diffs = np.abs(np.diff(J[-(n + 1):])) / abs(J0)
    return float(np.sum(diffs) / n)


def topology_criterion(prev: np.ndarray, curr: np.ndarray, grid: Grid,
                       mode: Literal["element", "nodal"] = "element",
                       omega0: float | None = None, tau: float = TOPOLOGY_TAU,
                       elem_volume: np.ndarray | float | None = None) -> float:
    """Normalised L2 distance between consecutive designs.

    element: sqrt(sum (d_e)^2 |Omega_e|) / |Omega_0|^(1/2).
    nodal: both element fields are first smoothed onto the nodes with the
    screened solve (M + (tau h)^2 K) r = int N^T field, then
    sqrt(dr^T M dr) / |Omega_0|^(1/2).
    """
    prev, curr = np.asarray(prev, float), np.asarray(curr, float)
    if prev.shape != curr.shape or prev.shape != (grid.elem_count,):
        raise ValueError("topology criterion needs two element fields on the grid")
    omega0 = grid.volume if omega0 is None else omega0
    if mode == "element":
        vol = grid.elem_volume if elem_volume is None else elem_volume
        return float(np.sqrt(np.sum((curr - prev) ** 2 * vol) / omega0))
    if mode == "nodal":
        d = regularize_element_field(curr - prev, tau, grid)
        M, _ = nodal_matrices(grid)
        return float(np.sqrt(max(d @ (M @ d), 0.0) / omega0))
    raise ValueError(f"unknown topology criterion mode {mode!r}")


def volume_schedule(f0: float, f_final: float, k: float, n_steps: int, j: int) -> float:
    """Exponential volume-fraction schedule, f_0 at j=0 and f_final at j=n_steps."""
    if k == 0:
        raise ValueError("k = 0 makes the exponential schedule degenerate; use linear_schedule")
    if n_steps < 1 or not 0 <= j <= n_steps:
        raise ValueError("need n_steps >= 1 and 0 <= j <= n_steps")
    if j == n_steps:
        return float(f_final)
    if j == 0:
        return float(f0)
    return f0 + (f_final - f0) / (1.0 - math.exp(k)) * (1.0 - math.exp(k * j / n_steps))


def linear_schedule(f0: float, f_final: float, n_steps: int, j: int) -> float:
    return f0 + (f_final - f0) * j / n_steps


def tolerance_schedule(j: int, n_steps: int, tol_final: float) -> float:
    """Linear from 10 * tol_final at step 1 down to tol_final at the last step."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_steps == 1:
        return tol_final
    frac = (j - 1) / (n_steps - 1)
    return tol_final * (10.0 - 9.0 * frac)


def replay_objective_criterion(step: Sequence[int], J: Sequence[float], window: int) -> np.ndarray:
    """Recompute the objective criterion of every history row.

    Row 0 is the reference; rows with step 0 precede the first step and
    carry NaN, as do rows without a full window.
    """
    step, J = np.asarray(step, int), np.asarray(J, float)
    out = np.full(J.size, math.nan)
    for i in range(1, J.size):
        if step[i] > 0:
            rows = np.flatnonzero(step[1:i + 1] == step[i]) + 1
            out[i] = objective_criterion(J[rows], window, J[0])
    return out


class NotEstimable(ValueError):
    pass


def order_of_convergence(J: Sequence[float], J_star: float | None = None,
                         J0: float | None = None) -> tuple[float, float]:
    """Fit |e_{n+1}| = mu |e_n|^p by least squares in log-log space.

    ``e_n = J_n / J0 - J_star / J0``; ``J_star`` defaults to the last value
    and ``J0`` to the first. Errors under 100 machine epsilons are dropped.
    """
    J = np.asarray(J, float)
    J0 = J[0] if J0 is None else J0
    J_star = J[-1] if J_star is None else J_star
    e = np.abs(J / J0 - J_star / J0)
    floor = 100 * np.finfo(float).eps
    x, y = e[:-1], e[1:]
    ok = (x > floor) & (y > floor)
    if np.count_nonzero(ok) < 3:
        raise NotEstimable("fewer than 3 usable error pairs")
    lx, ly = np.log(x[ok]), np.log(y[ok])
    p, logmu = np.polyfit(lx, ly, 1)
    return float(p), float(math.exp(logmu))


@dataclass
class CriteriaState:
    """Per-iteration criteria values and the overall verdict."""

    volume_error: float
    dJ: float
    dtopo: float
    converged: bool


def evaluate(volume_error: float, dJ: float, dtopo: float, tol_volume: float,
             tol_J: float | None, tol_topology: float) -> bool:
    """True only when every enabled criterion is evaluable and satisfied."""
    if not abs(volume_error) <= tol_volume:
        return False
    if tol_J is not None and not (dJ <= tol_J):
        return False
    return bool(dtopo <= tol_topology)
