"""VARTOP: closed-form cutting of a regularised pseudo-energy with a time-advancing schedule.

The stiff sub-volume of a mixed element is the positive part of the
trilinear (bilinear) interpolant of the nodal discrimination function. The
default integrates it exactly along z and with a midpoint rule over (x, y).
The alternative simplex path integrates a piecewise-linear interpolant
exactly on six tetrahedra per hexahedron (two triangles per quadrilateral),
optionally after subdividing the element.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .convergence import volume_schedule
from .driver import optimize
from .filters import element_to_nodes, laplacian_regularize
from .grid import Grid
from .problem import MethodConfig, ProblemSpec, RunRecord
from .sensitivity import ShiftNorm, chi_stiffness, relaxation_factor, vartop_pseudo_energy

# local corners follow the grid connectivity order
HEX_TETS = np.array([[0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6],
                     [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6]])
QUAD_TRIS = np.array([[0, 1, 2], [0, 2, 3]])
DEFAULT_SUBDIV = 3
COLUMN_POINTS = {3: 16, 2: 64}


def _simplex_positive_fraction(v: np.ndarray) -> np.ndarray:
    """Fraction of each simplex where the linear interpolant of ``v`` is positive.

    ``v`` has shape (n, d + 1). Closed forms per sign pattern are written so
    every term is non-negative, avoiding cancellation near ties.
    """
    n, k = v.shape
    # scale-free; values far below the largest act as zeros so no denominator underflows
    scale = np.max(np.abs(v), axis=1, keepdims=True)
    v = np.divide(v, scale, out=np.zeros_like(v, dtype=float), where=scale > 0)
    v = np.where(np.abs(v) <= 1e-12, 0.0, v)
    pos = v > 0
    npos = pos.sum(axis=1)
    out = np.where(npos == k, 1.0, 0.0)
    # order vertices: positives first, by descending value
    vs = -np.sort(-v, axis=1)
    if k == 4:
        a, b, c, d = vs.T
        with np.errstate(divide="ignore", invalid="ignore"):
            one = a ** 3 / ((a - b) * (a - c) * (a - d))
            num = (a * a * b * b - a * a * b * c - a * a * b * d + a * a * c * d
                   - a * b * b * c - a * b * b * d + a * b * c * d + b * b * c * d)
            two = num / ((a - c) * (a - d) * (b - c) * (b - d))
            three = 1.0 - (-d) ** 3 / ((a - d) * (b - d) * (c - d))
        out = np.where(npos == 1, one, out)
        out = np.where(npos == 2, two, out)
        out = np.where(npos == 3, three, out)
    elif k == 3:
        a, b, c = vs.T
        with np.errstate(divide="ignore", invalid="ignore"):
            one = a * a / ((a - b) * (a - c))
            two = (a * b - a * c - b * c) / ((a - c) * (b - c))
        out = np.where(npos == 1, one, out)
        out = np.where(npos == 2, two, out)
    else:
        raise ValueError("simplices must have 3 or 4 vertices")
    return np.clip(out, 0.0, 1.0)


@lru_cache(maxsize=8)
def _subdivision(ndim: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear weights (sub-nodes x corners) and sub-cell corner lists."""
    ticks = np.linspace(0.0, 1.0, s + 1)
    pts = np.array(list(itertools.product(ticks, repeat=ndim)))[:, ::-1]  # x fastest
    corners = np.array(list(itertools.product((0, 1), repeat=ndim)))[:, ::-1]
    if ndim == 3:
        corners = corners[[0, 1, 3, 2, 4, 5, 7, 6]]
    else:
        corners = corners[[0, 1, 3, 2]]
    W = np.ones((len(pts), len(corners)))
    for ax in range(ndim):
        W *= np.where(corners[None, :, ax] == 1, pts[:, None, ax], 1.0 - pts[:, None, ax])
    stride = [(s + 1) ** ax for ax in range(ndim)]
    cells = []
    for base in itertools.product(range(s), repeat=ndim):
        base = base[::-1]
        cells.append([sum((base[ax] + c[ax]) * stride[ax] for ax in range(ndim)) for c in corners])
    return W, np.array(cells)


def _column_fractions(v: np.ndarray, ndim: int) -> np.ndarray:
    """Positive fraction of the multilinear interpolant, exact along the last axis."""
    n = COLUMN_POINTS[ndim]
    t = (np.arange(n) + 0.5) / n
    if ndim == 3:
        X, Y = (a.ravel() for a in np.meshgrid(t, t, indexing="ij"))
        w = np.stack([(1 - X) * (1 - Y), X * (1 - Y), X * Y, (1 - X) * Y])
        f0, f1 = v[:, :4] @ w, v[:, 4:] @ w
    else:
        w = np.stack([1 - t, t])
        f0, f1 = v[:, :2] @ w, v[:, [3, 2]] @ w
    with np.errstate(divide="ignore", invalid="ignore"):
        length = np.where(f0 > 0, np.where(f1 > 0, 1.0, f0 / (f0 - f1)),
                          np.where(f1 > 0, f1 / (f1 - f0), 0.0))
    return length.mean(axis=1)


def _simplex_fractions(v: np.ndarray, ndim: int, subdiv: int) -> np.ndarray:
    simplices = HEX_TETS if ndim == 3 else QUAD_TRIS
    if subdiv > 1:
        W, cells = _subdivision(ndim, subdiv)
        v = (v @ W.T)[:, cells]  # (m, cells, corners)
    else:
        v = v[:, None, :]
    sv = v[:, :, simplices]
    f = _simplex_positive_fraction(sv.reshape(-1, simplices.shape[1]))
    return f.reshape(len(v), -1).mean(axis=1)


def element_stiff_fractions(psi: np.ndarray, grid: Grid, method: str = "columns",
                            subdiv: int = DEFAULT_SUBDIV) -> np.ndarray:
    """Stiff fraction |Omega_e+| / |Omega_e| of every element for nodal ``psi``.

    ``method="columns"`` follows the multilinear interpolant; ``"simplex"``
    uses the tetrahedral (triangular) tessellation with ``subdiv`` sub-cells
    per axis.
    """
    psi = np.asarray(psi, float)
    if psi.shape != (grid.node_count,):
        raise ValueError("psi must be a nodal field")
    vals = psi[grid.connectivity]
    pos = vals > 0
    frac = pos.all(axis=1).astype(float)
    mixed = np.flatnonzero(pos.any(axis=1) & ~pos.all(axis=1))
    if mixed.size == 0:
        return frac
    if method == "columns":
        frac[mixed] = _column_fractions(vals[mixed], grid.ndim)
    elif method == "simplex":
        frac[mixed] = _simplex_fractions(vals[mixed], grid.ndim, subdiv)
    else:
        raise ValueError(f"unknown volume method {method!r}")
    return frac


def volume_from_psi(psi: np.ndarray, grid: Grid, method: str = "columns",
                    subdiv: int = DEFAULT_SUBDIV) -> float:
    """Stiff volume |Omega+| of the nodal discrimination function."""
    return float(element_stiff_fractions(psi, grid, method, subdiv).sum() * grid.elem_volume)


def chi_from_fraction(frac: np.ndarray, beta: float, m: float) -> np.ndarray:
    """Effective characteristic factor with chi^m = frac + (1 - frac) beta^m."""
    return (frac + (1.0 - frac) * beta ** m) ** (1.0 / m)


@dataclass
class CutResult:
    psi: np.ndarray
    fraction: np.ndarray
    lam: float
    void_fraction: float
    steps: int


def _apply_masks(frac: np.ndarray, problem: ProblemSpec | None) -> np.ndarray:
    if problem is not None:
        frac = frac.copy()
        frac[problem.masks.passive_void] = 0.0
        frac[problem.masks.passive_solid] = 1.0
    return frac


def stiff_fraction_of_design(frac: np.ndarray, problem: ProblemSpec | None) -> float:
    if problem is None:
        return float(np.mean(frac))
    return float(np.mean(frac[problem.design_mask]))


def cutting_bisection(xi_reg: np.ndarray, t: float, grid: Grid, problem: ProblemSpec | None = None,
                      tol: float = 1e-7, max_steps: int = 200,
                      method: str = "columns") -> CutResult:
    """Find lambda so psi = xi_reg - lambda / |Omega| leaves void fraction ``t``.

    The void fraction is measured over the design domain with passive
    elements overridden; it is non-decreasing in lambda.
    """
    xi_reg = np.asarray(xi_reg, float)
    if not 0.0 <= t <= 1.0:
        raise ValueError("void fraction target must lie in [0, 1]")
    omega = grid.volume
    lo_x, hi_x = float(xi_reg.min()), float(xi_reg.max())
    if hi_x - lo_x <= 1e-14 * max(1.0, abs(hi_x)) and 0.0 < t < 1.0:
        raise RuntimeError("flat pseudo-energy: no cut reaches the target volume")
    lo, hi = lo_x * omega - 1.0, hi_x * omega + 1.0

    def void(lam):
        frac = _apply_masks(element_stiff_fractions(xi_reg - lam / omega, grid, method), problem)
        return 1.0 - stiff_fraction_of_design(frac, problem), frac

    steps = 0
    v_lo, f_lo = void(lo)
    if t <= v_lo:
        return CutResult(xi_reg - lo / omega, f_lo, lo, v_lo, 0)
    v_hi, f_hi = void(hi)
    if t >= v_hi:
        return CutResult(xi_reg - hi / omega, f_hi, hi, v_hi, 0)
    best = (lo, v_lo, f_lo)
    for steps in range(1, max_steps + 1):
        mid = 0.5 * (lo + hi)
        v, frac = void(mid)
        if abs(v - t) < abs(best[1] - t):
            best = (mid, v, frac)
        if abs(v - t) <= tol:
            break
        if v < t:
            lo = mid
        else:
            hi = mid
    lam, v, frac = best
    return CutResult(xi_reg - lam / omega, frac, lam, v, steps)


class VartopStepper:
    topology_mode = "nodal"

    def __init__(self, problem: ProblemSpec, cfg: MethodConfig, volume_method: str = "columns"):
        self.problem, self.cfg, self.volume_method = problem, cfg, volume_method
        grid = problem.grid
        self.beta = relaxation_factor(problem.material.alpha, cfg.m)
        self.nodal = np.ones(grid.node_count)
        self.stiff_fraction = _apply_masks(np.ones(grid.elem_count), problem)
        self.norm: ShiftNorm | None = None
        self.lam = math.nan
        self.xi_hat: np.ndarray | None = None
        self.reg_prev: np.ndarray | None = None

    @property
    def chi(self) -> np.ndarray:
        return chi_from_fraction(self.stiff_fraction, self.beta, self.cfg.m)

    def scale(self):
        return chi_stiffness(self.chi, self.cfg.m)

    def design(self):
        return self.stiff_fraction.copy()

    def volume_fraction(self):
        return stiff_fraction_of_design(self.stiff_fraction, self.problem)

    def ready(self):
        return True

    def begin_step(self, j, target):
        pass

    def regularized_energy(self, sol) -> np.ndarray:
        pb, cfg = self.problem, self.cfg
        chi = self.chi
        xi = vartop_pseudo_energy(pb.kind, chi, sol, pb.grid, cfg.m, self.beta)
        if self.norm is None:
            self.norm = ShiftNorm.from_initial(xi)
        self.xi_hat = self.norm(xi, chi)
        return laplacian_regularize(element_to_nodes(self.xi_hat, pb.grid), cfg.tau, pb.grid)

    def update(self, sol, target):
        reg = self.regularized_energy(sol)
        r = self.cfg.relaxation
        if r > 0 and self.reg_prev is not None:
            # averaging the energy, not psi, keeps the cut volume exact
            reg = (1.0 - r) * reg + r * self.reg_prev
        self.reg_prev = reg
        cut = cutting_bisection(reg, 1.0 - target, self.problem.grid, self.problem,
                                method=self.volume_method)
        self.nodal, self.lam, self.stiff_fraction = cut.psi, cut.lam, cut.fraction


def vartop_targets(problem: ProblemSpec, cfg: MethodConfig) -> list[float]:
    """Stiff-fraction targets 1 - t_j of the exponential schedule."""
    return [volume_schedule(1.0, problem.volume_fraction, cfg.k, cfg.n_steps, j)
            for j in range(1, cfg.n_steps + 1)]


def run_vartop(problem: ProblemSpec, cfg: MethodConfig,
               callback: Callable[[int, np.ndarray], None] | None = None,
               volume_method: str = "columns") -> RunRecord:
    stepper = VartopStepper(problem, cfg, volume_method)
    return optimize(problem, cfg, stepper, vartop_targets(problem, cfg), callback=callback)
