"""Objective values, density sensitivities and pseudo-energies.

Sign conventions: compliance-type objectives have non-positive density
derivatives; the mechanism objective J = -f_out^T u_in has derivative
+omega * u_in^T K_e+ u_out. Pseudo-energies are -(1 - beta) * dJ/dchi, so
they are non-negative for compliance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import SolveResult, element_energy
from .grid import Grid
from .problem import ObjectiveKind


def objective(kind: ObjectiveKind, sol: SolveResult, loads, ndof: int | None = None) -> float:
    """J from the state solutions: f^T u, sum_i f_i^T u_i, or -f_out^T u_in."""
    kind = ObjectiveKind(kind)
    us = sol.displacements
    need = 1 if kind is ObjectiveKind.COMPLIANCE else len(loads)
    if len(us) < need or (kind is ObjectiveKind.MECHANISM and len(us) < 2):
        raise RuntimeError("objective: missing state solution for a load case")
    ndof = us[0].size if ndof is None else ndof
    fs = [ld.vector(ndof) for ld in loads]
    if kind is ObjectiveKind.COMPLIANCE:
        return float(fs[0] @ us[0])
    if kind is ObjectiveKind.MULTILOAD:
        return float(sum(f @ u for f, u in zip(fs, us)))
    return float(-(fs[1] @ us[0]))


def energy_product(kind: ObjectiveKind, sol: SolveResult, grid: Grid,
                   ke: np.ndarray | None = None) -> np.ndarray:
    """Per-element u^T K_e+ u (summed over cases for multi-load; u1^T K_e+ u2 for mechanisms)."""
    kind = ObjectiveKind(kind)
    us = sol.displacements
    if kind is ObjectiveKind.COMPLIANCE:
        return element_energy(grid, us[0], us[0], ke)
    if kind is ObjectiveKind.MULTILOAD:
        return sum(element_energy(grid, u, u, ke) for u in us)
    return element_energy(grid, us[0], us[1], ke)


def _sign(kind: ObjectiveKind) -> float:
    return 1.0 if ObjectiveKind(kind) is ObjectiveKind.MECHANISM else -1.0


def simp_stiffness(rho: np.ndarray, p: float, alpha: float) -> np.ndarray:
    return alpha + rho ** p * (1.0 - alpha)


def simp_sensitivity(kind, rho: np.ndarray, sol: SolveResult, grid: Grid, p: float,
                     alpha: float, ke: np.ndarray | None = None) -> np.ndarray:
    """dJ/drho_e for the modified SIMP interpolation alpha + rho^p (1 - alpha)."""
    rho = np.asarray(rho, float)
    if np.any((rho < 0) | (rho > 1)):
        raise ValueError("SIMP densities must lie in [0, 1]")
    omega = p * rho ** (p - 1) * (1.0 - alpha)
    return _sign(kind) * omega * energy_product(kind, sol, grid, ke)


def beso_rho_min(alpha: float, p: float) -> float:
    return alpha ** (1.0 / p)


def beso_stiffness(rho: np.ndarray, p: float) -> np.ndarray:
    return rho ** p


def beso_sensitivity(kind, rho: np.ndarray, sol: SolveResult, grid: Grid, p: float,
                     alpha: float | None = None, ke: np.ndarray | None = None) -> np.ndarray:
    """dJ/drho_e for the plain power law rho^p.

    In compliance mode the densities must be two-valued {rho_min, 1} when
    ``alpha`` is given.
    """
    rho = np.asarray(rho, float)
    kind = ObjectiveKind(kind)
    if alpha is not None and kind is not ObjectiveKind.MECHANISM:
        rmin = beso_rho_min(alpha, p)
        if not np.all(np.isclose(rho, rmin, rtol=1e-12, atol=0) | (rho == 1.0)):
            raise RuntimeError("BESO densities must be in {rho_min, 1} in compliance mode")
    omega = p * rho ** (p - 1)
    return _sign(kind) * omega * energy_product(kind, sol, grid, ke)


def relaxation_factor(alpha: float, m: float) -> float:
    beta = alpha ** (1.0 / m)
    if not 0.0 < beta < 1.0:
        raise ValueError(f"relaxation factor beta={beta} must lie in (0, 1)")
    return beta


def chi_stiffness(chi: np.ndarray, m: float) -> np.ndarray:
    return chi ** m


def vartop_pseudo_energy(kind, chi: np.ndarray, sol: SolveResult, grid: Grid, m: float,
                         beta: float, ke: np.ndarray | None = None) -> np.ndarray:
    """Pseudo-energy omega * u^T K_e+ u with omega = m chi^(m-1) (1 - beta).

    The mechanism variant carries a minus sign. ``chi`` is the effective
    element characteristic factor (fractional on cut elements).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    chi = np.asarray(chi, float)
    omega = m * chi ** (m - 1) * (1.0 - beta)
    return -_sign(kind) * omega * energy_product(kind, sol, grid, ke)


@dataclass
class ShiftNorm:
    """Shift and scale frozen from the first pseudo-energy field."""

    shift: float
    norm: float

    @classmethod
    def from_initial(cls, xi0: np.ndarray) -> "ShiftNorm":
        xi0 = np.asarray(xi0, float)
        shift = min(float(xi0.min()), 0.0)
        norm = max(float(xi0.max() - xi0.min()), float(xi0.max()))
        if norm == 0.0:
            raise RuntimeError("degenerate pseudo-energy: all-zero initial field, cannot normalise")
        return cls(shift, norm)

    def __call__(self, xi: np.ndarray, chi: np.ndarray) -> np.ndarray:
        return (np.asarray(xi, float) - np.asarray(chi, float) * self.shift) / self.norm


def shift_normalize(xi: np.ndarray, chi: np.ndarray, state: ShiftNorm | None) -> tuple[np.ndarray, ShiftNorm]:
    """Apply the frozen shift/normalisation, capturing it on the first call."""
    state = ShiftNorm.from_initial(xi) if state is None else state
    return state(xi, chi), state
