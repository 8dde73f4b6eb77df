"""Spatial and temporal regularisation of design fields.

All spatial operators are built once per (grid, radius) and cached; applying
them is a sparse product or a back-substitution with a stored factorisation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import scalar_element_matrices
from .grid import Grid

GAMMA = 1e-3

_cache: dict[tuple, object] = {}


def _cached(key, build):
    if key not in _cache:
        if len(_cache) > 32:
            _cache.clear()
        _cache[key] = build()
    return _cache[key]


def _grid_key(grid: Grid) -> tuple:
    return (grid.dims, grid.elem_size)


# -- convolution (distance) filter ------------------------------------------------

def filter_weights(grid: Grid, r_min: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Weights H_ei = max(0, r_min - dist(e, i)) and their row sums.

    Distances are centre-to-centre, measured in units of the mean element
    edge ``grid.h``.
    """
    if not r_min > 0:
        raise ValueError("r_min must be positive")

    def build():
        h = np.asarray(grid.elem_size) / grid.h
        reach = [int(np.floor(r_min / hi)) for hi in h]
        ijk = grid.elem_ijk()
        rows, cols, vals = [], [], []
        for off in itertools.product(*[range(-r, r + 1) for r in reach]):
            off = np.asarray(off)
            dist = float(np.sqrt(np.sum((off * h) ** 2)))
            w = r_min - dist
            if w <= 0:
                continue
            nb = ijk + off
            ok = np.all((nb >= 0) & (nb < np.asarray(grid.dims)), axis=1)
            e = np.flatnonzero(ok)
            rows.append(e)
            cols.append(grid.elem_index(*nb[ok].T))
            vals.append(np.full(e.size, w))
        H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(grid.elem_count, grid.elem_count))
        return H, np.asarray(H.sum(axis=1)).ravel()

    return _cached(("conv",) + _grid_key(grid) + (float(r_min),), build)


def convolution_filter(field: np.ndarray, rho: np.ndarray | None, r_min: float,
                       grid: Grid, mode: Literal["simp", "beso"] = "simp",
                       gamma: float = GAMMA) -> np.ndarray:
    """Distance-weighted sensitivity filter.

    simp: sum(H rho s) / (max(gamma, rho_e) sum(H));  beso: sum(H s) / sum(H).
    """
    H, Hs = filter_weights(grid, r_min)
    field = np.asarray(field, float)
    if mode == "simp":
        rho = np.asarray(rho, float)
        return (H @ (rho * field)) / (np.maximum(gamma, rho) * Hs)
    if mode == "beso":
        return (H @ field) / Hs
    raise ValueError(f"unknown filter mode {mode!r}")


# -- Helmholtz PDE filter (element-centred) -----------------------------------------

def helmholtz_radius(r_min: float) -> float:
    """PDE filter length matching a distance filter of radius ``r_min``."""
    return r_min / (2.0 * np.sqrt(3.0))


def _element_laplacian(grid: Grid) -> sp.csr_matrix:
    n = grid.elem_count
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for ax, (e, f) in enumerate(grid.elem_neighbors):
        w = 1.0 / grid.elem_size[ax] ** 2
        rows += [e, f]
        cols += [f, e]
        vals += [np.full(e.size, -w)] * 2
        np.add.at(diag, e, w)
        np.add.at(diag, f, w)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def helmholtz_filter(field: np.ndarray, r_min: float, grid: Grid) -> np.ndarray:
    """Solve (I - R^2 Lap) out = field with zero-flux boundaries.

    One unknown per element, 7-point (5-point in 2D) stencil; R is
    ``helmholtz_radius(r_min)`` in units of ``grid.h``.
    """
    R = helmholtz_radius(r_min) * grid.h

    def build():
        A = sp.identity(grid.elem_count, format="csc") + R ** 2 * _element_laplacian(grid).tocsc()
        return spla.splu(sp.csc_matrix(A))

    lu = _cached(("helm",) + _grid_key(grid) + (float(r_min),), build)
    return lu.solve(np.asarray(field, float))


def helmholtz_sensitivity_filter(dJ: np.ndarray, rho: np.ndarray, r_min: float,
                                 grid: Grid, gamma: float = GAMMA) -> np.ndarray:
    """Filter rho * dJ with the PDE filter, then divide by max(gamma, rho)."""
    rho = np.asarray(rho, float)
    return helmholtz_filter(rho * dJ, r_min, grid) / np.maximum(gamma, rho)


# -- nodal screened-Poisson regularisation ---------------------------------------------

def nodal_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Global consistent mass and Laplacian (stiffness) matrices for nodal scalars."""

    def build():
        me, le = scalar_element_matrices(grid.elem_size)
        conn = grid.connectivity
        nloc = conn.shape[1]
        rows = np.repeat(conn, nloc, axis=1).ravel()
        cols = np.tile(conn, (1, nloc)).ravel()
        shape = (grid.node_count, grid.node_count)
        M = sp.csr_matrix((np.tile(me.ravel(), grid.elem_count), (rows, cols)), shape=shape)
        L = sp.csr_matrix((np.tile(le.ravel(), grid.elem_count), (rows, cols)), shape=shape)
        return M, L

    return _cached(("nodal",) + _grid_key(grid), build)


def _screened_factor(grid: Grid, tau: float):
    def build():
        M, L = nodal_matrices(grid)
        return spla.splu(sp.csc_matrix(M + (tau * grid.h) ** 2 * L))

    return _cached(("screen",) + _grid_key(grid) + (float(tau),), build)


def laplacian_regularize(field_nodal: np.ndarray, tau: float, grid: Grid) -> np.ndarray:
    """Nodal solution of out - (tau h)^2 Lap out = field, zero-flux boundaries."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    field_nodal = np.asarray(field_nodal, float)
    if tau == 0:
        return field_nodal.copy()
    M, _ = nodal_matrices(grid)
    return _screened_factor(grid, tau).solve(M @ field_nodal)


def regularize_element_field(field_elem: np.ndarray, tau: float, grid: Grid) -> np.ndarray:
    """Nodal field solving (M + (tau h)^2 K) out = integral of N^T field_e."""
    field_elem = np.asarray(field_elem, float)
    rhs = np.zeros(grid.node_count)
    share = grid.elem_volume / grid.nodes_per_elem
    np.add.at(rhs, grid.connectivity, (field_elem * share)[:, None])
    if tau == 0:
        M, _ = nodal_matrices(grid)
        return _cached(("mass",) + _grid_key(grid), lambda: spla.splu(sp.csc_matrix(M))).solve(rhs)
    return _screened_factor(grid, tau).solve(rhs)


def element_to_nodes(field_elem: np.ndarray, grid: Grid) -> np.ndarray:
    """Volume-weighted average of the elements around each node."""
    field_elem = np.asarray(field_elem, float)
    acc = np.zeros(grid.node_count)
    cnt = np.zeros(grid.node_count)
    np.add.at(acc, grid.connectivity, field_elem[:, None])
    np.add.at(cnt, grid.connectivity, 1.0)
    return acc / cnt


# -- temporal averaging ------------------------------------------------------------------

@dataclass
class TemporalAverage:
    """Running two-point average: out_k = (s_k + out_{k-1}) / 2."""

    history: np.ndarray | None = None

    def __call__(self, current: np.ndarray) -> np.ndarray:
        current = np.asarray(current, float)
        if self.history is None:
            out = current.copy()
        else:
            if self.history.shape != current.shape:
                raise ValueError("temporal average: shape mismatch with stored history")
            out = 0.5 * (current + self.history)
        self.history = out
        return out

    def reset(self) -> None:
        self.history = None


def temporal_average(current: np.ndarray, previous: np.ndarray | None) -> np.ndarray:
    """Stateless form of :class:`TemporalAverage`."""
    if previous is None:
        return np.asarray(current, float).copy()
    current, previous = np.asarray(current, float), np.asarray(previous, float)
    if current.shape != previous.shape:
        raise ValueError("temporal average: shape mismatch")
    return 0.5 * (current + previous)
