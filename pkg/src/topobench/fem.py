"""Linear elasticity on structured grids: element matrices, assembly, solves.

Element matrices for the trilinear hexahedron (bilinear quad in 2D) are
integrated exactly using the tensor-product structure of the shape
functions, so no quadrature rule is involved.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid

log = logging.getLogger(__name__)

DIRECT_DOF_LIMIT = 250_000
DENSE_DOF_LIMIT = 3_000


class SolverError(RuntimeError):
    """Raised when an iterative solve misses its tolerance."""

    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ElasticMaterial:
    E_plus: float = 1.0
    nu: float = 0.3
    alpha: float = 1e-6

    def __post_init__(self):
        if not self.E_plus > 0:
            raise ValueError("E_plus must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"contrast factor must lie in (0, 1), got {self.alpha}")


@dataclass
class LoadCase:
    """Nodal force vector stored sparsely. ``body`` is reserved and unused."""

    dofs: np.ndarray
    values: np.ndarray
    label: str = ""
    body: np.ndarray | None = None

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, np.int64).ravel()
        self.values = np.asarray(self.values, float).ravel()
        if self.dofs.shape != self.values.shape:
            raise ValueError("dofs and values must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("load values must be finite")

    def vector(self, ndof: int) -> np.ndarray:
        if self.dofs.size and (self.dofs.min() < 0 or self.dofs.max() >= ndof):
            raise ValueError(f"load {self.label!r} references DOFs outside the grid")
        f = np.zeros(ndof)
        np.add.at(f, self.dofs, self.values)
        return f


@dataclass
class SpringSet:
    """Grounded springs: (DOF, stiffness) pairs added to the diagonal."""

    dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    stiffness: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, np.int64).ravel()
        self.stiffness = np.asarray(self.stiffness, float).ravel()
        if self.dofs.shape != self.stiffness.shape:
            raise ValueError("dofs and stiffness must have equal length")
        if np.any(self.stiffness <= 0):
            raise ValueError("spring stiffness must be positive")

    def __add__(self, other: "SpringSet") -> "SpringSet":
        return SpringSet(np.concatenate([self.dofs, other.dofs]),
                         np.concatenate([self.stiffness, other.stiffness]))

    def diagonal(self, ndof: int) -> np.ndarray:
        d = np.zeros(ndof)
        np.add.at(d, self.dofs, self.stiffness)
        return d

    def energy(self, ua: np.ndarray, ub: np.ndarray) -> float:
        return float(np.sum(self.stiffness * ua[self.dofs] * ub[self.dofs]))


@dataclass
class SolveResult:
    displacements: list[np.ndarray]
    solver_iterations: int
    residual_norm: float


# -- element matrices ----------------------------------------------------------

def _local_offsets(ndim: int) -> np.ndarray:
    full = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]])
    return full if ndim == 3 else full[:4, :2]


def _gradient_products(elem_size: Sequence[float]) -> np.ndarray:
    """G[i, j, a, b] = integral over the element of dN_a/dx_i * dN_b/dx_j.

    Also returns the mass-like products in G[-1, -1] (integral of N_a N_b).
    """
    ndim = len(elem_size)
    off = _local_offsets(ndim)
    n = off.shape[0]
    sgn = np.where(off == 0, -1.0, 1.0)
    same = (off[:, None, :] == off[None, :, :])
    G = np.empty((ndim + 1, ndim + 1, n, n))
    for i in range(ndim + 1):
        for j in range(ndim + 1):
            prod = np.ones((n, n))
            for c, h in enumerate(elem_size):
                if c == i and c == j:
                    f = sgn[:, None, c] * sgn[None, :, c] / h
                elif c == i:
                    f = np.broadcast_to(sgn[:, None, c] * 0.5, (n, n))
                elif c == j:
                    f = np.broadcast_to(sgn[None, :, c] * 0.5, (n, n))
                else:
                    f = np.where(same[:, :, c], h / 3.0, h / 6.0)
                prod = prod * f
            G[i, j] = prod
    return G


def lame_parameters(E: float, nu: float, ndim: int) -> tuple[float, float]:
    mu = E / (2.0 * (1.0 + nu))
    if ndim == 3:
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    else:  # plane stress
        lam = E * nu / (1.0 - nu ** 2)
    return lam, mu


def reference_element_stiffness(material: ElasticMaterial | None = None,
                                elem_size: float | Sequence[float] = 1.0,
                                ndim: int = 3) -> np.ndarray:
    """Stiff-phase element stiffness matrix K_e+ with DOFs ordered node-major.

    Exact for the (tri)linear element: the integrand factorises into 1D
    polynomial integrals over each axis.
    """
    material = material or ElasticMaterial()
    if not 0.0 <= material.nu < 0.5:
        raise ValueError("Poisson ratio must lie in [0, 0.5)")
    if np.isscalar(elem_size):
        elem_size = (float(elem_size),) * ndim
    if any(h <= 0 for h in elem_size):
        raise ValueError("elem_size must be positive")
    ndim = len(elem_size)
    lam, mu = lame_parameters(material.E_plus, material.nu, ndim)
    G = _gradient_products(elem_size)
    n = 2 ** ndim
    lap = sum(G[k, k] for k in range(ndim))
    K = np.zeros((n, ndim, n, ndim))
    for i in range(ndim):
        for j in range(ndim):
            block = lam * G[i, j] + mu * G[j, i]
            if i == j:
                block = block + mu * lap
            K[:, i, :, j] = block
    K = K.reshape(n * ndim, n * ndim)
    return 0.5 * (K + K.T)


def scalar_element_matrices(elem_size: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Consistent mass and Laplacian matrices for a scalar nodal field."""
    G = _gradient_products(elem_size)
    ndim = len(elem_size)
    mass = G[ndim, ndim]
    lap = sum(G[k, k] for k in range(ndim))
    return mass, lap


# -- assembly --------------------------------------------------------------------

class SparsePattern:
    """CSR pattern of an element-by-element assembled operator.

    Built once per (grid, DOF table); each assembly is then a single
    ``bincount`` into the CSR data array.
    """

    def __init__(self, edof: np.ndarray, ndof: int):
        nloc = edof.shape[1]
        rows = np.repeat(edof, nloc, axis=1).ravel()
        cols = np.tile(edof, (1, nloc)).ravel()
        key = rows * ndof + cols
        uniq, self.scatter = np.unique(key, return_inverse=True)
        self.ndof = ndof
        self.nloc = nloc
        r = uniq // ndof
        self.indices = (uniq % ndof).astype(np.int32)
        self.indptr = np.zeros(ndof + 1, np.int64)
        np.add.at(self.indptr, r + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        diag = np.flatnonzero(r == uniq % ndof)
        self.diag_pos = np.full(ndof, -1, np.int64)
        self.diag_pos[r[diag]] = diag

    @property
    def nnz(self) -> int:
        return self.indices.size

    def assemble(self, element_matrix: np.ndarray, scale: np.ndarray,
                 diagonal: np.ndarray | None = None) -> sp.csr_matrix:
        weights = (np.asarray(scale, float)[:, None] * element_matrix.ravel()[None, :]).ravel()
        data = np.bincount(self.scatter, weights=weights, minlength=self.nnz)
        if diagonal is not None:
            has = self.diag_pos >= 0
            data[self.diag_pos[has]] += diagonal[has]
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.ndof, self.ndof))


_PATTERNS: dict[tuple, SparsePattern] = {}


def pattern_for(grid: Grid) -> SparsePattern:
    key = (grid.dims, grid.elem_size)
    if key not in _PATTERNS:
        if len(_PATTERNS) > 8:
            _PATTERNS.clear()
        _PATTERNS[key] = SparsePattern(grid.edof, grid.dof_count)
    return _PATTERNS[key]


def assemble(grid: Grid, scale: np.ndarray, springs: SpringSet | None = None,
             ke: np.ndarray | None = None) -> sp.csr_matrix:
    """Global stiffness: sum of scale_e * K_e+ plus spring diagonal terms."""
    scale = np.asarray(scale, float)
    if scale.shape != (grid.elem_count,):
        raise ValueError(f"scale must have shape ({grid.elem_count},)")
    if not np.all(scale > 0):
        raise ValueError("element stiffness scales must be strictly positive")
    if ke is None:
        ke = reference_element_stiffness(elem_size=grid.elem_size)
    diag = springs.diagonal(grid.dof_count) if springs is not None and springs.dofs.size else None
    return pattern_for(grid).assemble(ke, scale, diag)


# -- solvers ------------------------------------------------------------------------

def pcg(A, b: np.ndarray, precond: Callable[[np.ndarray], np.ndarray],
        x0: np.ndarray | None = None, rel_tol: float = 1e-8,
        max_iter: int = 20_000) -> tuple[np.ndarray, int, float]:
    """Preconditioned conjugate gradients; returns (x, iterations, rel. residual)."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    res = np.linalg.norm(r) / bnorm
    if res <= rel_tol:
        return x, 0, res
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        a = rz / (p @ Ap)
        x += a * p
        r -= a * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= rel_tol:
            return x, it, res
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG did not converge in {max_iter} iterations", res)


def _amg_preconditioner(K: sp.csr_matrix, grid: Grid | None):
    import pyamg

    B = None
    if grid is not None:
        B = rigid_body_modes(grid)
    ml = pyamg.smoothed_aggregation_solver(K, B=B, max_coarse=2000)
    M = ml.aspreconditioner(cycle="V")
    return lambda r: M @ r


def rigid_body_modes(grid: Grid, free: np.ndarray | None = None) -> np.ndarray:
    x = grid.node_coords()
    d = grid.dof_per_node
    n = grid.node_count
    modes = []
    for c in range(d):
        m = np.zeros((n, d))
        m[:, c] = 1.0
        modes.append(m.ravel())
    rot_axes = [(0, 1), (1, 2), (2, 0)] if d == 3 else [(0, 1)]
    for a, b in rot_axes:
        m = np.zeros((n, d))
        m[:, a] = -x[:, b]
        m[:, b] = x[:, a]
        modes.append(m.ravel())
    B = np.stack(modes, axis=1)
    return B if free is None else B[free]


def _free_dofs(ndof: int, fixed_dofs) -> np.ndarray:
    fixed = np.zeros(ndof, bool)
    fixed[np.asarray(fixed_dofs, np.int64)] = True
    return np.flatnonzero(~fixed)


def solve(K: sp.spmatrix, loads: LoadCase | Sequence[LoadCase] | np.ndarray,
          fixed_dofs, rel_tol: float = 1e-8, x0: Sequence[np.ndarray] | None = None,
          method: str = "auto", max_iter: int = 20_000) -> SolveResult:
    """Solve K u = f for each load with zero displacement on ``fixed_dofs``.

    Fixed DOFs are eliminated (equivalent to zeroing their rows/columns and
    placing a unit diagonal). ``method`` is "auto", "direct", "dense" or
    "pcg" (Jacobi-preconditioned CG).
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    ndof = K.shape[0]
    if isinstance(loads, (LoadCase, np.ndarray)):
        loads = [loads]
    fs = [ld.vector(ndof) if isinstance(ld, LoadCase) else np.asarray(ld, float) for ld in loads]
    free = _free_dofs(ndof, fixed_dofs)
    K = sp.csr_matrix(K)
    Kff = K[free][:, free]
    return _solve_reduced(Kff, free, ndof, fs, rel_tol, x0, method, max_iter)


def _solve_reduced(Kff, free, ndof, fs, rel_tol, x0, method, max_iter,
                   grid: Grid | None = None) -> SolveResult:
    n = free.size
    if method == "auto":
        method = "direct" if n <= DIRECT_DOF_LIMIT else "pcg"
    rhs = [f[free] for f in fs]
    out, iters, worst = [], 0, 0.0
    if all(np.linalg.norm(b) == 0.0 for b in rhs):
        return SolveResult([np.zeros(ndof) for _ in fs], 0, 0.0)
    if method in ("direct", "dense"):
        if method == "dense":
            if n > DENSE_DOF_LIMIT:
                raise ValueError(f"dense path limited to {DENSE_DOF_LIMIT} DOFs")
            dense = Kff.toarray()
            sols = [np.linalg.solve(dense, b) for b in rhs]
        else:
            # K is SPD: symmetric ordering, diagonal pivots
            lu = spla.splu(sp.csc_matrix(Kff), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
            sols = [lu.solve(b) for b in rhs]
            # one refinement sweep recovers accuracy lost to high stiffness contrast
            sols = [x + lu.solve(b - Kff @ x) for b, x in zip(rhs, sols)]
        knorm = spla.norm(Kff, 1) if sp.issparse(Kff) else np.linalg.norm(Kff, 1)
        for b, x in zip(rhs, sols):
            bn = np.linalg.norm(b)
            # normwise backward error, the meaningful accuracy measure for a direct solve
            denom = knorm * np.linalg.norm(x) + bn
            res = 0.0 if bn == 0 else np.linalg.norm(Kff @ x - b) / denom
            worst = max(worst, res)
            out.append(x)
        if worst > rel_tol:
            raise SolverError("direct solve backward error above tolerance", worst)
    elif method in ("pcg", "amg"):
        if method == "amg":
            precond = _amg_preconditioner(sp.csr_matrix(Kff), None)
        else:
            inv_diag = 1.0 / Kff.diagonal()
            precond = lambda r: inv_diag * r  # noqa: E731
        for c, b in enumerate(rhs):
            guess = None if x0 is None or x0[c] is None else np.asarray(x0[c])[free]
            x, it, res = pcg(Kff, b, precond, guess, rel_tol, max_iter)
            iters += it
            worst = max(worst, res)
            out.append(x)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    full = []
    for x in out:
        u = np.zeros(ndof)
        u[free] = x
        full.append(u)
    return SolveResult(full, iters, worst)


def element_energy(grid: Grid, ua: np.ndarray, ub: np.ndarray | None = None,
                   ke: np.ndarray | None = None) -> np.ndarray:
    """Per-element bilinear product ua_e^T K_e+ ub_e (no design weighting)."""
    ua = np.asarray(ua, float)
    ub = ua if ub is None else np.asarray(ub, float)
    if ua.shape != (grid.dof_count,) or ub.shape != (grid.dof_count,):
        raise ValueError(f"displacement vectors must have length {grid.dof_count}")
    if ke is None:
        ke = reference_element_stiffness(elem_size=grid.elem_size)
    Ua = ua[grid.edof]
    Ub = Ua if ub is ua else ub[grid.edof]
    return np.einsum("ei,ij,ej->e", Ua, ke, Ub, optimize=True)


class StateSolver:
    """Repeated state solves on a fixed grid with fixed supports and springs.

    Keeps the sparsity pattern, the reduced-system extraction map and the
    previous solutions (used as warm starts by the iterative path).
    """

    def __init__(self, grid: Grid, fixed_dofs, springs: SpringSet | None = None,
                 material: ElasticMaterial | None = None, rel_tol: float = 1e-8,
                 method: str = "auto"):
        self.grid = grid
        self.material = material or ElasticMaterial()
        self.ke = reference_element_stiffness(self.material, grid.elem_size)
        self.springs = springs if springs is not None else SpringSet()
        self.rel_tol = rel_tol
        self.method = method
        if np.size(fixed_dofs) == 0 and self.springs.dofs.size == 0:
            raise ValueError("structure is unconstrained: no fixed DOFs and no springs")
        self.free = _free_dofs(grid.dof_count, fixed_dofs)
        self.fixed = np.setdiff1d(np.arange(grid.dof_count), self.free)
        self._spring_diag = self.springs.diagonal(grid.dof_count) if self.springs.dofs.size else None
        self._pattern = pattern_for(grid)
        self._submap: tuple | None = None
        self._previous: list[np.ndarray] | None = None
        self.total_solves = 0

    def _reduced(self, K: sp.csr_matrix) -> sp.csr_matrix:
        if self._submap is None:
            probe = sp.csr_matrix((np.arange(1, K.nnz + 1, dtype=float), K.indices, K.indptr),
                                  shape=K.shape)
            sub = probe[self.free][:, self.free].tocsr()
            sub.sort_indices()
            self._submap = (sub.data.astype(np.int64) - 1, sub.indices.copy(), sub.indptr.copy())
        take, ind, ptr = self._submap
        n = self.free.size
        return sp.csr_matrix((K.data[take], ind, ptr), shape=(n, n))

    def stiffness(self, scale: np.ndarray) -> sp.csr_matrix:
        scale = np.asarray(scale, float)
        if not np.all(scale > 0):
            raise ValueError("element stiffness scales must be strictly positive")
        K = self._pattern.assemble(self.ke, scale, self._spring_diag)
        K.sort_indices()
        return K

    def solve(self, scale: np.ndarray, loads: Sequence[LoadCase]) -> SolveResult:
        K = self.stiffness(scale)
        Kff = self._reduced(K)
        fs = [ld.vector(self.grid.dof_count) for ld in loads]
        res = _solve_reduced(Kff, self.free, self.grid.dof_count, fs, self.rel_tol,
                             self._previous, self.method, 20_000, self.grid)
        self._previous = res.displacements
        self.total_solves += 1
        return res
