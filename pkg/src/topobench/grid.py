"""Structured hexahedral (and 2D quadrilateral) grids.

Numbering conventions
---------------------
Nodes and elements are numbered lexicographically with x varying fastest::

    node(i, j, k)    = i + (nx + 1) * (j + (ny + 1) * k)
    element(i, j, k) = i + nx * (j + ny * k)

Element-local node order follows the usual trilinear hexahedron::

           7 -------- 6
          /|         /|          z
         4 -------- 5 |          |  y
         | |        | |          | /
         | 3 -------|-2          |/
         |/         |/           o---- x
         0 -------- 1

i.e. (0,0,0) (1,0,0) (1,1,0) (0,1,0) (0,0,1) (1,0,1) (1,1,1) (0,1,1) in
local (di, dj, dk) offsets. The 2D mode keeps only the bottom face
(0, 1, 2, 3). DOF ``d`` of node ``n`` has global index ``n * dof_per_node + d``.

Coordinates are never stored per node; they are generated from indices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

log = logging.getLogger(__name__)

_HEX_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=np.int64)
_QUAD_OFFSETS = _HEX_OFFSETS[:4, :2]

SELECTION_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform structured grid of ``dims`` elements with edge lengths ``elem_size``.

    ``dims`` has two entries in 2D mode (a testing convenience; plane
    stress, unit thickness) and three in 3D.
    """

    dims: tuple[int, ...]
    elem_size: tuple[float, ...]

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise ValueError(f"dims must have 2 or 3 entries, got {self.dims}")
        if len(self.elem_size) != len(self.dims):
            raise ValueError("elem_size must have one entry per axis")
        if any(int(n) < 1 for n in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if any(not h > 0 for h in self.elem_size):
            raise ValueError(f"elem_size must be positive, got {self.elem_size}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def dof_per_node(self) -> int:
        return self.ndim

    @property
    def node_dims(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.dims)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.node_dims))

    @property
    def elem_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def dof_count(self) -> int:
        return self.node_count * self.dof_per_node

    @property
    def nodes_per_elem(self) -> int:
        return 2 ** self.ndim

    @property
    def elem_volume(self) -> float:
        return float(np.prod(self.elem_size))

    @property
    def volume(self) -> float:
        return self.elem_volume * self.elem_count

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims, float) * np.asarray(self.elem_size)

    @property
    def h(self) -> float:
        """Typical element size (mean edge length)."""
        return float(np.mean(self.elem_size))

    # -- indexing ---------------------------------------------------------
    def node_index(self, *ijk) -> np.ndarray:
        idx = np.zeros(np.broadcast(*ijk).shape, dtype=np.int64)
        stride = 1
        for a, n in zip(ijk, self.node_dims):
            idx = idx + np.asarray(a, dtype=np.int64) * stride
            stride *= n
        return idx

    def elem_index(self, *ijk) -> np.ndarray:
        idx = np.zeros(np.broadcast(*ijk).shape, dtype=np.int64)
        stride = 1
        for a, n in zip(ijk, self.dims):
            idx = idx + np.asarray(a, dtype=np.int64) * stride
            stride *= n
        return idx

    def node_ijk(self, nodes=None) -> np.ndarray:
        """(n, ndim) integer lattice coordinates of ``nodes`` (default: all)."""
        nodes = np.arange(self.node_count) if nodes is None else np.asarray(nodes)
        return np.stack(np.unravel_index(nodes, self.node_dims, order="F"), axis=-1)

    def elem_ijk(self, elems=None) -> np.ndarray:
        elems = np.arange(self.elem_count) if elems is None else np.asarray(elems)
        return np.stack(np.unravel_index(elems, self.dims, order="F"), axis=-1)

    def node_coords(self, nodes=None) -> np.ndarray:
        return self.node_ijk(nodes) * np.asarray(self.elem_size)

    def elem_centroids(self, elems=None) -> np.ndarray:
        return (self.elem_ijk(elems) + 0.5) * np.asarray(self.elem_size)

    @cached_property
    def connectivity(self) -> np.ndarray:
        """(elem_count, 2**ndim) element-to-node table."""
        offsets = _HEX_OFFSETS if self.ndim == 3 else _QUAD_OFFSETS
        base = self.elem_ijk()
        corners = base[:, None, :] + offsets[None, :, :]
        return self.node_index(*np.moveaxis(corners, -1, 0))

    @cached_property
    def edof(self) -> np.ndarray:
        """(elem_count, nodes_per_elem * dof_per_node) element DOF table."""
        d = self.dof_per_node
        return (self.connectivity[:, :, None] * d + np.arange(d)).reshape(self.elem_count, -1)

    def node_dofs(self, nodes, components: Sequence[int] | None = None) -> np.ndarray:
        comps = range(self.dof_per_node) if components is None else components
        nodes = np.asarray(nodes, dtype=np.int64)
        return np.sort((nodes[:, None] * self.dof_per_node + np.asarray(list(comps))).ravel())

    @cached_property
    def elem_neighbors(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Face-neighbour pairs (e, e') along each axis, e' = e + 1 step."""
        pairs = []
        ijk = self.elem_ijk()
        for ax in range(self.ndim):
            mask = ijk[:, ax] < self.dims[ax] - 1
            e = np.nonzero(mask)[0]
            shifted = ijk[mask].copy()
            shifted[:, ax] += 1
            pairs.append((e, self.elem_index(*shifted.T)))
        return pairs


def build_grid(dims: Sequence[int], elem_size: float | Sequence[float] = 1.0) -> Grid:
    """Build a grid; two ``dims`` entries give the 2D quadrilateral mode."""
    dims = tuple(int(n) for n in dims)
    if np.isscalar(elem_size):
        elem_size = (float(elem_size),) * len(dims)
    return Grid(dims, tuple(float(h) for h in elem_size))


# -- selections --------------------------------------------------------------

@dataclass(frozen=True)
class RegionSelector:
    """Geometric selection on a grid.

    kind="box": ``bounds`` = (lo, hi) corner arrays; None entries mean
    unbounded. Nodes are selected when inside the closed box; elements when
    the whole cell lies inside it.
    kind="plane": ``bounds`` = (axis, coordinate). Elements are selected
    when one of their faces lies on the plane.
    kind="point": ``bounds`` = (point, radius). Nodes or element centroids
    within the closed ball are selected.

    Comparisons use an absolute tolerance of 1e-9 times the element size.
    """

    kind: Literal["box", "plane", "point"]
    bounds: tuple
    target: Literal["nodes", "elements"] = "nodes"

    @classmethod
    def box(cls, lo=None, hi=None, target="nodes"):
        return cls("box", (lo, hi), target)

    @classmethod
    def plane(cls, axis: int, coord: float, target="nodes"):
        return cls("plane", (int(axis), float(coord)), target)

    @classmethod
    def point(cls, point, radius: float = 0.0, target="nodes"):
        return cls("point", (tuple(point), float(radius)), target)


def _box_limits(grid: Grid, lo, hi):
    ext = grid.extent
    lo = [-np.inf if lo is None or lo[a] is None else lo[a] for a in range(grid.ndim)]
    hi = [np.inf if hi is None or hi[a] is None else hi[a] for a in range(grid.ndim)]
    lo = np.clip(np.asarray(lo, float), 0.0, ext)
    hi = np.clip(np.asarray(hi, float), 0.0, ext)
    return lo, hi


def select(grid: Grid, selector: RegionSelector) -> np.ndarray:
    """Sorted, duplicate-free indices of the nodes/elements picked by ``selector``."""
    tol = SELECTION_RTOL * min(grid.elem_size)
    kind, target = selector.kind, selector.target
    if target not in ("nodes", "elements"):
        raise ValueError(f"unknown selection target {target!r}")

    if kind == "box":
        lo, hi = _box_limits(grid, *selector.bounds)
        if target == "nodes":
            x = grid.node_coords()
            mask = np.all((x >= lo - tol) & (x <= hi + tol), axis=1)
        else:
            x0 = grid.elem_ijk() * np.asarray(grid.elem_size)
            x1 = x0 + np.asarray(grid.elem_size)
            mask = np.all((x0 >= lo - tol) & (x1 <= hi + tol), axis=1)
    elif kind == "plane":
        axis, coord = selector.bounds
        if not 0 <= axis < grid.ndim:
            raise ValueError(f"plane axis {axis} out of range")
        if target == "nodes":
            mask = np.abs(grid.node_coords()[:, axis] - coord) <= tol
        else:
            x0 = grid.elem_ijk()[:, axis] * grid.elem_size[axis]
            x1 = x0 + grid.elem_size[axis]
            mask = (np.abs(x0 - coord) <= tol) | (np.abs(x1 - coord) <= tol)
    elif kind == "point":
        point, radius = selector.bounds
        x = grid.node_coords() if target == "nodes" else grid.elem_centroids()
        dist = np.linalg.norm(x - np.asarray(point, float), axis=1)
        mask = dist <= radius + tol
    else:
        raise ValueError(f"unknown selector kind {kind!r}")

    out = np.flatnonzero(mask)
    if out.size == 0:
        log.warning("empty selection for %s", selector)
    return out


@dataclass
class DomainMasks:
    """Passive element sets and fixed DOFs for a problem on ``grid``."""

    passive_void: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    passive_solid: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        self.passive_void = np.unique(np.asarray(self.passive_void, np.int64))
        self.passive_solid = np.unique(np.asarray(self.passive_solid, np.int64))
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, np.int64))
        if np.intersect1d(self.passive_void, self.passive_solid).size:
            raise ValueError("passive_void and passive_solid overlap")

    def validate(self, grid: Grid) -> None:
        for name in ("passive_void", "passive_solid"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() >= grid.elem_count):
                raise ValueError(f"{name} has indices outside the grid")
        if self.fixed_dofs.size and (self.fixed_dofs.min() < 0
                                     or self.fixed_dofs.max() >= grid.dof_count):
            raise ValueError("fixed_dofs outside [0, dof_count)")

    def active(self, grid: Grid) -> np.ndarray:
        """Boolean mask of elements free to change."""
        mask = np.ones(grid.elem_count, bool)
        mask[self.passive_void] = False
        mask[self.passive_solid] = False
        return mask

    def design_domain(self, grid: Grid) -> np.ndarray:
        """Boolean mask of elements that count towards the volume fraction."""
        mask = np.ones(grid.elem_count, bool)
        mask[self.passive_void] = False
        return mask
