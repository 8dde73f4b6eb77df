"""Benchmark catalog, per-method parameter bundles and design-quality metrics.

Coordinates are in full-scale element units: a case at scale ``s`` keeps the
physical extents and uses ``round(s * n)`` elements per axis. Two-dimensional
variants keep the (y, z) section under plane stress.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .convergence import ConvergenceConfig
from .driver import make_solver
from .fem import ElasticMaterial, LoadCase, SpringSet
from .grid import DomainMasks, Grid, RegionSelector, build_grid, select
from .problem import METHODS, MethodConfig, ObjectiveKind, ProblemSpec, QualityReport, RunRecord
from .sensitivity import beso_rho_min, objective

log = logging.getLogger(__name__)

ALPHA_BLACKWHITE = 1e-9

CASE_ALIASES = {
    "cantilever": "cantilever", "lshape": "lshape", "l-shape": "lshape",
    "multiload": "multiload", "multiloadcantilever": "multiload",
    "gripper": "gripper",
}

# full-scale (nx, ny, nz) meshes; extents equal the element counts
FULL_DIMS = {
    "cantilever": (50, 200, 100),
    "lshape": (30, 180, 180),
    "multiload": (50, 200, 100),
    "gripper": (50, 200, 100),
}
# each scaled (ny, nz) must be divisible by this for supports and loads to sit on nodes
ALIGNMENT = {"cantilever": 1, "lshape": 6, "multiload": 1, "gripper": 10}

GRIPPER_F_IN = 3.81e-3
GRIPPER_F_OUT = 3.81e-4
GRIPPER_K_IN = 1.5e-1
GRIPPER_K_OUT = 1.5


class InvalidScale(ValueError):
    pass


@dataclass
class BenchmarkCase:
    name: str
    scale: float
    problem: ProblemSpec
    configs: dict[str, MethodConfig] = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.problem.grid

    def __iter__(self):
        return iter((self.grid, self.problem, self.configs))


def canonical_case(name: str) -> str:
    key = name.replace("_", "").replace(" ", "").lower()
    if key not in CASE_ALIASES:
        raise ValueError(f"unknown benchmark case {name!r}; expected one of {sorted(FULL_DIMS)}")
    return CASE_ALIASES[key]


def scaled_dims(name: str, scale: float, ndim: int = 3) -> tuple[int, ...]:
    name = canonical_case(name)
    if not 0.0 < scale <= 1.0:
        raise InvalidScale(f"scale must lie in (0, 1], got {scale}")
    full = FULL_DIMS[name]
    dims = tuple(max(1, int(round(scale * n))) for n in full)
    q = ALIGNMENT[name]
    if dims[1] % q or dims[2] % q:
        # nearest scale whose rounded (ny, nz) are both multiples of q
        cands = [k * q / full[2] for k in range(1, full[2] // q + 1)]
        cands = [c for c in cands if round(c * full[1]) % q == 0]
        best = min(cands, key=lambda c: abs(c - scale))
        raise InvalidScale(f"{name}: scale {scale} gives (ny, nz)=({dims[1]}, {dims[2]}), "
                           f"which must be multiples of {q}; nearest valid scale is {best:.6g}")
    return dims if ndim == 3 else dims[1:]


def _make_grid(name: str, scale: float, ndim: int) -> Grid:
    dims = scaled_dims(name, scale, ndim)
    full = FULL_DIMS[canonical_case(name)]
    extent = full if ndim == 3 else full[1:]
    return build_grid(dims, tuple(e / n for e, n in zip(extent, dims)))


def _axis(grid: Grid, name: str) -> int:
    """Grid axis of a physical axis name; 2D grids hold (y, z)."""
    order = "xyz" if grid.ndim == 3 else "yz"
    if name not in order:
        raise KeyError(name)
    return order.index(name)


def _box(grid: Grid, **bounds) -> tuple[list[float], list[float]]:
    """Box limits from physical bounds like y=(0, 0) or z=(None, 10)."""
    lo = [-np.inf] * grid.ndim
    hi = [np.inf] * grid.ndim
    for name, (a, b) in bounds.items():
        if grid.ndim == 2 and name == "x":
            continue
        ax = _axis(grid, name)
        lo[ax] = -np.inf if a is None else a
        hi[ax] = np.inf if b is None else b
    return lo, hi


def _nodes(grid: Grid, **bounds) -> np.ndarray:
    lo, hi = _box(grid, **bounds)
    return select(grid, RegionSelector.box(lo, hi, target="nodes"))


def _elems(grid: Grid, **bounds) -> np.ndarray:
    lo, hi = _box(grid, **bounds)
    return select(grid, RegionSelector.box(lo, hi, target="elements"))


def lumped_weights(grid: Grid, nodes: np.ndarray) -> np.ndarray:
    """Tributary length/area of each node within a node-aligned box region.

    Along every axis the selection spans more than one node, interior nodes
    get the full element size and end nodes half of it; degenerate axes
    contribute a factor one.
    """
    ijk = grid.node_ijk(nodes)
    w = np.ones(len(nodes))
    for ax in range(grid.ndim):
        a, b = ijk[:, ax].min(), ijk[:, ax].max()
        if a == b:
            continue
        h = grid.elem_size[ax]
        w *= np.where((ijk[:, ax] == a) | (ijk[:, ax] == b), 0.5 * h, h)
    return w


def _component(grid: Grid, name: str) -> int:
    return _axis(grid, name)


def _symmetry_x(grid: Grid) -> np.ndarray:
    if grid.ndim == 2:
        return np.zeros(0, np.int64)
    return grid.node_dofs(_nodes(grid, x=(0, 0)), [0])


def _edge_load(grid: Grid, y: float, z: float, total: float, label: str) -> LoadCase:
    nodes = _nodes(grid, y=(y, y), z=(z, z))
    w = lumped_weights(grid, nodes)
    return LoadCase(grid.node_dofs(nodes, [_component(grid, "z")]), total * w / w.sum(), label)


def _cantilever(grid: Grid, multi: bool) -> tuple[list[LoadCase], DomainMasks]:
    L, H = grid.extent[_axis(grid, "y")], grid.extent[_axis(grid, "z")]
    fixed = np.union1d(grid.node_dofs(_nodes(grid, y=(0, 0))), _symmetry_x(grid))
    loads = [_edge_load(grid, L, 0.0, -1.0, "bottom edge, downward")]
    if multi:
        loads.append(_edge_load(grid, L, H, 1.0, "top edge, upward"))
    return loads, DomainMasks(fixed_dofs=fixed)


def _lshape(grid: Grid) -> tuple[list[LoadCase], DomainMasks]:
    L = grid.extent[_axis(grid, "y")]
    third = L / 3.0
    void = _elems(grid, y=(third, None), z=(third, None))
    fixed = np.union1d(grid.node_dofs(_nodes(grid, y=(None, third), z=(L, L))), _symmetry_x(grid))
    # spread the point load at (x=0, y=L, z=L/6) over the nearest face on y = L
    az = _axis(grid, "z")
    hz = grid.elem_size[az]
    z0 = L / 6.0 - hz
    zb = (z0, z0 + hz)
    if grid.ndim == 3:
        nodes = _nodes(grid, x=(0, grid.elem_size[0]), y=(L, L), z=zb)
    else:
        nodes = _nodes(grid, y=(L, L), z=zb)
    load = LoadCase(grid.node_dofs(nodes, [_component(grid, "z")]),
                    np.full(len(nodes), -1.0 / len(nodes)), "point load")
    return [load], DomainMasks(passive_void=void, fixed_dofs=fixed)


def _gripper(grid: Grid) -> tuple[list[LoadCase], DomainMasks, SpringSet]:
    Ly, Hz = grid.extent[_axis(grid, "y")], grid.extent[_axis(grid, "z")]
    band = 0.1 * Hz  # 0.2 of the full height of 2 relative units
    fixed = grid.node_dofs(_nodes(grid, y=(0, 0), z=(None, band)))
    top = grid.node_dofs(_nodes(grid, z=(Hz, Hz)), [_component(grid, "z")])
    fixed = np.union1d(np.union1d(fixed, top), _symmetry_x(grid))
    cy, cz = _component(grid, "y"), _component(grid, "z")
    in_nodes = _nodes(grid, y=(0, 0), z=(Hz - band, Hz))
    out_nodes = _nodes(grid, y=(0.9 * Ly, Ly), z=(Hz - band, Hz - band))
    w_in, w_out = lumped_weights(grid, in_nodes), lumped_weights(grid, out_nodes)
    in_dofs = grid.node_dofs(in_nodes, [cy])
    out_dofs = grid.node_dofs(out_nodes, [cz])
    loads = [LoadCase(in_dofs, GRIPPER_F_IN * w_in, "input traction"),
             LoadCase(out_dofs, GRIPPER_F_OUT * w_out, "output dummy load")]
    springs = SpringSet(in_dofs, GRIPPER_K_IN * w_in) + SpringSet(out_dofs, GRIPPER_K_OUT * w_out)
    solid = np.union1d(_elems(grid, y=(0, band), z=(Hz - band, Hz)),
                       _elems(grid, y=(0.9 * Ly, Ly), z=(Hz - band, Hz)))
    return loads, DomainMasks(passive_solid=solid, fixed_dofs=fixed), springs


# -- parameter tables ----------------------------------------------------------------

N_STEPS = {"cantilever": 12, "lshape": 8, "multiload": 12, "gripper": 8}
VARTOP_PARAMS = {  # (m, tau)
    "cantilever": (3.0, 1.0), "lshape": (5.0, 1.5), "multiload": (3.0, 1.5), "gripper": (100.0, 0.5),
}
LEVELSET_PARAMS = {  # (m, tau, dt, s)
    "cantilever": (3.0, 1.0, 0.1, 1e-4), "lshape": (5.0, 1.0, 0.1, 5e-7),
    "multiload": (3.0, 1.0, 0.1, 1e-3), "gripper": (100.0, 0.5, 0.05, 1e-2),
}
MAX_ITER = {"simp1": 500, "simp2": 1500, "simp3": 500, "beso": 800, "vartop": 800,
            "levelset": 3000}


def method_configs(name: str) -> dict[str, MethodConfig]:
    """Default parameters and tolerances for every method on case ``name``."""
    name = canonical_case(name)
    mech = name == "gripper"
    tol_J = 1.0 if mech else 1e-3
    out: dict[str, MethodConfig] = {}
    for method in METHODS:
        window = {"vartop": 2, "levelset": 5}.get(method, 3)
        conv = ConvergenceConfig(tol_volume=5e-3 if method == "levelset" else 1e-3, tol_J=tol_J,
                                 tol_topology=2.5e-3, window=window, max_iter=MAX_ITER[method])
        cfg = MethodConfig(method=method, convergence=conv)
        if method.startswith("simp"):
            cfg = cfg.with_overrides(p=3.0, r_min=3.0, move=0.1 if mech else 0.2,
                                     eta=0.3 if mech else 0.5)
            if method == "simp2":
                cfg = cfg.with_overrides(n_steps=N_STEPS[name], k=-2.0)
        elif method == "beso":
            cfg = cfg.with_overrides(r_min=3.0, ER=0.01, AR_max=0.1, p=2.0 if mech else 3.0,
                                     move=0.1)
        elif method == "vartop":
            m, tau = VARTOP_PARAMS[name]
            cfg = cfg.with_overrides(m=m, tau=tau, n_steps=N_STEPS[name], k=-2.0)
        else:
            m, tau, dt, s = LEVELSET_PARAMS[name]
            cfg = cfg.with_overrides(m=m, tau=tau, dt=dt, s=s, n_steps=1, kappa=1.0)
        out[method] = cfg
    return out


def build_case(name: str, scale: float, ndim: int = 3) -> BenchmarkCase:
    """Wire grid, supports, loads, passive regions and default parameters."""
    name = canonical_case(name)
    if ndim not in (2, 3):
        raise ValueError("ndim must be 2 or 3")
    grid = _make_grid(name, scale, ndim)
    springs = SpringSet()
    if name in ("cantilever", "multiload"):
        loads, masks = _cantilever(grid, multi=name == "multiload")
        kind = ObjectiveKind.MULTILOAD if name == "multiload" else ObjectiveKind.COMPLIANCE
        f, alpha = 0.1, 1e-6
    elif name == "lshape":
        loads, masks = _lshape(grid)
        kind, f, alpha = ObjectiveKind.COMPLIANCE, 0.1, 1e-6
    else:
        loads, masks, springs = _gripper(grid)
        kind, f, alpha = ObjectiveKind.MECHANISM, 0.15, 1e-2
    problem = ProblemSpec(grid=grid, kind=kind, loads=loads, masks=masks, springs=springs,
                          volume_fraction=f, material=ElasticMaterial(alpha=alpha),
                          name=name if ndim == 3 else f"{name}-2d")
    return BenchmarkCase(name, scale, problem, method_configs(name))


# -- post-processing -----------------------------------------------------------------

def stiff_measure(record_or_design, method: str, problem: ProblemSpec, p: float = 3.0) -> np.ndarray:
    """Element field in [0, 1] whose design-domain mean is the stiff fraction."""
    if isinstance(record_or_design, RunRecord):
        rec = record_or_design
        if method in ("vartop", "levelset"):
            return np.asarray(rec.stiff_fraction, float)
        design = np.asarray(rec.design, float)
    else:
        design = np.asarray(record_or_design, float)
    if method == "beso":
        rmin = beso_rho_min(problem.material.alpha, p)
        return np.clip((design - rmin) / (1.0 - rmin), 0.0, 1.0)
    return design


def threshold_design(measure: np.ndarray, problem: ProblemSpec) -> np.ndarray:
    """Binary field keeping floor(stiff volume) elements: the top-ranked design elements become solid.

    Ties are broken by element index (lower index first).
    """
    measure = np.asarray(measure, float)
    design = problem.design_mask
    target = float(np.sum(measure[design]))
    count = int(math.floor(target + 1e-9))
    binary = np.zeros(measure.size)
    binary[problem.masks.passive_solid] = 1.0
    free = np.flatnonzero(problem.active_mask)
    n_free = max(0, min(free.size, count - problem.masks.passive_solid.size))
    order = free[np.lexsort((free, -measure[free]))]
    binary[order[:n_free]] = 1.0
    if 0 < n_free < free.size and measure[order[n_free - 1]] == measure[order[n_free]]:
        log.warning("projection threshold falls on tied values; ties broken by element index")
    return binary


def postprocess_projection(design: np.ndarray | RunRecord, method: str, problem: ProblemSpec,
                           p: float = 3.0) -> tuple[np.ndarray, float]:
    """Black-and-white projection plus one solve at contrast 1e-9. Returns (binary, J_bw)."""
    measure = stiff_measure(design, method, problem, p)
    binary = threshold_design(measure, problem)
    solver = make_solver(problem, rel_tol=1e-9)
    scale = np.where(binary > 0.5, 1.0, ALPHA_BLACKWHITE)
    sol = solver.solve(scale, problem.loads)
    return binary, objective(problem.kind, sol, problem.loads)


def mean_bar_width(binary: np.ndarray, grid: Grid) -> float:
    """Stiff volume over the solid/void interface area (domain-boundary faces excluded)."""
    solid = np.asarray(binary) > 0.5
    area = 0.0
    for ax, (e, f) in enumerate(grid.elem_neighbors):
        face = grid.elem_volume / grid.elem_size[ax]
        area += face * np.count_nonzero(solid[e] != solid[f])
    vol = np.count_nonzero(solid) * grid.elem_volume
    return math.inf if area == 0 else vol / area


def assess(record: RunRecord, problem: ProblemSpec, cfg: MethodConfig | None = None) -> QualityReport:
    p = cfg.p if cfg is not None else 3.0
    binary, J_bw = postprocess_projection(record, record.method, problem, p)
    vol = float(np.mean(binary[problem.design_mask]))
    report = QualityReport(J_blackwhite=J_bw, J_blackwhite_normalized=J_bw / record.J0,
                           mean_bar_width=mean_bar_width(binary, problem.grid),
                           iteration_count=record.iterations, volume_fraction_final=vol)
    record.quality = report
    return report
