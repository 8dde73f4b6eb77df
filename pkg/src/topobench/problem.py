"""Problem definitions, per-method parameters and run records."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any

import numpy as np

from .convergence import ConvergenceConfig
from .fem import ElasticMaterial, LoadCase, SpringSet
from .grid import DomainMasks, Grid


class ObjectiveKind(str, Enum):
    COMPLIANCE = "compliance"
    MULTILOAD = "multiload"
    MECHANISM = "mechanism"


METHODS = ("simp1", "simp2", "simp3", "beso", "vartop", "levelset")
METHOD_LABELS = {
    "simp1": "SIMP(I)", "simp2": "SIMP(II)", "simp3": "SIMP(III)",
    "beso": "SOFTBESO", "vartop": "VARTOP", "levelset": "Level-set",
}


@dataclass
class ProblemSpec:
    """State problem plus volume target. Mechanism loads are (input, dummy output)."""

    grid: Grid
    kind: ObjectiveKind
    loads: list[LoadCase]
    masks: DomainMasks = field(default_factory=DomainMasks)
    springs: SpringSet = field(default_factory=SpringSet)
    volume_fraction: float = 0.1
    material: ElasticMaterial = field(default_factory=ElasticMaterial)
    name: str = ""

    def __post_init__(self):
        self.kind = ObjectiveKind(self.kind)
        self.masks.validate(self.grid)
        if not 0.0 < self.volume_fraction <= 1.0:
            raise ValueError("volume_fraction must lie in (0, 1]")
        if self.kind is ObjectiveKind.MULTILOAD and len(self.loads) < 2:
            raise ValueError("multi-load problems need at least two load cases")
        if self.kind is ObjectiveKind.MECHANISM:
            if len(self.loads) != 2:
                raise ValueError("mechanism problems need exactly (input, output) load cases")
            if self.springs.dofs.size == 0:
                raise ValueError("mechanism problems need port springs")
        if self.kind is ObjectiveKind.COMPLIANCE and len(self.loads) != 1:
            raise ValueError("compliance problems take a single load case")

    @property
    def design_mask(self) -> np.ndarray:
        return self.masks.design_domain(self.grid)

    @property
    def active_mask(self) -> np.ndarray:
        return self.masks.active(self.grid)

    @property
    def design_volume(self) -> float:
        return float(np.count_nonzero(self.design_mask)) * self.grid.elem_volume


@dataclass
class MethodConfig:
    """Parameters for one method on one case. Unused fields are ignored."""

    method: str
    p: float = 3.0
    r_min: float = 3.0
    move: float = 0.2
    eta: float = 0.5
    n_steps: int = 1
    k: float = -2.0
    ER: float = 0.01
    AR_max: float = 0.1
    m: float = 3.0
    tau: float = 1.0
    dt: float = 0.1
    s: float = 1e-4
    kappa: float = 1.0
    relaxation: float = 0.0
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if isinstance(self.convergence, dict):
            self.convergence = ConvergenceConfig(**self.convergence)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MethodConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown method parameters: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "MethodConfig":
        conv = kw.pop("convergence", None)
        out = replace(self, **kw)
        if conv:
            out = replace(out, convergence=replace(out.convergence, **conv))
        return out


@dataclass
class QualityReport:
    J_blackwhite: float
    J_blackwhite_normalized: float
    mean_bar_width: float
    iteration_count: int
    volume_fraction_final: float


@dataclass
class RunRecord:
    """Iteration history and final design of one optimisation run.

    Row 0 is the full-material reference iteration that fixes J0.
    """

    method: str
    case: str = ""
    iteration: list[int] = field(default_factory=list)
    step: list[int] = field(default_factory=list)
    J: list[float] = field(default_factory=list)
    J_over_J0: list[float] = field(default_factory=list)
    vol_frac: list[float] = field(default_factory=list)
    dJ_crit: list[float] = field(default_factory=list)
    dtopo_crit: list[float] = field(default_factory=list)
    lam: list[float] = field(default_factory=list)
    converged: bool = False
    step_converged: list[bool] = field(default_factory=list)
    message: str = ""
    design: np.ndarray | None = None
    nodal: np.ndarray | None = None
    stiff_fraction: np.ndarray | None = None
    J0: float = float("nan")
    quality: QualityReport | None = None

    def append(self, *, it: int, step: int, J: float, vol: float, dJ: float,
               dtopo: float, lam: float) -> None:
        if not self.J:
            self.J0 = J
        self.iteration.append(it)
        self.step.append(step)
        self.J.append(float(J))
        self.J_over_J0.append(float(J / self.J0) if self.J0 != 0 else float("nan"))
        self.vol_frac.append(float(vol))
        self.dJ_crit.append(float(dJ))
        self.dtopo_crit.append(float(dtopo))
        self.lam.append(float(lam))

    def __len__(self) -> int:
        return len(self.J)

    @property
    def iterations(self) -> int:
        """Optimisation iterations, excluding the reference row."""
        return max(len(self.J) - 1, 0)

    def step_history(self, step: int) -> np.ndarray:
        s = np.asarray(self.step)
        return np.asarray(self.J)[s == step]
