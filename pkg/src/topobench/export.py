"""On-disk artifacts: legacy-VTK fields, CSV histories and summary tables.

Histories store floats with ``repr`` so a re-read reproduces every value
bit for bit; VTK fields are printed with 9 significant digits.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid
from .problem import METHOD_LABELS, QualityReport, RunRecord

HISTORY_COLUMNS = ("iter", "step", "J", "J_over_J0", "vol_frac", "dJ_crit", "dtopo_crit", "lambda")
_RECORD_FIELDS = ("iteration", "step", "J", "J_over_J0", "vol_frac", "dJ_crit", "dtopo_crit", "lam")


class ExportError(OSError):
    """Raised when an artifact cannot be written or parsed; carries the path."""


def _open_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc


# -- VTK ------------------------------------------------------------------------

def export_field(values: np.ndarray, grid: Grid, path: str | Path, name: str = "design",
                 extra: dict[str, np.ndarray] | None = None) -> Path:
    """Write element or nodal fields as legacy-VTK ASCII structured points.

    Element-sized arrays go to CELL_DATA, node-sized arrays to POINT_DATA.
    ``extra`` adds more named fields to the same file.
    """
    path = Path(path)
    fields_ = {name: values, **(extra or {})}
    cells, points = {}, {}
    for key, arr in fields_.items():
        arr = np.asarray(arr, float).ravel()
        if arr.size == grid.elem_count:
            cells[key] = arr
        elif arr.size == grid.node_count:
            points[key] = arr
        else:
            raise ValueError(f"field {key!r} has {arr.size} values; grid has "
                             f"{grid.elem_count} elements and {grid.node_count} nodes")
    dims = list(grid.node_dims) + [1] * (3 - grid.ndim)
    spacing = list(grid.elem_size) + [1.0] * (3 - grid.ndim)
    lines = ["# vtk DataFile Version 3.0", f"topobench {name}", "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS " + " ".join(str(d) for d in dims),
             "ORIGIN 0 0 0",
             "SPACING " + " ".join(f"{h:.9g}" for h in spacing)]
    for section, data, count in (("CELL_DATA", cells, grid.elem_count),
                                 ("POINT_DATA", points, grid.node_count)):
        if not data:
            continue
        lines.append(f"{section} {count}")
        for key, arr in data.items():
            lines += [f"SCALARS {key} double 1", "LOOKUP_TABLE default"]
            lines += [" ".join(f"{v:.9g}" for v in arr[i:i + 9]) for i in range(0, arr.size, 9)]
    with _open_write(path) as fh:
        fh.write("\n".join(lines) + "\n")
    return path


@dataclass
class VtkField:
    dimensions: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    cell_data: dict[str, np.ndarray] = field(default_factory=dict)
    point_data: dict[str, np.ndarray] = field(default_factory=dict)


def read_field(path: str | Path) -> VtkField:
    """Parse a file written by :func:`export_field`."""
    path = Path(path)
    try:
        tokens = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc}") from exc
    if not tokens[0].startswith("# vtk DataFile") or tokens[3].strip() != "DATASET STRUCTURED_POINTS":
        raise ExportError(f"{path}: not a legacy-VTK structured-points file")
    head = {}
    for line in tokens[4:7]:
        key, *vals = line.split()
        head[key] = vals
    out = VtkField(tuple(int(v) for v in head["DIMENSIONS"]),
                   tuple(float(v) for v in head["SPACING"]),
                   tuple(float(v) for v in head["ORIGIN"]))
    words = " ".join(tokens[7:]).split()
    i, target, count = 0, None, 0
    while i < len(words):
        w = words[i]
        if w in ("CELL_DATA", "POINT_DATA"):
            target = out.cell_data if w == "CELL_DATA" else out.point_data
            count = int(words[i + 1])
            i += 2
        elif w == "SCALARS":
            name = words[i + 1]
            i += 6  # SCALARS name type ncomp LOOKUP_TABLE table
            target[name] = np.array(words[i:i + count], dtype=float)
            i += count
        else:
            raise ExportError(f"{path}: unexpected token {w!r}")
    return out


# -- CSV histories -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def export_history(record: RunRecord, path: str | Path) -> Path:
    """One row per recorded iteration, row 0 being the full-solid reference."""
    if not len(record):
        raise ValueError("cannot export an empty run record")
    path = Path(path)
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in zip(*(getattr(record, f) for f in _RECORD_FIELDS)):
            w.writerow([_fmt(v) for v in row])
    return path


def read_history(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a history CSV; ``iter`` and ``step`` as ints, the rest as floats."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != HISTORY_COLUMNS:
        raise ExportError(f"{path}: unexpected header {rows[:1]}")
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(HISTORY_COLUMNS)
    out = {}
    for name, col in zip(HISTORY_COLUMNS, cols):
        out[name] = np.array(col, dtype=int if name in ("iter", "step") else float)
    return out


def record_from_history(cols: dict[str, np.ndarray], method: str, case: str = "") -> RunRecord:
    rec = RunRecord(method=method, case=case)
    for name, f in zip(HISTORY_COLUMNS, _RECORD_FIELDS):
        conv = int if name in ("iter", "step") else float
        setattr(rec, f, [conv(v) for v in cols[name]])
    rec.J0 = rec.J[0] if rec.J else math.nan
    return rec


# -- summary tables ------------------------------------------------------------------

SUMMARY_COLUMNS = ("method", "label", "iterations", "converged", "J_over_J0", "J_bw",
                   "J_bw_over_J0", "mean_bar_width", "vol_frac", "message")


@dataclass
class SummaryRow:
    method: str
    iterations: int
    converged: bool
    J_over_J0: float
    quality: QualityReport | None
    vol_frac: float
    message: str = ""

    def cells(self) -> list[str]:
        q = self.quality
        nan = math.nan
        return [self.method, METHOD_LABELS.get(self.method, self.method), str(self.iterations),
                "yes" if self.converged else "no", f"{self.J_over_J0:.6g}",
                f"{q.J_blackwhite if q else nan:.6g}", f"{q.J_blackwhite_normalized if q else nan:.6g}",
                f"{q.mean_bar_width if q else nan:.6g}", f"{self.vol_frac:.6g}", self.message]

    @classmethod
    def from_record(cls, rec: RunRecord) -> "SummaryRow":
        return cls(rec.method, rec.iterations, rec.converged,
                   rec.J_over_J0[-1] if rec.J_over_J0 else math.nan, rec.quality,
                   rec.vol_frac[-1] if rec.vol_frac else math.nan, rec.message)


def write_summary(rows: Iterable[SummaryRow], csv_path: str | Path,
                  txt_path: str | Path | None = None, title: str = "") -> list[Path]:
    """Summary as CSV and, optionally, an aligned plain-text table."""
    table = [r.cells() for r in rows]
    out = []
    with _open_write(Path(csv_path)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(table)
    out.append(Path(csv_path))
    if txt_path is not None:
        with _open_write(Path(txt_path)) as fh:
            fh.write(format_table(SUMMARY_COLUMNS[1:-1], [t[1:-1] for t in table], title))
        out.append(Path(txt_path))
    return out


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]], title: str = "") -> str:
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w)  # noqa: E731
                              for i, (c, w) in enumerate(zip(r, widths)))
    lines = ([title] if title else []) + [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"
