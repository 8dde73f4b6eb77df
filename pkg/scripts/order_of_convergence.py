"""Fit the order of convergence p of each method from exported history CSVs.

    python scripts/order_of_convergence.py out/compare/*_history.csv

The fit uses the rows of the last time-step and takes the final objective
value as the converged reference.
"""
import sys
from pathlib import Path

import numpy as np

from topobench.convergence import NotEstimable, order_of_convergence
from topobench.export import read_history


def fit(path: Path) -> str:
    cols = read_history(path)
    step, J = cols["step"], cols["J"]
    rows = np.flatnonzero(step == step[-1]) if step[-1] > 0 else np.arange(1, len(J))
    seg = J[rows]
    try:
        p, mu = order_of_convergence(seg, J_star=seg[-1], J0=J[0])
    except NotEstimable as exc:
        return f"{path.stem:24s} not estimable: {exc}"
    return f"{path.stem:24s} p = {p:5.2f}   mu = {mu:6.3f}   ({seg.size} samples)"


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    for arg in sys.argv[1:]:
        print(fit(Path(arg)))
