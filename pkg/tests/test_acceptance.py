"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The benchmark runs are shared between criteria through module-level caches,
so running a single criterion in isolation pays for the runs it needs.
Set TOPOBENCH_ALLOW_LARGE=1 to include the full-scale reference run.
"""
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from _toy import toy_problem
from conftest import ACCEPTANCE
from test_fem import _cantilever, _permutation, quadrature_stiffness
from test_sensitivity import KINDS, TOL, _central_fd, _field, _J
from topobench.bench import build_case, postprocess_projection
from topobench.beso import BesoStepper, run_beso
from topobench.cli import RUNNERS
from topobench.convergence import (evaluate, order_of_convergence, replay_objective_criterion,
                                   tolerance_schedule, volume_schedule)
from topobench.export import export_history, read_history
from topobench.fem import (ElasticMaterial, assemble, element_energy, reference_element_stiffness,
                           solve)
from topobench.grid import build_grid
from topobench.problem import METHODS
from topobench.sensitivity import (beso_sensitivity, beso_stiffness, chi_stiffness,
                                   relaxation_factor, simp_sensitivity, simp_stiffness,
                                   vartop_pseudo_energy)

pytestmark = pytest.mark.acceptance


def record(n, ok, detail):
    ACCEPTANCE[n] = ("PASS" if ok else "FAIL", detail)
    assert ok, detail


class _Runs:
    """Lazily computed benchmark runs keyed by (case, scale, ndim, method)."""

    def __init__(self):
        self.cache = {}

    def get(self, case_name, scale, ndim, method):
        key = (case_name, scale, ndim, method)
        if key not in self.cache:
            case = build_case(case_name, scale, ndim)
            cfg = case.configs[method]
            extra = {}
            if method == "beso":
                extra["stepper"] = BesoStepper(case.problem, cfg)
                seen = []
                extra["callback"] = lambda it, d: seen.append(d.copy())
            t0 = time.perf_counter()
            if method == "beso":
                rec = run_beso(case.problem, cfg, **extra)
                rec.beso_designs = seen
                rec.beso_stepper = extra["stepper"]
            else:
                rec = RUNNERS[method](case.problem, cfg)
            rec.seconds = time.perf_counter() - t0
            self.cache[key] = (case, cfg, rec)
        return self.cache[key]


RUNS = _Runs()
CANT2D = ("cantilever", 0.24, 2)    # 48 x 24 elements
CANT3D = ("cantilever", 0.12, 3)    # 6 x 24 x 12 elements
MULTI3D = ("multiload", 0.12, 3)


def _final_J(rec):
    return rec.J[-1]


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_1_fem_correctness():
    t0 = time.perf_counter()
    worst_quad = 0.0
    for ndim, h in [(3, (1.0, 1.0, 1.0)), (3, (0.5, 2.0, 1.5)), (2, (3.0, 0.7))]:
        off, Kq = quadrature_stiffness(1.0, 0.3, np.array(h), ndim)
        perm = _permutation(off, ndim)
        K = reference_element_stiffness(ElasticMaterial(1.0, 0.3), h, ndim)
        worst_quad = max(worst_quad, np.max(np.abs(K - Kq[np.ix_(perm, perm)])) / np.max(np.abs(Kq)))

    w = np.linalg.eigvalsh(reference_element_stiffness(elem_size=(1.0, 2.0, 0.5), ndim=3))
    zero_modes = int(np.sum(np.abs(w) < 1e-10 * w.max()))

    g = build_grid((3, 2, 2), (1.0, 0.8, 1.3))
    A = np.array([[1e-3, 2e-3, -1e-3], [0.5e-3, -2e-3, 1e-3], [3e-3, 1e-3, 1e-3]])
    exact = (g.node_coords() @ A.T + 1e-2).ravel()
    ijk = g.node_ijk()
    fixed = g.node_dofs(np.flatnonzero(np.any((ijk == 0) | (ijk == np.array(g.dims)), axis=1)))
    K = assemble(g, np.ones(g.elem_count))
    u = solve(K, -(K[:, fixed] @ exact[fixed]), fixed, method="direct").displacements[0]
    u[fixed] = exact[fixed]
    patch = float(np.max(np.abs(u - exact)))

    rng = np.random.default_rng(0)
    worst_id = 0.0
    for ndim in (2, 3):
        g, fixed, load = _cantilever(ndim)
        scale = rng.uniform(1e-3, 1.0, g.elem_count)
        K = assemble(g, scale)
        u = solve(K, load, fixed, method="direct").displacements[0]
        c = load.vector(g.dof_count) @ u
        worst_id = max(worst_id, abs(c - u @ (K @ u)) / c,
                       abs(c - np.sum(scale * element_energy(g, u))) / c)
    secs = time.perf_counter() - t0
    ok = patch < 1e-9 and worst_quad <= 1e-10 and zero_modes == 6 and worst_id <= 1e-8 and secs < 5
    record(1, ok, f"patch {patch:.1e}, quadrature {worst_quad:.1e}, zero modes {zero_modes}, "
                  f"identity {worst_id:.1e}, {secs:.2f} s")


# -- 2 ---------------------------------------------------------------------------------

def _rel_err(fd, an):
    return float(np.max(np.abs(fd - an)) / np.max(np.abs(an)))


def test_criterion_2_sensitivity_oracles():
    t0 = time.perf_counter()
    worst = {}
    ok = True
    for kind in KINDS:
        for method in METHODS:
            if method.startswith("simp"):
                pb = toy_problem(kind, alpha=1e-3)
                x = _field(pb.grid.elem_count, 0.3, 0.9, seed=int(method[-1]))
                stiff = lambda r: simp_stiffness(r, 3.0, pb.material.alpha)  # noqa: E731
                _, sol = _J(pb, stiff(x))
                an = simp_sensitivity(kind, x, sol, pb.grid, 3.0, pb.material.alpha)
                fd = _central_fd(pb, x, stiff)
            elif method == "beso":
                p = 2.0 if kind == "mechanism" else 3.0
                pb = toy_problem(kind, alpha=1e-6)
                x = _field(pb.grid.elem_count, 0.3, 0.9, seed=1)
                stiff = lambda r: beso_stiffness(r, p)  # noqa: E731
                _, sol = _J(pb, stiff(x))
                an = beso_sensitivity(kind, x, sol, pb.grid, p)
                fd = _central_fd(pb, x, stiff)
            else:
                m = 100.0 if kind == "mechanism" else 3.0
                pb = toy_problem(kind, alpha=1e-2 if m == 100.0 else 1e-6)
                beta = relaxation_factor(pb.material.alpha, m)
                x = _field(pb.grid.elem_count, 0.97 if m == 100.0 else 0.4, 1.0, seed=2)
                stiff = lambda c: chi_stiffness(c, m)  # noqa: E731
                _, sol = _J(pb, stiff(x))
                an = vartop_pseudo_energy(kind, x, sol, pb.grid, m, beta)
                fd = -(1 - beta) * _central_fd(pb, x, stiff, h=1e-7)
            err = _rel_err(fd, an)
            worst[(method, kind)] = err
            ok &= err <= TOL[kind]
    secs = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    record(2, ok and secs < 30, f"18 paths, worst {top[0]}/{top[1]} {worst[top]:.1e}, {secs:.1f} s")


# -- 3 ---------------------------------------------------------------------------------

def _converged_rows(rec):
    """Index of the last row of every converged step."""
    steps = np.asarray(rec.step)
    rows = []
    for j, done in enumerate(rec.step_converged, start=1):
        if done:
            rows.append(int(np.flatnonzero(steps == j)[-1]))
    return rows


def _step_targets(case, cfg, method):
    f = case.problem.volume_fraction
    if method in ("simp2", "vartop") and cfg.n_steps > 1:
        return [volume_schedule(1.0, f, cfg.k, cfg.n_steps, j) for j in range(1, cfg.n_steps + 1)]
    return [f]


@pytest.mark.parametrize("method", METHODS)
def test_criterion_3_volume_enforcement(method):
    case, cfg, rec = RUNS.get(*CANT2D, method)
    targets = _step_targets(case, cfg, method)
    tol = cfg.convergence.tol_volume
    rows = _converged_rows(rec)
    errs = [abs(rec.vol_frac[i] - targets[rec.step[i] - 1]) for i in rows]
    ok = bool(rows) and max(errs) <= tol and rec.seconds < 120
    detail = (f"{method}: {len(rows)}/{len(targets)} steps converged, "
              f"max |C0| {max(errs) if errs else math.nan:.1e} (tol {tol:g}), {rec.seconds:.0f} s")
    prev = ACCEPTANCE.get(3, ("PASS", ""))
    joined = "; ".join(filter(None, [prev[1], detail]))
    ACCEPTANCE[3] = ("PASS" if prev[0] == "PASS" and ok else "FAIL", joined)
    assert ok, detail


# -- 4 ---------------------------------------------------------------------------------

def test_criterion_4_beso_discreteness_and_rationing():
    case, cfg, rec = RUNS.get(*CANT2D, "beso")
    st = rec.beso_stepper
    n = case.grid.elem_count
    two_valued = set(np.unique(rec.design)) <= {st.rho_min, 1.0}
    two_valued &= all(set(np.unique(d)) <= {st.rho_min, 1.0} for d in rec.beso_designs)
    cap = math.floor(cfg.AR_max * n)
    rationed = max(st.added_history, default=0) <= cap
    f, fbar = st.f_history, case.problem.volume_fraction
    recursion = all(a == max(fbar, (1 - cfg.ER) * b) for a, b in zip(f[1:], f[:-1]))
    ok = two_valued and rationed and recursion
    record(4, ok, f"two-valued {two_valued}, max additions {max(st.added_history, default=0)} "
                  f"<= {cap}, volume recursion exact {recursion} over {len(f)} iterations")


# -- 5 ---------------------------------------------------------------------------------

def test_criterion_5_schedules():
    from decimal import Decimal, getcontext
    getcontext().prec = 50
    worst = 0.0
    for j in range(1, 12):
        k = Decimal(-2)
        exact = 1 + (Decimal("0.1") - 1) / (1 - k.exp()) * (1 - (k * j / 12).exp())
        worst = max(worst, abs(volume_schedule(1.0, 0.1, -2.0, 12, j) - float(exact)))
    ends = volume_schedule(1.0, 0.1, -2.0, 12, 0) == 1.0 and volume_schedule(1.0, 0.1, -2.0, 12, 12) == 0.1
    f6 = volume_schedule(1.0, 0.1, -2.0, 12, 6)
    tol_ok = tolerance_schedule(12, 12, 1e-3) == 1e-3
    ok = worst <= 1e-10 and ends and abs(f6 - 0.34205) <= 1e-5 and tol_ok
    record(5, ok, f"max deviation {worst:.1e}, endpoints exact {ends}, f6 = {f6:.6f}")


# -- 6 ---------------------------------------------------------------------------------

def test_criterion_6_convergence_protocol(tmp_path):
    problems = []
    for method in METHODS:
        case, cfg, rec = RUNS.get(*CANT2D, method)
        cols = read_history(export_history(rec, tmp_path / f"{method}.csv"))
        replay = replay_objective_criterion(cols["step"], cols["J"], cfg.convergence.window)
        if not np.array_equal(replay, cols["dJ_crit"], equal_nan=True):
            problems.append(f"{method}: replayed dJ differs")
        if not np.array_equal(np.asarray(rec.dJ_crit), cols["dJ_crit"], equal_nan=True):
            problems.append(f"{method}: CSV dJ differs from record")
        if rec.converged:
            c = cfg.convergence
            target = _step_targets(case, cfg, method)[-1]
            if not evaluate(rec.vol_frac[-1] - target, rec.dJ_crit[-1], rec.dtopo_crit[-1],
                            c.tol_volume, c.tol_J, c.tol_topology):
                problems.append(f"{method}: converged without meeting final tolerances")
    record(6, not problems, "; ".join(problems) or "bitwise replay for 6 methods; converged flags consistent")


# -- 7 ---------------------------------------------------------------------------------

def _final_segment(rec):
    steps = np.asarray(rec.step)
    last = steps[-1]
    rows = np.flatnonzero(steps == last) if last > 0 else np.arange(1, len(steps))
    return np.asarray(rec.J)[rows]


@pytest.mark.parametrize("method", METHODS)
def test_criterion_7_order_of_convergence(method):
    case, cfg, rec = RUNS.get(*CANT3D, method)
    J = _final_segment(rec)
    try:
        p, mu = order_of_convergence(J, J_star=J[-1], J0=rec.J0)
        detail = f"{method}: p = {p:.2f}, mu = {mu:.2f} over {J.size} samples, {rec.seconds / 60:.1f} min"
    except ValueError as exc:
        p, detail = math.nan, f"{method}: not estimable ({exc})"
    ok = 0.6 <= p <= 1.5 and rec.seconds < 15 * 60
    prev = ACCEPTANCE.get(7, ("PASS", ""))
    ACCEPTANCE[7] = ("PASS" if prev[0] == "PASS" and ok else "FAIL",
                     "; ".join(filter(None, [prev[1], detail])))
    assert ok, detail


# -- 8 ---------------------------------------------------------------------------------

def _mirror_mismatch(binary, grid):
    b = binary.reshape(grid.dims, order="F")
    return float(np.mean(b != b[:, :, ::-1]))


@pytest.mark.parametrize("method", METHODS)
def test_criterion_8_multiload_symmetry(method):
    case, cfg, rec = RUNS.get(*MULTI3D, method)
    binary, _ = postprocess_projection(rec, method, case.problem, cfg.p)
    frac = _mirror_mismatch(binary, case.grid)
    ok = frac <= 0.02
    detail = f"{method}: {100 * frac:.1f}% mirrored elements differ"
    prev = ACCEPTANCE.get(8, ("PASS", ""))
    ACCEPTANCE[8] = ("PASS" if prev[0] == "PASS" and ok else "FAIL",
                     "; ".join(filter(None, [prev[1], detail])))
    assert ok, detail


# -- 9 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("which", [CANT3D, MULTI3D], ids=["cantilever", "multiload"])
@pytest.mark.parametrize("method", METHODS)
def test_criterion_9_postprocessing(method, which):
    case, cfg, rec = RUNS.get(*which, method)
    pb = case.problem
    binary, J_bw = postprocess_projection(rec, method, pb, cfg.p)
    ve = pb.grid.elem_volume
    v_bin = float(np.sum(binary[pb.design_mask])) * ve
    v_conv = rec.vol_frac[-1] * pb.design_volume
    J = _final_J(rec)
    ok = abs(v_bin - v_conv) <= ve * (1 + 1e-9) and math.isfinite(J_bw) and abs(J_bw - J) <= 0.25 * J
    detail = (f"{which[0]}/{method}: volume gap {abs(v_bin - v_conv) / ve:.2f} elements, "
              f"J_bw/J = {J_bw / J:.3f}")
    prev = ACCEPTANCE.get(9, ("PASS", ""))
    ACCEPTANCE[9] = ("PASS" if prev[0] == "PASS" and ok else "FAIL",
                     "; ".join(filter(None, [prev[1], detail])))
    assert ok, detail


# -- 10 --------------------------------------------------------------------------------

def test_criterion_10_cross_method_spread():
    values = {}
    for method in METHODS:
        case, cfg, rec = RUNS.get(*CANT3D, method)
        _, values[method] = postprocess_projection(rec, method, case.problem, cfg.p)
    med = float(np.median(list(values.values())))
    dev = {m: v / med - 1 for m, v in values.items()}
    ok = all(abs(d) <= 0.20 for d in dev.values())
    record(10, ok, f"median J_bw {med:.3g}; " + ", ".join(f"{m} {100 * d:+.0f}%" for m, d in dev.items()))


# -- 11 --------------------------------------------------------------------------------

def test_criterion_11_full_scale_reference(tmp_path):
    if os.environ.get("TOPOBENCH_ALLOW_LARGE") != "1":
        ACCEPTANCE[11] = ("SKIP", "reference-only full-scale run; set TOPOBENCH_ALLOW_LARGE=1")
        pytest.skip("full-scale reference run disabled")
    out = tmp_path / "full"
    proc = subprocess.run([sys.executable, "-m", "topobench", "run", "--case", "cantilever",
                           "--scale", "1.0", "--methods", "simp1", "--allow-large", "--out", str(out)],
                          capture_output=True, text=True)
    table = (out / "summary.txt").read_text() if (out / "summary.txt").exists() else ""
    ok = proc.returncode == 0 and "J_bw" in table and "SIMP" in table
    record(11, ok, table.strip().splitlines()[-1] if table else proc.stderr[-200:])
