import numpy as np
import pytest
from hypothesis import given, strategies as st

from _toy import toy_problem
from topobench.driver import make_solver
from topobench.problem import ObjectiveKind
from topobench.sensitivity import (ShiftNorm, beso_rho_min, beso_sensitivity, beso_stiffness,
                                   chi_stiffness, objective, relaxation_factor, shift_normalize,
                                   simp_sensitivity, simp_stiffness, vartop_pseudo_energy)

KINDS = ["compliance", "multiload", "mechanism"]
TOL = {"compliance": 1e-4, "multiload": 1e-4, "mechanism": 1e-3}


def _J(problem, scale):
    sol = make_solver(problem, rel_tol=1e-12, method="direct").solve(scale, problem.loads)
    return objective(problem.kind, sol, problem.loads), sol


def _central_fd(problem, x, stiffness, h=1e-6):
    out = np.empty(x.size)
    for e in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[e] += h
        xm[e] -= h
        out[e] = (_J(problem, stiffness(xp))[0] - _J(problem, stiffness(xm))[0]) / (2 * h)
    return out


def _field(n, lo, hi, seed):
    return np.random.default_rng(seed).uniform(lo, hi, n)


def _assert_close(fd, an, tol):
    assert np.max(np.abs(fd - an)) <= tol * np.max(np.abs(an))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("method,p", [("simp1", 3.0), ("simp2", 3.0), ("simp3", 3.0)])
def test_simp_paths_match_finite_differences(kind, method, p):
    pb = toy_problem(kind, alpha=1e-3)
    rho = _field(pb.grid.elem_count, 0.3, 0.9, seed=int(method[-1]))
    stiff = lambda r: simp_stiffness(r, p, pb.material.alpha)  # noqa: E731
    _, sol = _J(pb, stiff(rho))
    an = simp_sensitivity(kind, rho, sol, pb.grid, p, pb.material.alpha)
    _assert_close(_central_fd(pb, rho, stiff), an, TOL[kind])


@pytest.mark.parametrize("kind", KINDS)
def test_beso_path_matches_finite_differences(kind):
    p = 2.0 if kind == "mechanism" else 3.0
    pb = toy_problem(kind, alpha=1e-6)
    rho = _field(pb.grid.elem_count, 0.3, 0.9, seed=1)
    stiff = lambda r: beso_stiffness(r, p)  # noqa: E731
    _, sol = _J(pb, stiff(rho))
    an = beso_sensitivity(kind, rho, sol, pb.grid, p)
    _assert_close(_central_fd(pb, rho, stiff), an, TOL[kind])


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("method,m", [("vartop", 3.0), ("vartop", 5.0), ("levelset", 3.0),
                                      ("levelset", 100.0)])
def test_pseudo_energy_is_relaxed_topological_derivative(kind, method, m):
    """xi = -(1 - beta) dJ/dchi for chi^m stiffness."""
    pb = toy_problem(kind, alpha=1e-2 if m == 100.0 else 1e-6)
    beta = relaxation_factor(pb.material.alpha, m)
    lo = 0.97 if m == 100.0 else 0.4
    chi = _field(pb.grid.elem_count, lo, 1.0, seed=2)
    stiff = lambda c: chi_stiffness(c, m)  # noqa: E731
    _, sol = _J(pb, stiff(chi))
    xi = vartop_pseudo_energy(kind, chi, sol, pb.grid, m, beta)
    fd = _central_fd(pb, chi, stiff, h=1e-7)
    _assert_close(-(1 - beta) * fd, xi, TOL[kind])


def test_compliance_pseudo_energy_nonnegative_and_mechanism_sign():
    pb = toy_problem("compliance")
    _, sol = _J(pb, np.ones(pb.grid.elem_count))
    xi = vartop_pseudo_energy("compliance", np.ones(pb.grid.elem_count), sol, pb.grid, 3, 0.01)
    assert np.all(xi >= 0)
    norm = ShiftNorm.from_initial(xi)
    assert norm.shift == 0.0
    xh = norm(xi, np.ones_like(xi))
    assert xh.min() >= 0 and xh.max() == pytest.approx(1.0)


def test_two_valued_guard_and_simp_bounds():
    pb = toy_problem()
    _, sol = _J(pb, np.ones(pb.grid.elem_count))
    with pytest.raises(RuntimeError, match="rho_min, 1"):
        beso_sensitivity("compliance", np.full(pb.grid.elem_count, 0.5), sol, pb.grid, 3.0,
                         alpha=1e-6)
    with pytest.raises(ValueError):
        simp_sensitivity("compliance", np.full(pb.grid.elem_count, 1.5), sol, pb.grid, 3.0, 1e-6)


def test_parameter_roots():
    assert beso_rho_min(1e-6, 3) == pytest.approx(1e-2, rel=1e-12)
    assert relaxation_factor(1e-6, 3) == pytest.approx(1e-2, rel=1e-12)
    with pytest.raises(ValueError):
        relaxation_factor(1.0, 3)


def test_zero_field_cannot_be_normalised():
    with pytest.raises(RuntimeError, match="degenerate"):
        shift_normalize(np.zeros(4), np.ones(4), None)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(0.1, 10))
def test_shift_norm_scale_invariance(values, c):
    xi = np.asarray(values)
    if np.ptp(xi) == 0 and xi.max() <= 0:
        return
    chi = np.ones_like(xi)
    a, _ = shift_normalize(xi, chi, None)
    b, _ = shift_normalize(c * xi, chi, None)
    assert np.allclose(a, b, atol=1e-12)
    assert a.max() <= 1 + 1e-12


def test_mechanism_objective_sign():
    pb = toy_problem("mechanism")
    J, sol = _J(pb, np.ones(pb.grid.elem_count))
    f_out = pb.loads[1].vector(pb.grid.dof_count)
    assert J == pytest.approx(-(f_out @ sol.displacements[0]))
    assert ObjectiveKind("mechanism") is pb.kind
