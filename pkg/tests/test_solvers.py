import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgolab.mesh import build_domain
from cgolab.solvers import (ConjugatedSolver, SolverError, apply_conjugated, carleman_ratio,
                            carleman_sample, cauchy_data, cubic_term, polynomial_term,
                            solve_conjugated, solve_forward, zero_term)
from cgolab.weights import make_weight


def _manufactured(d, q, f):
    x, y = d.nodes.T
    u = np.exp(0.5 * x) * np.cos(y)
    lap = -0.75 * u
    s = lap + q * u - f(d.nodes, u)
    return u, s


def test_manufactured_solution_converges():
    errs, hs = [], []
    f = cubic_term(1.0)
    for n in (24, 48):
        d = build_domain("halfdisk", n)
        q = 0.5 * np.ones(d.n)
        u, s = _manufactured(d, q, f)
        sol = solve_forward(d, q, f, u, s=s, u0=np.zeros(d.n))
        errs.append(np.abs(sol.u - u).max())
        hs.append(d.h)
    assert np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1]) >= 1.5


def test_newton_converges_quadratically(half32):
    d = half32
    x, y = d.nodes.T
    g = 3.0 * np.cos(2 * x) * (1 + y)
    sol = solve_forward(d, np.zeros(d.n), cubic_term(5.0), g, u0=np.zeros(d.n), tol=1e-11)
    assert sol.iterations >= 2
    ratios = sol.quadratic_ratios(below=1e-2)
    assert ratios and max(ratios) < 1e3
    assert sol.energy_ok


def test_linear_problem_solved_directly(half32):
    d = half32
    x, y = d.nodes.T
    sol = solve_forward(d, np.zeros(d.n), zero_term(), x * y)
    assert sol.iterations == 0
    # bilinear x y is discretely harmonic to mesh accuracy
    assert np.abs(sol.u - x * y).max() < 5e-3


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 5.0), amp=st.floats(-2.0, 2.0))
def test_energy_identity_for_coercive_cubic(half32, c, amp):
    d = half32
    x, _ = d.nodes.T
    sol = solve_forward(d, np.zeros(d.n), cubic_term(c), amp * np.cos(x), u0=np.zeros(d.n))
    assert sol.energy_ok
    assert sol.energy["lhs"] == pytest.approx(sol.energy["rhs"], rel=1e-6, abs=1e-9)


def test_polynomial_term_rejects_linear_part():
    with pytest.raises(ValueError):
        polynomial_term([0.0, 1.0, 1.0])
    t = polynomial_term([0.0, 0.0, 2.0], y_window=(-1.0, 1.0, 0.5))
    y = np.array([0.0, 0.5, 2.0])
    assert np.allclose(t(None, y), [0.0, 0.5, 0.0])


@pytest.fixture(scope="module")
def conj_setup(half48):
    w = make_weight(half48, (0.0, 0.5))
    q = np.zeros(half48.n)
    return half48, w, q


def test_conjugated_solver_satisfies_equation_and_data(conj_setup):
    d, w, q = conj_setup
    x, y = d.nodes.T
    f = np.cos(3 * x) * y
    g = np.sin(x)
    sol = solve_conjugated(d, q, w, 8.0, f, g)
    assert sol.residual < 1e-8 * np.abs(f).max()
    assert np.allclose(sol.w[d.gamma0_nodes], g[d.gamma0_nodes])
    assert np.isfinite(sol.ratio) and sol.ratio > 0


def test_conjugated_operator_matches_direct_application(conj_setup):
    d, w, q = conj_setup
    x, y = d.nodes.T
    v = np.exp(-x**2) * y
    tau = 6.0
    e = np.exp(tau * w.phi(d.z))
    direct = (-(d.stiffness @ (e * v)) / d.weights) / e
    assert np.allclose(apply_conjugated(d, q, w, tau, v), direct, rtol=1e-8, atol=1e-10)


def test_minnorm_and_dirichlet_modes(conj_setup):
    d, w, q = conj_setup
    f = np.ones(d.n)
    S1 = ConjugatedSolver(d, q, w, 8.0, "minnorm")
    S2 = ConjugatedSolver(d, q, w, 8.0, "dirichlet")
    w1, w2 = S1.solve(f), S2.solve(f)
    assert S1.residual(w1, f) < 1e-8 and S2.residual(w2, f) < 1e-8
    assert np.all(w2[d.gamma_tilde] == 0)
    # minimum-norm solution has no larger H1_tau norm
    n1 = float(w1 @ (d.stiffness @ w1)) + 64 * float(np.sum(d.weights * w1**2))
    n2 = float(w2 @ (d.stiffness @ w2)) + 64 * float(np.sum(d.weights * w2**2))
    assert n1 <= n2 * (1 + 1e-9)
    with pytest.raises(SolverError):
        ConjugatedSolver(d, q, w, 8.0, "bogus")
    with pytest.raises(SolverError, match="cap"):
        ConjugatedSolver(d, q, w, 500.0)


def test_complex_rhs_split(conj_setup):
    d, w, q = conj_setup
    S = ConjugatedSolver(d, q, w, 8.0)
    x, _ = d.nodes.T
    f = np.cos(x) + 1j * np.sin(x)
    wc = S.solve(f)
    assert np.allclose(wc.real, S.solve(f.real)) and np.allclose(wc.imag, S.solve(f.imag))


def test_carleman_ratio_properties(half48, rng):
    d = half48
    w = make_weight(d, (0.0, 0.5))
    q = np.zeros(d.n)
    assert carleman_ratio(d, np.zeros(d.n), q, w, 8.0) == 0.0
    u, lap, dn = carleman_sample(d, rng)
    r1 = carleman_ratio(d, u, q, w, 8.0, lap, dn)
    r2 = carleman_ratio(d, 2 * u, q, w, 8.0, 2 * lap, 2 * dn)
    assert np.isfinite(r1) and r1 > 0
    assert r2 == pytest.approx(r1, rel=1e-12)
    bad = u.copy()
    bad[d.bidx[0]] = 1.0
    with pytest.raises(ValueError):
        carleman_ratio(d, bad, q, w, 8.0)


def test_cauchy_data_stencil_and_flux_agree():
    errs = []
    for n in (32, 64):
        d = build_domain("halfdisk", n)
        x, y = d.nodes.T
        u = np.exp(x) * np.sin(y)                 # harmonic
        gx, gy = np.exp(x) * np.sin(y), np.exp(x) * np.cos(y)
        exact = (gx[d.bidx] * d.normals[:, 0] + gy[d.bidx] * d.normals[:, 1])[d.gamma_tilde[d.bidx]]
        cs = cauchy_data(d, u, method="stencil")
        cf = cauchy_data(d, u, q=np.zeros(d.n), method="flux")
        assert np.allclose(cs.trace, cf.trace)
        errs.append((np.abs(cs.normal_derivative - exact).max(),
                     np.sqrt(np.mean((cf.normal_derivative - exact) ** 2))))
    assert errs[1][0] < errs[0][0]
    assert errs[1][0] < 1e-2
    assert errs[1][1] < errs[0][1]
    with pytest.raises(ValueError):
        cauchy_data(d, u, method="bogus")


def test_cauchy_csv_header(half32):
    x, y = half32.nodes.T
    text = cauchy_data(half32, x * y).to_csv()
    lines = text.splitlines()
    assert lines[0] == "s,x1,x2,u,du_dnu"
    s = np.array([float(r.split(",")[0]) for r in lines[1:]])
    assert np.all(np.diff(s) >= 0)
