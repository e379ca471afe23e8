import numpy as np
import pytest

from cgolab.amplitudes import build_pack
from cgolab.cgo import (build_linear_cgo, fit_kappa, newton_steps_below, quadratic_contraction,
                        quadratic_ratios, residual_report, residual_tables, semilinear_correct)
from cgolab.solvers import cubic_term, strong_residual, zero_term
from cgolab.weights import make_weight


@pytest.fixture(scope="module")
def sweep(bump_setup64):
    d, w, q = bump_setup64
    pack = build_pack(d, w, q, sign=1)
    return [build_linear_cgo(d, q, w, t, pack=pack) for t in (6.0, 10.0, 14.0)]


def test_linear_cgo_is_exact_discrete_solution(sweep):
    for c in sweep:
        d = c.domain
        r = strong_residual(d, c.u, c.pack.q) / c.expo
        assert np.abs(r[d.interior]).max() < 1e-7 * max(1.0, np.abs(c.conjugated).max())
        assert np.abs(c.u[d.gamma0_nodes]).max() < 1e-10 * np.abs(c.expo).max()


def test_boundary_residual_at_rounding_in_exact_mode(sweep):
    for c in sweep:
        assert c.breakdown["boundary_mode"] == "exact"
        assert c.boundary_residual < 1e-12


def test_interior_residual_decays(sweep):
    interior, boundary = residual_tables(sweep)
    assert interior.monotone_decreasing
    reps = [residual_report(c) for c in sweep]
    assert all(r["interior_times_tau"] == pytest.approx(abs(r["tau"]) * r["interior"]) for r in reps)
    assert boundary.tau.tolist() == [6.0, 10.0, 14.0]


def test_dual_side_builds_with_negative_tau(bump_setup64):
    d, w, q = bump_setup64
    c = build_linear_cgo(d, q, w, -8.0)
    assert c.pack.sign == -1
    assert c.breakdown["pack"]["side"] == "dual"
    assert np.abs(c.conjugated).max() < 1e3
    r = strong_residual(d, c.u, q) / c.expo
    assert np.abs(r[d.interior]).max() < 1e-7 * np.abs(c.conjugated).max()


def test_zero_potential_gives_pure_exponential(half48):
    w = make_weight(half48, (0.0, 0.5))
    q = np.zeros(half48.n)
    c = build_linear_cgo(half48, q, w, 8.0, remainder=False)
    a = c.pack.a
    expected = 2 * np.real(np.exp(1j * 8.0 * w.psi(half48.z)) * a) * c.expo
    assert np.allclose(c.u_star, expected)
    assert np.abs(c.u_star[half48.gamma0_nodes]).max() < 1e-14 * np.abs(c.expo).max()
    assert np.all(c.semi_residual == 0)


def test_zero_nonlinearity_leaves_cgo_unchanged(sweep):
    c = sweep[0]
    rep = semilinear_correct(c, zero_term())
    assert rep.iterations == 0 and rep.converged
    assert rep.kantorovich["h"] == 0.0
    assert np.all(c.u_cor == 0)
    c.u_cor = None


def test_cubic_correction_converges_with_kantorovich_data(bump_setup64):
    d, w, q = bump_setup64
    c = build_linear_cgo(d, q, w, 10.0)
    rep = semilinear_correct(c, cubic_term(1.0))
    assert rep.converged
    k = rep.kantorovich
    assert set(k) >= {"eta", "K", "h", "solver_norm", "guarantee_active"}
    assert k["h"] == pytest.approx(k["K"] * k["eta"])
    assert k["guarantee_active"] == (k["h"] <= 0.5)
    assert np.all(c.u_cor[d.gamma0_nodes] == 0)
    r = strong_residual(d, c.u_total, q, cubic_term(1.0)) / c.expo
    assert np.abs(r[d.interior]).max() < 1e-6


def test_quadratic_contraction_helpers():
    hist = [1.0, 1e-2, 1e-4, 1e-8, 3e-12, 2.9e-12]
    steps, floor = newton_steps_below(hist)
    assert floor == pytest.approx(2.9e-11)
    assert steps == [(1e-4, 1e-8), (1e-8, 3e-12)]
    assert quadratic_ratios(hist) == pytest.approx([1.0, 3e4])
    # the second step exceeds C r^2 but lands on the floor
    assert quadratic_contraction(hist) == (True, 2)
    # a linear-rate tail fails
    slow = [1e-1, 1e-4, 5e-5, 2.5e-5, 1e-12]
    ok, n = quadratic_contraction(slow)
    assert n == 3 and not ok
    # a step landing on the floor counts as contracted
    assert quadratic_contraction([1e-1, 1e-4, 8e-12, 8e-12]) == (True, 1)


def test_fit_kappa_recovers_exponent():
    t = np.array([8.0, 12.0, 16.0, 24.0])
    k, C, res = fit_kappa(t, 3.0 * np.exp(-0.2 * t))
    assert k == pytest.approx(0.2) and C == pytest.approx(3.0) and res < 1e-12
    assert np.isnan(fit_kappa([1.0], [1.0])[0])
