import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgolab.cauchy import (CauchyError, DecayTable, dbar_inv, dz_inv, r_tau, rl_decay_scan,
                           rl_integral, stationary_phase_eval)
from cgolab.mesh import build_domain
from cgolab.weights import make_weight, partition_of_unity, weight_from_dphi


def _bump(z, c, r):
    t = np.clip(1 - np.abs(z - c) ** 2 / r**2, 0, None)
    return t**4


def test_zero_maps_to_zero(disk48):
    assert np.all(dbar_inv(disk48, np.zeros(disk48.n)) == 0)
    assert np.all(dz_inv(disk48, np.zeros(disk48.n)) == 0)


def test_cauchy_pompeiu_constant(disk48):
    r = dbar_inv(disk48, np.ones(disk48.n))
    assert np.abs(r - np.conj(disk48.z))[disk48.interior].max() < 1e-3


def test_matches_brute_force_away_from_support(disk48):
    d = disk48
    c = 0.3 + 0.3j
    g = _bump(d.z, c, 0.2)
    far = np.abs(d.z - c) > 0.2 + 3 * d.h
    w = d.weights
    # brute-force nonsingular quadrature: -(1/pi) sum_j w_j g_j / (zeta_j - z)
    src = g != 0
    K = 1.0 / (d.z[src][None, :] - d.z[far][:, None])
    ref = -(K @ (w[src] * g[src])) / np.pi
    assert np.abs(dbar_inv(d, g)[far] - ref).max() < 1e-8
    Kc = 1.0 / (np.conj(d.z[src])[None, :] - np.conj(d.z[far])[:, None])
    refc = -(Kc @ (w[src] * g[src])) / np.pi
    assert np.abs(dz_inv(d, g)[far] - refc).max() < 1e-8


def test_conjugate_symmetry(disk48, rng):
    g = rng.normal(size=disk48.n) + 1j * rng.normal(size=disk48.n)
    a = dz_inv(disk48, np.conj(g))
    b = np.conj(dbar_inv(disk48, g))
    assert np.abs(a - b).max() < 1e-12 * np.abs(b).max()


@settings(max_examples=10, deadline=None)
@given(alpha=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       beta=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       seed=st.integers(0, 2**16))
def test_linearity(disk48, alpha, beta, seed):
    r = np.random.default_rng(seed)
    g1, g2 = r.normal(size=(2, disk48.n))
    lhs = dbar_inv(disk48, alpha * g1 + beta * g2)
    rhs = alpha * dbar_inv(disk48, g1) + beta * dbar_inv(disk48, g2)
    scale = max(1.0, abs(alpha), abs(beta)) * np.abs(dbar_inv(disk48, g1)).max()
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_inverse_property_converges():
    errs, hs = [], []
    for n in (24, 48):
        d = build_domain("disk", n, allow_empty_gamma0=True)
        g = np.exp(-np.abs(d.z - 0.2) ** 2) * np.cos(d.z.real)
        mask = (np.abs(d.z) < 0.9).astype(float)
        errs.append(d.l2(d.d_zbar(dbar_inv(d, g)) - g, mask))
        hs.append(d.h)
    assert np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1]) >= 1.0


def test_sample_mapping_constant_stable_under_refinement():
    consts = []
    for n in (24, 48):
        d = build_domain("disk", n, allow_empty_gamma0=True)
        x, y = d.nodes.T
        vals = []
        for s in range(6):
            r = np.random.default_rng(s)
            k = r.uniform(-3, 3, (3, 2))
            g = sum(np.cos(kk[0] * x + kk[1] * y + s) for kk in k)
            v = dbar_inv(d, g)
            grad = np.hypot(np.abs(d.dx @ v), np.abs(d.dy @ v))
            vals.append((d.lp(v, 4) + d.lp(grad, 4)) / d.lp(g, 4))
        consts.append(max(vals))
    assert np.isfinite(consts).all()
    assert abs(consts[1] / consts[0] - 1) < 0.2


def test_r_tau_conjugation_identity(half48, rng):
    w = make_weight(half48, (0.0, 0.5))
    g = (rng.normal(size=half48.n) + 1j * rng.normal(size=half48.n)) * half48.interior
    a = r_tau(half48, np.conj(g), w, 6.0, variant="plain")
    b = np.conj(r_tau(half48, g, w, 6.0))
    assert np.abs(a - b).max() < 1e-12 * np.abs(b).max()
    assert np.all(r_tau(half48, np.zeros(half48.n), w, 6.0) == 0)


def test_r_tau_refuses_beyond_cap(half32):
    w = make_weight(half32, (0.0, 0.5))
    with pytest.raises(CauchyError, match="resolution"):
        r_tau(half32, np.ones(half32.n), w, 200.0)
    with pytest.raises(CauchyError):
        r_tau(half32, np.ones(half32.n), w, 0.0)


def test_r_tau_leading_term_decay():
    d = build_domain("halfdisk", 128)
    w = make_weight(d, (0.0, 0.5))
    cut = partition_of_unity(d, w, 0.12, 0.12)
    g = cut.e1 * d.nodes[:, 0] ** 2             # vanishes at the critical point 0.5i
    dphi = w.dphi_c(d.z)
    lead = np.divide(g, 2 * dphi, out=np.zeros(d.n, complex), where=np.abs(dphi) > 0)
    vals = [t * d.l2(r_tau(d, g, w, t) - lead / t) for t in (8.0, 16.0, 32.0)]
    assert vals[0] > vals[1] > vals[2]


# stationary phase on Phi = z^2 (psi = 2 x y) with a Gaussian:
# int exp(-|x|^2/s^2) exp(2 i tau psi) dx = pi / sqrt(1/s^4 + 4 tau^2)
def _gauss_exact(s, tau):
    return np.pi / np.sqrt(1 / s**4 + 4 * tau**2)


@pytest.fixture(scope="module")
def disk96():
    return build_domain("disk", 96, allow_empty_gamma0=True)


def test_quadrature_matches_gaussian_closed_form(disk96):
    w = weight_from_dphi([0.0, 2.0])
    s = 0.4
    g = np.exp(-np.abs(disk96.z) ** 2 / s**2)
    for tau in (4.0, 16.0):
        num = rl_integral(disk96, g, w, tau)
        assert abs(num - _gauss_exact(s, tau)) / _gauss_exact(s, tau) < 1e-3


def test_stationary_phase_leading_term(disk96):
    w = weight_from_dphi([0.0, 2.0])
    g = np.exp(-np.abs(disk96.z) ** 2 / 0.16)
    lead, num, rem = stationary_phase_eval(disk96, g, w, 32.0, g_at=lambda z: 1.0)
    assert lead == pytest.approx(np.pi / 64)
    assert abs(num - lead) / abs(lead) <= 0.05
    assert rem == pytest.approx(abs(num - lead))
    lead16, num16, _ = stationary_phase_eval(disk96, g, w, 16.0, g_at=lambda z: 1.0)
    assert abs(abs(num) / abs(num16) - 0.5) <= 0.05


def test_stationary_phase_degenerate_and_vanishing(disk48):
    g = np.exp(-np.abs(disk48.z) ** 2)
    with pytest.raises(CauchyError, match="degenerate"):
        stationary_phase_eval(disk48, g, weight_from_dphi([0.0, 0.0, 1.0]), 8.0)
    lead, _, _ = stationary_phase_eval(disk48, g, weight_from_dphi([0.0, 2.0]), 8.0, g_at=lambda z: 0.0)
    assert lead == 0


def test_decay_slopes(disk96):
    w = weight_from_dphi([0.0, 2.0])
    r2 = np.abs(disk96.z) ** 2
    taus = [8, 16, 32]
    tb = rl_decay_scan(disk96, np.exp(-r2 / 0.16), w, taus)
    assert abs(tb.slope + 1) <= 0.15
    tb2 = rl_decay_scan(disk96, r2 * np.exp(-r2 / 0.16), w, taus)
    assert tb2.slope <= -1.5
    zero = rl_decay_scan(disk96, np.zeros(disk96.n), w, taus)
    assert np.all(zero.abs == 0)


def test_decay_conjugate_symmetry(disk48):
    w = weight_from_dphi([0.0, 2.0])
    g = np.exp(-np.abs(disk48.z - 0.1) ** 2)
    assert rl_integral(disk48, g, w, -7.0) == pytest.approx(np.conj(rl_integral(disk48, g, w, 7.0)), abs=1e-14)


def test_decay_table_csv_and_validation():
    tb = DecayTable([1.0, 2.0, 4.0], [1.0, 0.5j, 0.25])
    lines = tb.to_csv().splitlines()
    assert lines[0] == "tau,value_re,value_im,abs,abs_tau,abs_tau2"
    assert len(lines) == 4
    assert tb.slope == pytest.approx(-1.0)
    assert tb.fit_residual == pytest.approx(0.0, abs=1e-12)
    assert tb.monotone_decreasing and not tb.scaled_decreasing(1)
    with pytest.raises(ValueError):
        DecayTable([2.0, 1.0], [1.0, 1.0])
