import numpy as np
import pytest

from cgolab.amplitudes import (AmplitudeError, assemble_a_tau, build_a, build_pack, hermite_poly,
                               local_jets)
from cgolab.mesh import build_domain
from cgolab.recovery import gaussian_bump
from cgolab.weights import make_weight


@pytest.fixture(scope="module")
def pack64(bump_setup64):
    d, w, q = bump_setup64
    return build_pack(d, w, q, sign=1)


def test_principal_amplitude_normalisation_and_jets(half64):
    w = make_weight(half64, (-0.3, 0.5), extra_points=[(0.35, 0.4)])
    A = build_a(w)
    assert A(w.target) == pytest.approx(1j, abs=1e-12)
    scale = abs(A.deriv(6)(w.target))
    for c in w.critical_points:
        if c == w.target:
            continue
        assert abs(A(c)) < 1e-12
        for k in range(1, 7):
            assert abs(A.deriv(k)(c)) <= 1e-12 * scale
    # real coefficients times i: purely imaginary on the real axis
    x = np.linspace(-1, 1, 11)
    assert np.abs(A(x).real).max() < 1e-12


def test_pack_jets_and_boundary_conditions(pack64):
    pk = pack64
    d = pk.domain
    for rep in pk.jets_p + pk.jets_p_tilde:
        assert rep["holomorphic"] < 1e-10
    target = d.interior & (np.abs(d.z - pk.weight.target) < 1e-9)
    if target.any():
        assert np.abs(pk.p[target]).max() < 1e-5 * np.abs(pk.p).max()
    g0 = d.gamma0_nodes
    assert np.abs(pk.a[g0].real).max() < 1e-12
    # 2 Re a_{-1} = Re(p / Phi') on Gamma_0
    lhs = 2 * pk.a_m1(d.z[g0]).real
    rhs = (pk.p[g0] / pk.dphi[g0]).real
    assert np.abs(lhs - rhs).max() <= 1e-8 * max(1.0, np.abs(rhs).max())
    s = pk.summary()
    assert s["side"] == "direct" and s["a_at_target"] == pytest.approx([0.0, 1.0])


def test_assembled_amplitude_tends_to_principal(pack64):
    d = pack64.domain
    diffs = [d.l2(assemble_a_tau(pack64, t) - pack64.a) for t in (8.0, 16.0, 32.0)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] * 32 < 2 * diffs[0] * 8


def test_trivial_pack_for_zero_potential(half48):
    w = make_weight(half48, (0.0, 0.5))
    pk = build_pack(half48, w, np.zeros(half48.n), sign=-1)
    assert pk.trivial
    assert np.allclose(assemble_a_tau(pk, -8.0), pk.a)
    assert pk.summary()["side"] == "dual"


def test_unknown_boundary_mode(half48):
    w = make_weight(half48, (0.0, 0.5))
    with pytest.raises(AmplitudeError):
        build_pack(half48, w, gaussian_bump(half48), boundary="bogus")


def test_local_jets_recover_polynomial(half48):
    c = 0.1 + 0.4j
    z = half48.z
    vals = 2.0 + 3.0 * (z - c) - 1.5j * (z - c) ** 2 + 0.5 * np.abs(z - c) ** 2
    J = local_jets(half48, vals, c, order=2)
    assert J[(0, 0)] == pytest.approx(2.0, abs=1e-9)
    assert J[(1, 0)] == pytest.approx(3.0, abs=1e-8)
    assert J[(2, 0)] == pytest.approx(-1.5j, abs=1e-7)
    assert J[(1, 1)] == pytest.approx(0.5, abs=1e-7)


def test_hermite_interpolation_matches_jets():
    pts = [0.2 + 0.5j, -0.4 + 0.3j]
    jets = [[1.0, 2.0j, -1.0], [0.5, 0.0, 3.0]]
    P = hermite_poly(pts, jets)
    for c, jet in zip(pts, jets):
        for k, v in enumerate(jet):
            assert complex(P.deriv(k)(c)) == pytest.approx(v, abs=1e-9)


def test_pack_dual_side_is_consistent():
    d = build_domain("halfdisk", 48)
    w = make_weight(d, (0.0, 0.5))
    q = gaussian_bump(d)
    pd = build_pack(d, w, q, sign=-1)
    assert not pd.trivial and pd.sign == -1
    for rep in pd.jets_p:
        assert rep["holomorphic"] < 1e-10
