import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgolab.mesh import DomainError, build_domain
from cgolab.weights import (WeightError, hessian_psi, make_weight, max_dphi, partition_of_unity,
                            smoothstep5, tau_cap, weight_from_dphi)


def test_halfdisk_partition_and_normals(half32):
    d = half32
    g0 = d.gamma0_nodes
    assert np.allclose(d.nodes[g0, 1], 0.0)
    assert np.allclose(np.linalg.norm(d.normals, axis=1), 1.0)
    assert d.gamma_tilde.sum() > 0
    assert not np.any(d.gamma0 & d.gamma_tilde)
    # boundary length of the half-disk: pi + 2 (inscribed polygon is slightly shorter)
    assert abs(d.bd_weights.sum() - (np.pi + 2)) < 5e-3


def test_area_error_ratio_under_refinement():
    errs = [abs(build_domain("halfdisk", n).area - np.pi / 2) for n in (32, 64)]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_rejects_bad_resolution_and_empty_gamma0():
    with pytest.raises(DomainError):
        build_domain("halfdisk", 8)
    with pytest.raises(DomainError):
        build_domain("disk", 32)


def test_closed_form_weight_for_midpoint_target(half32):
    w = make_weight(half32, (0.0, 0.5))
    # Phi' = z^2 + 1/4, Phi = z^3/3 + z/4 + c
    assert np.allclose(w.dcoef, [0.25, 0.0, 1.0])
    assert w.target == pytest.approx(0.5j)
    assert w.psi_target == pytest.approx(1.0 / 12.0, abs=1e-14)
    H, det = hessian_psi(w, w.target)
    assert det == pytest.approx(-1.0)
    assert np.allclose(H, H.T) and abs(np.trace(H)) < 1e-14
    assert w.phi(half32.z).max() == pytest.approx(-0.1)


def test_weight_serialization_roundtrip(half32):
    w = make_weight(half32, (0.2, 0.4))
    w2 = type(w).from_dict(w.to_dict())
    assert w2 == w
    assert w.to_json()


@pytest.mark.parametrize("target", [(0.0, 0.05), (0.0, 1.2), (0.95, 0.2)])
def test_weight_rejects_bad_targets(half32, target):
    with pytest.raises(WeightError):
        make_weight(half32, target)


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-0.5, 0.5), y=st.floats(0.25, 0.7))
def test_weight_invariants_hold_for_interior_targets(half32, x, y):
    w = make_weight(half32, (x, y))
    assert abs(w.dphi_c(w.target)) < 1e-10
    assert abs(w.target - complex(x, y)) <= 0.05 + 1e-12
    g0 = half32.gamma0_nodes
    assert np.abs(w.psi(half32.z[g0])).max() < 1e-12
    assert w.phi(half32.z).max() <= -0.1 + 1e-12
    _, det = hessian_psi(w, w.target)
    # psi harmonic: det = -|Phi''|^2
    assert det == pytest.approx(-abs(w.d2phi_c(w.target)) ** 2)


def test_tau_cap_formula(half32):
    w = make_weight(half32, (0.0, 0.5))
    assert tau_cap(half32, w) == pytest.approx(np.pi / (10 * max_dphi(half32, w) * half32.h))
    d2 = build_domain("halfdisk", 64)
    assert tau_cap(d2, make_weight(d2, (0.0, 0.5))) == pytest.approx(2 * tau_cap(half32, w), rel=0.02)


def test_partition_of_unity(half48):
    d = half48
    w = make_weight(d, (0.0, 0.5))
    cut = partition_of_unity(d, w, 0.12, 0.12)
    assert np.allclose(cut.e1 + cut.e2, 1.0)
    near_bd = d.distance_to_boundary(d.nodes) < 0.12
    assert np.all(cut.e1[near_bd] == 0.0)
    near_cp = np.abs(d.z - w.target) < 0.12
    assert np.all(cut.e2[near_cp] == 0.0)
    assert np.all((cut.e1 >= 0) & (cut.e1 <= 1))
    with pytest.raises(WeightError):
        partition_of_unity(d, w, 0.5 * d.h, 0.12)


def test_smoothstep_endpoints():
    t = np.linspace(-1, 2, 31)
    s = smoothstep5(t)
    assert s[0] == 0 and s[-1] == 1
    assert np.all(np.diff(s) >= 0)


def test_weight_from_dphi_roots():
    w = weight_from_dphi([0.0, 2.0])
    assert w.critical_points == (0j,)
    assert w.psi(1 + 1j) == pytest.approx(2.0)
