import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgolab.amplitudes import build_pack
from cgolab.cgo import build_linear_cgo
from cgolab.recovery import (RecoveryError, RecoveryEstimate, ScanResult, default_tau_grid,
                             experiment_config_json, fit_oscillatory, gaussian_bump, pairing,
                             potential_from_spec, scan_recovery, simulate_partial_cauchy)
from cgolab.solvers import cubic_term, solve_forward, zero_term
from cgolab.weights import make_weight


@pytest.fixture(scope="module")
def pair48(half48):
    d = half48
    w = make_weight(d, (0.0, 0.5))
    q1 = gaussian_bump(d, 0.5)
    q2 = np.zeros(d.n)
    u1 = build_linear_cgo(d, q1, w, 8.0)
    v = build_linear_cgo(d, q2, w, -8.0, pack=build_pack(d, w, q2, sign=-1))
    return d, w, q1, q2, u1.u, v.u


def test_pairing_boundary_equals_volume(pair48):
    d, _, q1, q2, U1, V = pair48
    u2 = solve_forward(d, q2, zero_term(), U1[d.bidx]).u
    P = pairing(d, U1, V, q1, q2, u2=u2)
    assert P.defect < 1e-6
    assert P.nonlinear_part == 0.0
    assert P.linear_part == pytest.approx(float(np.sum(d.weights * (q1 - q2) * U1 * V)))


def test_pairing_with_cubic_terms(pair48):
    d, _, q1, q2, U1, V = pair48
    f1, f2 = cubic_term(1.0), cubic_term(2.0)
    scale = float(np.abs(U1).max())
    u1 = solve_forward(d, q1, f1, U1[d.bidx], u0=U1, scale=scale).u
    u2 = solve_forward(d, q2, f2, u1[d.bidx], u0=u1, scale=scale).u
    P = pairing(d, u1, V, q1, q2, f1, f2, u2)
    assert P.defect < 1e-6
    assert P.nonlinear_part != 0.0


def test_equal_data_gives_zero_pairing(pair48):
    d, _, q1, _, U1, V = pair48
    u2 = solve_forward(d, q1, zero_term(), U1[d.bidx]).u
    P = pairing(d, U1, V, q1, q1, u2=u2)
    assert P.linear_part == 0.0
    assert abs(P.boundary) <= 1e-9 * float(np.sum(d.weights * np.abs(U1 * V)))


def test_pairing_without_matched_solution(pair48):
    d, _, q1, q2, U1, V = pair48
    P = pairing(d, U1, V, q1, q2)
    assert np.isnan(P.boundary)
    with pytest.raises(RecoveryError):
        pairing(d, U1, V, q1, q2, f1=cubic_term(1.0))


@settings(max_examples=25, deadline=None)
@given(c0=st.floats(-1, 1), cc=st.floats(-2, 2), cs=st.floats(-2, 2),
       psi=st.floats(0.05, 0.2))
def test_fit_oscillatory_recovers_coefficients(c0, cc, cs, psi):
    t = np.linspace(8, 40, 10)
    G = (c0 * t + cc * np.cos(2 * t * psi) + cs * np.sin(2 * t * psi)) / t
    coef, cond, res = fit_oscillatory(t, G, psi)
    assert coef["c0"] == pytest.approx(c0, abs=1e-9)
    assert coef["c_cos"] == pytest.approx(cc, abs=1e-8)
    assert coef["c_sin"] == pytest.approx(cs, abs=1e-8)
    assert res < 1e-8 or np.linalg.norm(t * G) < 1e-12


def test_fit_refuses_ill_conditioned_grid():
    t = np.linspace(8, 8.01, 6)
    with pytest.raises(RecoveryError, match="condition"):
        fit_oscillatory(t, np.ones(6), 1 / 12)


def test_tau_grid_and_potential_presets(half32, half48):
    w = make_weight(half32, (0.0, 0.5))
    with pytest.raises(RecoveryError, match="refine"):
        default_tau_grid(half32, w, lo=10.0)
    w48 = make_weight(half48, (0.0, 0.5))
    grid = default_tau_grid(half48, w48, n=6)
    assert len(grid) == 6 and grid[0] == 8.0
    d = half48
    assert np.all(potential_from_spec(d, None) == 0)
    assert np.all(potential_from_spec(d, 1.5) == 1.5)
    bump = potential_from_spec(d, {"preset": "gaussian_bump", "amplitude": 0.3})
    assert np.allclose(bump, gaussian_bump(d, 0.3))
    both = potential_from_spec(d, {"preset": "sum", "terms": [0.1, {"amplitude": 0.3}]})
    assert np.allclose(both, 0.1 + bump)
    with pytest.raises(RecoveryError):
        potential_from_spec(d, {"preset": "nope"})
    # the bump is switched off near the boundary
    assert np.all(bump[d.bidx] == 0)


def test_partial_cauchy_data_csv(half32):
    d = half32
    x, y = d.nodes.T
    ds = simulate_partial_cauchy(d, np.zeros(d.n), cubic_term(1.0), [x, np.cos(y)])
    assert ds.excitations == [0, 1] and not ds.failures
    lines = ds.to_csv().splitlines()
    assert lines[0] == "excitation,s,u,du_dnu"
    assert len(lines) == 1 + 2 * len(ds.arclength)


def test_scan_result_csv_and_argmax():
    def est(p, rec, truth):
        return RecoveryEstimate(p, np.arange(6.0), np.zeros(6), np.zeros(6), {}, rec, 0.1, -1.0,
                                1.0, 0.01, truth)
    sr = ScanResult([est((0.0, 0.5), 0.4, 0.5), est((0.3, 0.4), -0.6, None)], [])
    lines = sr.to_csv().splitlines()
    assert lines[0] == "x1,x2,recovered,truth,rel_error,fit_residual"
    assert len(lines) == 3 and "nan" in lines[2]
    assert sr.argmax() == (0.3, 0.4)
    assert sr.estimates[0].rel_error == pytest.approx(0.2)


def test_scan_records_failures(half48):
    q = gaussian_bump(half48)
    sr = scan_recovery(half48, [(0.0, 1.5)], q, np.zeros(half48.n))
    assert not sr.estimates and len(sr.failures) == 1


def test_experiment_config_json_is_sorted():
    text = experiment_config_json({"b": 1, "a": np.float64(2.0)})
    assert text.index('"a"') < text.index('"b"')
