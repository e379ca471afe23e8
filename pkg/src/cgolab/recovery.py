"""Recovery of a potential difference from partial Cauchy data.

For solutions ``u1`` of ``Delta u + q1 u - f1(u) = 0`` (a CGO vanishing on
Gamma_0), the matched solution ``u2`` of the second problem with the same
Dirichlet trace, and a dual CGO ``v`` of ``Delta + q2`` vanishing on Gamma_0,
the discrete Green identity gives exactly

    G = sum w (q1 - q2) u1 v - sum w (f1(u1) - f2(u2)) v          (volume form)
      = - sum_{Gamma-tilde} (F1 - F2) v                         (boundary form)

with ``F`` the consistent boundary fluxes.  The boundary form only uses
data on Gamma-tilde.  Stationary phase at the weight's critical point x~
gives

    tau G(tau) = c0 tau + c_cos cos(2 tau psi(x~)) + c_sin sin(2 tau psi(x~)) + o(1)

(optionally with a constant c1 absorbing O(1/tau) non-oscillatory terms) and (q1 - q2)(x~) = c_cos |det psi''(x~)|^{1/2} / (2 pi) for the amplitude
convention a(x~) = b(x~) = i used here.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .amplitudes import build_pack
from .cgo import build_linear_cgo, semilinear_correct
from .solvers import SolverError, boundary_flux, cauchy_data, solve_forward, zero_term
from .weights import WeightError, hessian_psi, make_weight, partition_of_unity, smoothstep5, tau_cap

log = logging.getLogger(__name__)


class RecoveryError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# potentials


def gaussian_bump(domain, amplitude=0.5, center=(0.0, 0.5), radius=0.2, margin=0.1, width=0.1):
    """amplitude * exp(-|x-c|^2 / (2 radius^2)), smoothly switched off within
    ``margin`` of the boundary (the switch equals 1 beyond margin + width)."""
    x, y = domain.nodes.T
    g = amplitude * np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * radius**2))
    d = domain.distance_to_boundary(domain.nodes)
    return g * smoothstep5((d - margin) / width)


def potential_from_spec(domain, spec):
    """Grid potential from a config entry: number, or {"preset": ..., params}."""
    if spec is None:
        return np.zeros(domain.n)
    if isinstance(spec, (int, float)):
        return np.full(domain.n, float(spec))
    spec = dict(spec)
    kind = spec.pop("preset", "gaussian_bump")
    if kind == "zero":
        return np.zeros(domain.n)
    if kind == "gaussian_bump":
        return gaussian_bump(domain, **spec)
    if kind == "sum":
        return sum(potential_from_spec(domain, s) for s in spec["terms"])
    raise RecoveryError(f"unknown potential preset {kind!r}")


# ---------------------------------------------------------------------------
# Cauchy data


@dataclass
class CauchyDataSet:
    excitations: list
    traces: list
    normal_derivatives: list
    arclength: np.ndarray
    provenance: dict
    solutions: list = field(default_factory=list, repr=False)
    failures: list = field(default_factory=list)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["excitation", "s", "u", "du_dnu"])
        for k, (tr, dn) in enumerate(zip(self.traces, self.normal_derivatives)):
            for s, a, b in zip(self.arclength, tr, dn):
                w.writerow([k, f"{s:.12e}", f"{a:.12e}", f"{b:.12e}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def simulate_partial_cauchy(domain, q, f, excitations, method="flux", tag=None):
    """Forward-solve each Dirichlet excitation and keep (u, du/dnu) on Gamma-tilde."""
    f = zero_term() if f is None else f
    traces, dns, sols, fails, exc = [], [], [], [], []
    arc = None
    for k, g in enumerate(excitations):
        try:
            sol = solve_forward(domain, q, f, g)
        except SolverError as e:
            fails.append({"excitation": k, "error": str(e), "history": e.history})
            continue
        cd = cauchy_data(domain, sol.u, q, f, method=method)
        traces.append(cd.trace)
        dns.append(cd.normal_derivative)
        arc = cd.arclength
        sols.append(sol.u)
        exc.append(k)
    prov = {"q_l2": domain.l2(q), "f": f.to_dict(), "mesh": domain.shape_info,
            "n_nodes": int(domain.n), "tag": tag, "excitations_used": exc}
    return CauchyDataSet(exc, traces, dns, arc if arc is not None else np.zeros(0), prov, sols, fails)


# ---------------------------------------------------------------------------
# pairing


@dataclass
class Pairing:
    volume: float
    boundary: float
    linear_part: float
    nonlinear_part: float

    @property
    def defect(self):
        s = max(abs(self.volume), abs(self.boundary))
        return abs(self.volume - self.boundary) / s if s > 0 else 0.0

    def to_dict(self):
        return {"volume": self.volume, "boundary": self.boundary, "linear_part": self.linear_part,
                "nonlinear_part": self.nonlinear_part, "relative_defect": self.defect}


def pairing(domain, u1, v, q1, q2, f1=None, f2=None, u2=None):
    """Both forms of G; ``u2`` is the matched solution (same trace as u1).

    Without ``u2`` only the volume form of the linear part is available and
    the boundary entry is NaN.
    """
    f1 = zero_term() if f1 is None else f1
    f2 = zero_term() if f2 is None else f2
    W = domain.weights
    lin = float(np.sum(W * (q1 - q2) * u1 * v))
    if u2 is None:
        if not (f1.is_zero and f2.is_zero):
            raise RecoveryError("nonlinear pairing needs the matched solution")
        return Pairing(lin, float("nan"), lin, 0.0)
    nl = float(np.sum(W * (f1(domain.nodes, u1) - f2(domain.nodes, u2)) * v))
    F1 = boundary_flux(domain, u1, q1, f1)
    F2 = boundary_flux(domain, u2, q2, f2)
    mask = domain.gamma_tilde[domain.bidx]
    bd = -float(np.sum(((F1 - F2) * v[domain.bidx])[mask]))
    return Pairing(lin - nl, bd, lin, nl)


# ---------------------------------------------------------------------------
# extraction


@dataclass
class RecoveryEstimate:
    point: tuple
    taus: np.ndarray
    G: np.ndarray
    G_volume: np.ndarray
    coef: dict
    recovered: float
    psi: float
    det: float
    condition: float
    fit_residual: float
    truth: float | None = None
    breakdown: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def rel_error(self):
        if self.truth is None or self.truth == 0:
            return float("nan")
        return abs(self.recovered - self.truth) / abs(self.truth)

    def to_dict(self):
        return {"point": list(self.point), "taus": self.taus.tolist(), "G_boundary": self.G.tolist(),
                "G_volume": self.G_volume.tolist(), "coefficients": self.coef,
                "recovered": self.recovered, "psi_target": self.psi, "det_hessian_psi": self.det,
                "condition": self.condition, "fit_residual": self.fit_residual,
                "truth": self.truth, "rel_error": self.rel_error, "per_tau": self.breakdown,
                "seconds": self.seconds}


def fit_oscillatory(taus, G, psi, constant=False, max_condition=1e4):
    """Least squares for tau G = c0 tau (+ c1) + c_cos cos(2 tau psi) + c_sin sin(2 tau psi)."""
    t = np.asarray(taus, float)
    y = t * np.asarray(G, float)
    cols = [t] + ([np.ones_like(t)] if constant else []) + [np.cos(2 * t * psi), np.sin(2 * t * psi)]
    A = np.column_stack(cols)
    s = np.linalg.norm(A, axis=0)
    As = A / s
    cond = float(np.linalg.cond(As))
    if not np.isfinite(cond) or cond > max_condition:
        raise RecoveryError(f"fit condition number {cond:.3g} exceeds {max_condition:g}; "
                            "widen the tau grid or move the point")
    c, *_ = np.linalg.lstsq(As, y, rcond=None)
    c = c / s
    res = float(np.linalg.norm(A @ c - y) / max(np.linalg.norm(y), 1e-300))
    names = ["c0"] + (["c1"] if constant else []) + ["c_cos", "c_sin"]
    return dict(zip(names, map(float, c))), cond, res


def default_tau_grid(domain, weight, n=8, lo=8.0, frac=1.0):
    hi = frac * tau_cap(domain, weight)
    if hi <= lo:
        raise RecoveryError(f"tau cap {hi:.3g} below the grid floor {lo:g}; refine the mesh")
    return np.linspace(lo, hi, n)


def extract_q_at_point(domain, point, q1, q2, taus=None, f1=None, f2=None, truth=None,
                       weight=None, eps=0.05, r_bd=0.12, r_cp=0.12, constant=False,
                       max_condition=1e4, mode="minnorm"):
    """Recover (q1 - q2) at ``point`` from the boundary form of G over ``taus``."""
    t0 = time.time()
    f1 = zero_term() if f1 is None else f1
    f2 = zero_term() if f2 is None else f2
    if weight is None:
        weight = make_weight(domain, point, eps=eps)
    psi = weight.psi_target
    if abs(psi) < 1e-8:
        raise RecoveryError("psi vanishes at the target")
    _, det = hessian_psi(weight, weight.target)
    if taus is None:
        taus = default_tau_grid(domain, weight)
    taus = np.asarray(taus, float)
    if len(taus) < 6:
        raise RecoveryError("tau grid needs at least 6 points")
    cut = partition_of_unity(domain, weight, r_bd=r_bd, r_cp=r_cp)
    p1 = build_pack(domain, weight, q1, sign=1, cut=cut)
    p2 = build_pack(domain, weight, q2, sign=-1, cut=cut)
    Gb, Gv, rows = [], [], []
    for t in taus:
        u1 = build_linear_cgo(domain, q1, weight, t, pack=p1, mode=mode)
        if not f1.is_zero:
            semilinear_correct(u1, f1, mode=mode)
        v = build_linear_cgo(domain, q2, weight, -t, pack=p2, mode=mode)
        U1, V = u1.u_total, v.u
        u2 = solve_forward(domain, q2, f2, U1[domain.bidx], u0=U1,
                           scale=float(np.abs(U1).max())).u
        P = pairing(domain, U1, V, q1, q2, f1, f2, u2)
        Gb.append(P.boundary)
        Gv.append(P.volume)
        rows.append({"tau": float(t), **P.to_dict(),
                     "u1_remainder_l2": u1.breakdown.get("remainder_l2"),
                     "v_remainder_l2": v.breakdown.get("remainder_l2")})
    coef, cond, res = fit_oscillatory(taus, Gb, psi, constant, max_condition)
    rec = coef["c_cos"] * np.sqrt(abs(det)) / (2 * np.pi)
    pt = (float(weight.target.real), float(weight.target.imag))
    return RecoveryEstimate(pt, taus, np.array(Gb), np.array(Gv), coef, float(rec), psi, det,
                            cond, res, truth, rows, time.time() - t0)


@dataclass
class ScanResult:
    estimates: list
    failures: list
    truth_fn: object = None

    def rows(self):
        out = []
        for e in self.estimates:
            out.append((e.point[0], e.point[1], e.recovered,
                        float("nan") if e.truth is None else e.truth,
                        e.rel_error, e.fit_residual))
        return out

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "recovered", "truth", "rel_error", "fit_residual"])
        for r in self.rows():
            w.writerow([f"{v:.12e}" for v in r])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def argmax(self):
        if not self.estimates:
            return None
        k = int(np.argmax([abs(e.recovered) for e in self.estimates]))
        return self.estimates[k].point

    def to_dict(self):
        return {"estimates": [e.to_dict() for e in self.estimates], "failures": self.failures}


def scan_recovery(domain, points, q1, q2, taus=None, f1=None, f2=None, truth=None, **kw):
    """Run :func:`extract_q_at_point` over ``points``; failures are recorded, not raised.

    ``truth`` is a nodal array of the true difference (interpolated at the
    snapped target) or None.
    """
    ests, fails = [], []
    for p in points:
        try:
            w = make_weight(domain, p, eps=kw.get("eps", 0.05))
            tv = None
            if truth is not None:
                tv = float(_interp(domain, truth, w.target))
            e = extract_q_at_point(domain, p, q1, q2, taus, f1, f2, truth=tv, weight=w, **kw)
            ests.append(e)
            log.info("point %s recovered %.4g truth %s (%.1fs)", e.point, e.recovered, tv, e.seconds)
        except (RecoveryError, WeightError, SolverError) as exc:
            fails.append({"point": list(map(float, p)), "error": str(exc)})
    return ScanResult(ests, fails)


def _interp(domain, values, z):
    from matplotlib.tri import LinearTriInterpolator, Triangulation

    tri = Triangulation(domain.nodes[:, 0], domain.nodes[:, 1], domain.triangles)
    return LinearTriInterpolator(tri, values)(z.real, z.imag)


def experiment_config_json(config, path=None):
    text = json.dumps(config, indent=2, sort_keys=True, default=str)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
