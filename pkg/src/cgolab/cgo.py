"""Complex geometric optics solutions, linear and semilinear.

Linear construction for ``L = Delta + q`` with real ``q``:

    X = a_tau - R~_tau(e1 (p + p~/tau)),     u* = 2 Re(e^{tau Phi} X)

where ``a_tau`` is the amplitude ladder from :mod:`cgolab.amplitudes`.
The interior residual of ``u*`` is available in closed form through the
conjugated operator ``L_tau X = Delta X + 4 tau Phi' dzbar X + q X``:

    e^{-tau phi} L u* = 2 Re(e^{i tau psi} L_tau X)

A remainder ``e^{tau phi} w`` from the conjugated solver makes the sum an
exact solution of the discrete equation vanishing on Gamma_0.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .amplitudes import AmplitudePack, _safe_div, assemble_a_tau, build_pack, trace_corrector
from .cauchy import DecayTable, r_tau
from .solvers import (ConjugatedSolver, NonlinearTerm, SolverError, strong_residual)

log = logging.getLogger(__name__)


@dataclass
class CGOSolution:
    """A CGO solution together with its diagnostic breakdown.

    ``u`` is the exact discrete solution ``u_star + e^{tau phi} w``; ``w`` is
    stored in conjugated form so that values stay O(1) for either sign of tau.
    """

    tau: float
    pack: AmplitudePack
    X: np.ndarray
    u_star: np.ndarray
    w: np.ndarray
    semi_residual: np.ndarray
    discrete_residual: np.ndarray
    boundary_residual: float
    breakdown: dict = field(default_factory=dict)
    u_cor: np.ndarray | None = None
    newton: dict | None = None

    @property
    def domain(self):
        return self.pack.domain

    @property
    def weight(self):
        return self.pack.weight

    @property
    def expo(self):
        return np.exp(self.tau * self.weight.phi(self.domain.z))

    @property
    def u(self):
        """Exact linear discrete solution."""
        return self.u_star + self.expo * self.w

    @property
    def u_total(self):
        """Semilinear solution when corrected, otherwise the linear one."""
        base = self.u
        if self.u_cor is None:
            return base
        return base + self.expo * self.u_cor

    @property
    def conjugated(self):
        """e^{-tau phi} u_total, O(1) in tau."""
        c = self.u_star / self.expo + self.w
        return c if self.u_cor is None else c + self.u_cor

    def to_json(self, **kw):
        return json.dumps(self.breakdown, **kw)


def _interior_l2(domain, v):
    return domain.l2(v, domain.interior.astype(float))


def semi_analytic_residual(pack, tau, X_parts=None):
    """L_tau X at the nodes, from the amplitude algebra (no discrete Laplacian of X)."""
    dom, w = pack.domain, pack.weight
    z = dom.z
    if pack.trivial:
        return np.zeros(dom.n, complex)
    q, e1, e2, dphi = pack.q, pack.cut.e1, pack.cut.e2, pack.dphi
    nz = np.abs(dphi) > 0
    supp = e2 > 1e-14
    P = pack.p + pack.p_tilde / tau
    RP = r_tau(dom, e1 * P, w, tau) if X_parts is None else X_parts["R"]
    Gt = _safe_div(-pack.p_tilde * dom.d_zbar(e1) + e2 * pack.p_hat / 2, dphi, supp)
    lead1 = q * (_safe_div(e1 * pack.p, 2 * tau * dphi, nz) - RP)
    lead2 = (q * pack.a_m2(z) - 2 * dom.d_z(Gt) - q * _safe_div(e2 * pack.p_tilde, 2 * dphi, supp)) / tau**2
    tr = X_parts["trace"] if X_parts is not None else (
        trace_corrector(pack, tau) if pack.boundary == "exact"
        else np.exp(2j * tau * w.psi_target) * pack.a_plus(z) / tau**2)
    return lead1 + lead2 + q * tr


def leading_form(pack, tau):
    """2 Re{(a + a_{-1}/tau - e1 p/(2 tau Phi')) e^{i tau psi}}, the O(1/tau) truncation."""
    dom, w = pack.domain, pack.weight
    z = dom.z
    if pack.trivial:
        core = pack.a
    else:
        nz = np.abs(pack.dphi) > 0
        core = pack.a + pack.a_m1(z) / tau - _safe_div(pack.cut.e1 * pack.p, 2 * tau * pack.dphi, nz)
    return 2 * np.real(core * np.exp(1j * tau * w.psi(z)))


def residual_report(solution):
    """Interior residual times |tau| and Gamma_0 residual times tau^2 for one build."""
    t = abs(solution.tau)
    b = solution.breakdown
    return {"tau": solution.tau,
            "interior": b["interior_residual_semi_analytic"],
            "interior_discrete": b["interior_residual_discrete"],
            "boundary": b["boundary_residual_gamma0"],
            "interior_times_tau": t * b["interior_residual_semi_analytic"],
            "boundary_times_tau2": t * t * b["boundary_residual_gamma0"]}


def residual_tables(solutions):
    """DecayTables (interior, boundary) over a sweep, ordered by |tau|."""
    rows = sorted((residual_report(s) for s in solutions), key=lambda r: abs(r["tau"]))
    taus = [abs(r["tau"]) for r in rows]
    return (DecayTable(taus, [r["interior"] for r in rows]),
            DecayTable(taus, [r["boundary"] for r in rows]))


def build_linear_cgo(domain, q, weight, tau, pack=None, mode="minnorm", solver=None,
                     remainder=True, **pack_kw):
    """CGO ``u = e^{tau Phi}(a + ...) + c.c. + e^{tau phi} w`` for ``Delta + q``.

    ``tau`` may be negative (dual side).  ``pack`` is reused when given.
    ``remainder=False`` skips the conjugated solve (w = 0).
    """
    t0 = time.time()
    tau = float(tau)
    if pack is None:
        pack = build_pack(domain, weight, q, sign=np.sign(tau), **pack_kw)
    z = domain.z
    a_tau = assemble_a_tau(pack, tau)
    if pack.trivial:
        RP = np.zeros(domain.n, complex)
        trace = np.zeros(domain.n, complex)
    else:
        RP = r_tau(domain, pack.cut.e1 * (pack.p + pack.p_tilde / tau), weight, tau)
        trace = (trace_corrector(pack, tau) if pack.boundary == "exact"
                 else np.exp(2j * tau * weight.psi_target) * pack.a_plus(z) / tau**2)
    X = a_tau - RP
    phi = weight.phi(z)
    expo = np.exp(tau * phi)
    # e^{tau Phi} X = expo * e^{i tau psi} X
    u_star = 2 * np.real(np.exp(1j * tau * weight.psi(z)) * X) * expo
    semi = 2 * np.real(np.exp(1j * tau * weight.psi(z)) *
                       semi_analytic_residual(pack, tau, {"R": RP, "trace": trace}))
    disc = strong_residual(domain, u_star, q) / expo
    g0 = domain.gamma0_nodes
    wb = domain.weights_bd_at(g0)
    bres_vals = 2 * np.real(np.exp(1j * tau * weight.psi(z[g0])) * X[g0])
    bres = float(np.sqrt(np.sum(wb * bres_vals**2)))
    w = np.zeros(domain.n)
    stats = {}
    if remainder:
        S = solver if solver is not None else ConjugatedSolver(domain, q, weight, tau, mode)
        f = -disc
        g = -u_star[g0] / expo[g0]
        w = S.solve(f, g)
        stats = {"remainder_h2tau": domain.norm_h2_tau(w, abs(tau)),
                 "remainder_l2": domain.l2(w),
                 "remainder_max": float(np.abs(w).max()),
                 "solver_residual": S.residual(w, f)}
    I = domain.interior.astype(float)
    lead = leading_form(pack, tau)
    lead_defect = abs(tau) * domain.l2(u_star / expo - lead)
    lead_defect_w = abs(tau) * domain.l2(u_star / expo + w - lead)
    comp = lambda v: float(domain.l2(v))  # noqa: E731
    bd = {
        "tau": tau,
        "boundary_mode": pack.boundary,
        "resolution": domain.shape_info.get("resolution"),
        "n_nodes": int(domain.n),
        "amplitude": {
            "a": comp(pack.a),
            "a_minus1_over_tau": 0.0 if pack.trivial else comp(pack.a_m1(z) / tau),
            "a_minus2_over_tau2": 0.0 if pack.trivial else comp(pack.a_m2(z) / tau**2),
            "trace_corrector": comp(trace),
            "oscillatory_term": comp(RP),
        },
        "interior_residual_semi_analytic": domain.l2(semi, I),
        "interior_residual_discrete": domain.l2(disc, I),
        "boundary_residual_gamma0": bres,
        "conjugated_solution_l2": comp(X),
        "leading_form_defect_times_tau": lead_defect,
        "leading_form_defect_with_remainder_times_tau": lead_defect_w,
        **stats,
        "pack": pack.summary(),
        "seconds": time.time() - t0,
    }
    return CGOSolution(tau, pack, X, u_star, w, semi, disc, bres, bd)


# ---------------------------------------------------------------------------
# semilinear correction


@dataclass
class NewtonReport:
    history: list
    iterations: int
    converged: bool
    quadratic_ratios: list
    seed_residual: float
    kantorovich: dict = field(default_factory=dict)

    def to_dict(self):
        return {"history": self.history, "iterations": self.iterations,
                "converged": self.converged, "quadratic_ratios": self.quadratic_ratios,
                "seed_residual": self.seed_residual, "kantorovich": self.kantorovich}


def newton_steps_below(hist, below=1e-3, floor_factor=10.0):
    """(r_k, r_{k+1}) pairs with r_k below ``below`` and above the attained rounding floor."""
    floor = floor_factor * min(hist)
    return [(a, b) for a, b in zip(hist, hist[1:]) if floor < a < below], floor


def quadratic_ratios(hist, below=1e-3, floor_factor=10.0):
    """r_{k+1}/r_k^2 over :func:`newton_steps_below`."""
    steps, _ = newton_steps_below(hist, below, floor_factor)
    return [b / a**2 for a, b in steps]


def quadratic_contraction(hist, C=1e3, below=1e-3, floor_factor=10.0):
    """(ok, n_steps): every qualifying step has r_{k+1} <= C r_k^2 or lands on the floor."""
    steps, floor = newton_steps_below(hist, below, floor_factor)
    return all(b <= C * a * a or b <= floor for a, b in steps), len(steps)


def semilinear_correct(cgo, f: NonlinearTerm, tol=1e-12, maxit=30, mode="minnorm"):
    """Correct a linear CGO into a solution of ``Delta u + q u - f(x, u) = 0``.

    Unknown ``u_cor`` with ``u = u_lin + e^{tau phi} u_cor``, ``u_cor = 0`` on
    Gamma_0.  Each Newton step is a minimum-norm conjugated solve with the
    potential shifted by ``-df/du``.  Residuals are conjugated interior L2 norms.
    """
    dom = cgo.domain
    tau = cgo.tau
    q = cgo.pack.q
    expo = cgo.expo
    u_lin = cgo.u
    I = dom.interior.astype(float)

    def resid(uc):
        u = u_lin + expo * uc
        r = strong_residual(dom, u, q, f) / expo
        r[~dom.interior] = 0.0
        return r

    uc = np.zeros(dom.n)
    r = resid(uc)
    hist = [dom.l2(r, I)]
    seed = hist[0]
    it = 0
    kant = {"eta": 0.0, "K": 0.0, "h": 0.0, "solver_norm": 0.0, "guarantee_active": True}
    if f.is_zero or seed == 0.0:
        cgo.u_cor = uc
        rep = NewtonReport(hist, 0, True, [], seed, kant)
        cgo.newton = rep.to_dict()
        cgo.breakdown["newton"] = rep.to_dict()
        cgo.breakdown["u_cor_h2tau"] = 0.0
        return rep
    stalled = False  # stagnation at the rounding floor counts as convergence
    while hist[-1] > tol and it < maxit:
        it += 1
        u = u_lin + expo * uc
        S = ConjugatedSolver(dom, q, cgo.weight, tau, mode, potential_shift=-f.df(dom.nodes, u))
        du = S.solve(-r)
        if it == 1:
            # Kantorovich data: eta = |first step|, K = solver norm * sup |e^{tau phi} f''|
            eta = dom.l2(du)
            cs = eta / hist[0]
            K = cs * float(np.abs(expo * f.d2f(dom.nodes, u)).max())
            kant = {"eta": eta, "K": K, "h": K * eta, "solver_norm": cs,
                    "solver_norm_over_tau2": cs / tau**2, "guarantee_active": bool(K * eta <= 0.5)}
            if not kant["guarantee_active"]:
                log.warning("Kantorovich h=%.3g > 1/2 at tau=%g; damped Newton fallback", K * eta, tau)
        step = 1.0
        for _ in range(30):
            rn = resid(uc + step * du)
            nn = dom.l2(rn, I)
            if np.isfinite(nn) and nn < hist[-1]:
                break
            step *= 0.5
        else:
            break
        uc = uc + step * du
        r = rn
        hist.append(nn)
        if len(hist) >= 3 and hist[-1] > 0.9 * hist[-2] and hist[-1] < 1e3 * tol:
            stalled = True
            break
    converged = stalled or hist[-1] <= max(tol, 1e3 * np.finfo(float).eps * max(1.0, seed))
    rep = NewtonReport(hist, it, bool(converged), quadratic_ratios(hist), seed, kant)
    if not rep.converged and not kant["guarantee_active"]:
        raise SolverError(f"semilinear Newton diverged (h={kant['h']:.3g}, eta={kant['eta']:.3g}, "
                          f"K={kant['K']:.3g})", hist)
    cgo.u_cor = uc
    cgo.newton = rep.to_dict()
    cgo.breakdown["newton"] = rep.to_dict()
    cgo.breakdown["u_cor_h2tau"] = dom.norm_h2_tau(uc, abs(tau))
    return rep


def fit_kappa(taus, values):
    """Fit values ~ C exp(-kappa |tau|); returns (kappa, C, fit residual)."""
    t = np.abs(np.asarray(taus, float))
    v = np.asarray(values, float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan"), float("nan"), float("nan")
    A = np.column_stack([np.ones(ok.sum()), -t[ok]])
    coef, res, *_ = np.linalg.lstsq(A, np.log(v[ok]), rcond=None)
    r = float(np.sqrt(res[0] / ok.sum())) if len(res) else 0.0
    return float(coef[1]), float(np.exp(coef[0])), r


def semilinear_scan(domain, q, weight, f, taus, mode="minnorm", pack=None, **kw):
    """Semilinear CGOs over ``taus``; returns a report with the kappa fit."""
    rows = []
    for t in taus:
        c = build_linear_cgo(domain, q, weight, t, pack=pack, mode=mode, **kw)
        pack = c.pack if pack is None or np.sign(t) == pack.sign else None
        rep = semilinear_correct(c, f, mode=mode)
        rows.append({"tau": float(t), "seed_residual": rep.seed_residual,
                     "eta_tau2_seed": float(t)**2 * rep.seed_residual,
                     "kantorovich": rep.kantorovich,
                     "u_cor_h2tau": c.breakdown["u_cor_h2tau"],
                     "u_cor_h2tau_times_tau": c.breakdown["u_cor_h2tau"] * abs(t),
                     "newton": rep.to_dict()})
    taus = [r["tau"] for r in rows]
    kappa, C, res = fit_kappa(taus, [r["eta_tau2_seed"] for r in rows])
    kappa_seed = fit_kappa(taus, [r["seed_residual"] for r in rows])[0]
    return {"rows": rows, "kappa": kappa, "C": C, "fit_residual": res, "kappa_seed": kappa_seed,
            "h": [r["kantorovich"].get("h", 0.0) for r in rows]}
