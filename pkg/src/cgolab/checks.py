"""The eight end-to-end verification checks.

Each ``check_*`` function returns a :class:`CheckResult`; when ``out`` is a
directory the check also writes its tables, JSON records and figures there.
Defaults are the resolutions at which every check fits its time budget on a
single core.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .amplitudes import build_pack
from .cauchy import dbar_inv, rl_decay_scan, stationary_phase_eval
from .cgo import build_linear_cgo, residual_report, residual_tables, semilinear_scan
from .cgo import quadratic_contraction, quadratic_ratios
from .homotopy import integrate_f_difference, recover_df_along_path, solution_path
from .mesh import build_domain
from .recovery import gaussian_bump, pairing, scan_recovery
from .solvers import (carleman_ratio, carleman_sample, cubic_term, polynomial_term,
                      solve_conjugated, solve_forward)
from .weights import make_weight, partition_of_unity, tau_cap, weight_from_dphi

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    seconds: float
    limit: float
    metrics: dict = field(default_factory=dict)
    message: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number} {self.name}: {self.message} ({self.seconds:.1f}s / {self.limit:.0f}s)"

    def to_dict(self):
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _strictly_decreasing(v):
    return bool(np.all(np.diff(np.asarray(v, float)) < 0))


def _finish(number, name, t0, limit, ok, metrics, message):
    dt = time.time() - t0
    metrics["runtime_ok"] = dt <= limit
    return CheckResult(number, name, bool(ok and dt <= limit), dt, limit, metrics, message)


def _write(out, name, text):
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _plots(out):
    if out is None:
        return None
    from . import plotting

    return plotting


# ---------------------------------------------------------------------------


def check_cauchy_transform(resolution=64, orders=(32, 64, 128), out=None, limit=60.0):
    """Inverse of d/dzbar applied to 1 on the unit disk, and the inverse-property order."""
    t0 = time.time()
    d = build_domain("disk", resolution, allow_empty_gamma0=True)
    r = dbar_inv(d, np.ones(d.n))
    inner = d.interior
    err = float(np.abs(r - np.conj(d.z))[inner].max())
    hs, errs = [], []
    for n in orders:
        dn = build_domain("disk", n, allow_empty_gamma0=True)
        z = dn.z
        g = np.exp(-np.abs(z - 0.2) ** 2) * np.cos(z.real)
        v = dbar_inv(dn, g)
        mask = (np.abs(z) < 0.9).astype(float)
        errs.append(dn.l2(dn.d_zbar(v) - g, mask))
        hs.append(dn.h)
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = err <= 1e-3 and order >= 1.0
    m = {"max_interior_error": err, "inverse_errors": errs, "h": hs, "measured_order": order}
    _write(out, "cauchy_transform.json", json.dumps(_jsonable(m), indent=2))
    return _finish(1, "Cauchy transform", t0, limit, ok, m,
                   f"max error {err:.2e} (<= 1e-3), inverse order {order:.2f} (>= 1)")


def check_stationary_phase(resolution=128, tau=32.0, taus=(8, 16, 32, 64), width=0.4, out=None,
                           limit=120.0):
    """Phi = z^2 with a Gaussian amplitude: leading term accuracy and decay slope."""
    t0 = time.time()
    d = build_domain("disk", resolution, allow_empty_gamma0=True)
    w = weight_from_dphi([0.0, 2.0])
    g = np.exp(-np.abs(d.z) ** 2 / width**2)
    lead, num, _ = stationary_phase_eval(d, g, w, tau, g_at=lambda z: 1.0)
    rel = abs(num - lead) / abs(lead)
    tb = rl_decay_scan(d, g, w, list(taus))
    ok = rel <= 0.05 and abs(tb.slope + 1) <= 0.15
    m = {"relative_error": rel, "leading": lead, "numeric": num, "slope": tb.slope,
         "fit_residual": tb.fit_residual, "values_abs": tb.abs}
    if out is not None:
        _write(out, "stationary_phase_decay.csv", tb.to_csv())
        _plots(out).decay_plot({"|int g e^{2 i tau psi}|": tb}, os.path.join(out, "stationary_phase_decay.png"))
    return _finish(2, "stationary phase", t0, limit, ok, m,
                   f"relative error {rel:.2%} at tau={tau:g} (<= 5%), slope {tb.slope:.3f} (-1 +/- 0.15)")


def _bump_setup(resolution, amplitude=0.5, center=(0.0, 0.5)):
    d = build_domain("halfdisk", resolution)
    w = make_weight(d, center)
    q = gaussian_bump(d, amplitude, center, 0.2)
    return d, w, q


def check_cgo_residuals(resolution=256, taus=(8, 16, 32, 64), floor=1e-12, out=None, limit=600.0):
    """Interior residual times tau and Gamma_0 residual times tau^2 over the sweep.

    The boundary sequence passes if it decreases strictly or if every entry
    is below ``floor`` times the amplitude scale (the construction then
    meets Gamma_0 to rounding).  Asymptotic boundary-mode values and the
    discrete (mesh-operator) residual are reported alongside.
    """
    t0 = time.time()
    d, w, q = _bump_setup(resolution)
    cap = tau_cap(d, w)
    if max(taus) > cap:
        return _finish(3, "CGO residual decay", t0, limit, False, {"tau_cap": cap},
                       f"tau={max(taus)} exceeds the resolution cap {cap:.3g}")
    pack = build_pack(d, w, q, sign=1)
    sols = [build_linear_cgo(d, q, w, t, pack=pack, remainder=False) for t in taus]
    reps = [residual_report(s) for s in sols]
    it = [r["interior_times_tau"] for r in reps]
    bt = [r["boundary_times_tau2"] for r in reps]
    scale = max(s.breakdown["conjugated_solution_l2"] for s in sols)
    b_floor = all(r["boundary"] <= floor * scale for r in reps)
    b_ok = _strictly_decreasing(bt) or b_floor
    i_ok = _strictly_decreasing(it)
    asym = build_pack(d, w, q, sign=1, boundary="asymptotic")
    asym_rows = [residual_report(build_linear_cgo(d, q, w, t, pack=asym, remainder=False)) for t in taus]
    m = {"tau": list(taus), "boundary_mode": pack.boundary, "interior_times_tau": it,
         "boundary_times_tau2": bt, "boundary_at_rounding_floor": b_floor,
         "interior_discrete_times_tau": [abs(r["tau"]) * r["interior_discrete"] for r in reps],
         "asymptotic_mode": {"interior_times_tau": [r["interior_times_tau"] for r in asym_rows],
                             "boundary_times_tau2": [r["boundary_times_tau2"] for r in asym_rows]},
         "tau_cap": cap}
    if out is not None:
        ti, tb = residual_tables(sols)
        _write(out, "cgo_interior_decay.csv", ti.to_csv())
        _write(out, "cgo_boundary_decay.csv", tb.to_csv())
        _write(out, "cgo_breakdown.json", json.dumps(_jsonable([s.breakdown for s in sols]), indent=2))
        _plots(out).decay_plot({"interior": ti, "boundary": tb}, os.path.join(out, "cgo_decay.png"))
    fl = " (at rounding floor)" if b_floor else ""
    return _finish(3, "CGO residual decay", t0, limit, i_ok and b_ok, m,
                   "tau*interior " + ", ".join(f"{v:.3g}" for v in it)
                   + "; tau^2*boundary " + ", ".join(f"{v:.2g}" for v in bt) + fl)


def check_semilinear(resolution=128, taus=(8, 12, 16, 24, 32), C_quad=1e3, out=None, limit=600.0):
    """f = y^3 with max phi <= -0.1: kappa > 0, tau |u_cor| decreasing, quadratic Newton."""
    t0 = time.time()
    d, w, q = _bump_setup(resolution)
    maxphi = float(w.phi(d.z).max())
    rep = semilinear_scan(d, q, w, cubic_term(1.0), list(taus))
    ucor = [r["u_cor_h2tau_times_tau"] for r in rep["rows"]]
    hists = [r["newton"]["history"] for r in rep["rows"]]
    ratios = [x for h in hists for x in quadratic_ratios(h)]
    contr = [quadratic_contraction(h, C_quad) for h in hists]
    n_steps = sum(n for _, n in contr)
    quad_ok = n_steps > 0 and all(ok for ok, _ in contr)
    ok = maxphi <= -0.1 + 1e-12 and rep["kappa"] > 0 and _strictly_decreasing(ucor) and quad_ok
    m = {"max_phi": maxphi, "kappa": rep["kappa"], "kappa_seed": rep["kappa_seed"],
         "u_cor_h2tau_times_tau": ucor, "quadratic_ratios": ratios, "quadratic_bound": C_quad,
         "qualifying_steps": n_steps,
         "kantorovich_h": rep["h"], "rows": rep["rows"]}
    _write(out, "semilinear_scan.json", json.dumps(_jsonable(m), indent=2))
    return _finish(4, "semilinear correction", t0, limit, ok, m,
                   f"kappa {rep['kappa']:.3f} (> 0), tau*|u_cor| decreasing={_strictly_decreasing(ucor)}, "
                   f"quadratic contraction on {n_steps} steps below 1e-3 = {quad_ok} (C = {C_quad:g})")


def check_pairing(resolution=96, taus=(8.0, 12.0, 16.0), out=None, limit=300.0):
    """Volume and boundary forms of G agree; equal data gives G at the noise floor."""
    t0 = time.time()
    d, w, q1 = _bump_setup(resolution)
    q2 = np.zeros(d.n)
    f = cubic_term(1.0)
    cut = partition_of_unity(d, w, 0.12, 0.12)
    p1 = build_pack(d, w, q1, 1, cut)
    p2 = build_pack(d, w, q2, -1, cut)
    defects, equal, rows = [], [], []
    for t in taus:
        u = build_linear_cgo(d, q1, w, t, pack=p1)
        v = build_linear_cgo(d, q2, w, -t, pack=p2)
        U, V = u.u, v.u
        sc = float(np.abs(U).max())
        for f1, f2, tag in ((None, None, "linear"), (f, f, "cubic")):
            u1 = U if f1 is None else solve_forward(d, q1, f1, U[d.bidx], u0=U, scale=sc).u
            u2 = solve_forward(d, q2, f2 or _zero(), u1[d.bidx], u0=u1, scale=sc).u
            P = pairing(d, u1, V, q1, q2, f1, f2, u2)
            defects.append(P.defect)
            # equal data: the second solution uses the same potential and term
            ue = solve_forward(d, q1, f1 or _zero(), u1[d.bidx], u0=u1, scale=sc).u
            Pe = pairing(d, u1, V, q1, q1, f1, f1, ue)
            noise = 1e-9 * float(np.sum(d.weights * np.abs(u1 * V)) * max(1.0, np.abs(q1).max()))
            equal.append((abs(Pe.boundary), abs(Pe.volume), noise))
            rows.append({"tau": t, "term": tag, **P.to_dict(), "equal_boundary": Pe.boundary,
                         "equal_volume": Pe.volume, "noise_floor": noise})
    agree = max(defects) <= 1e-6
    floor_ok = all(b <= nf and v <= nf for b, v, nf in equal)
    m = {"max_relative_defect": max(defects), "equal_data": equal, "rows": rows}
    _write(out, "pairing.json", json.dumps(_jsonable(m), indent=2))
    return _finish(5, "pairing identity", t0, limit, agree and floor_ok, m,
                   f"max relative defect {max(defects):.2e} (<= 1e-6), equal-data |G| "
                   f"max {max(max(b, v) for b, v, _ in equal):.2e} (noise floor {min(nf for *_, nf in equal):.1e})")


def _zero():
    from .solvers import zero_term

    return zero_term()


SCAN_POINTS = ((0.0, 0.5), (0.2, 0.5), (-0.2, 0.5), (0.0, 0.72), (0.6, 0.35), (-0.6, 0.35))


def check_recovery(resolution=192, amplitude=0.5, center=(0.0, 0.5), points=SCAN_POINTS,
                   far_threshold=0.05, out=None, limit=1800.0):
    """Pointwise recovery of a bump from partial boundary data."""
    t0 = time.time()
    d = build_domain("halfdisk", resolution)
    bump = gaussian_bump(d, amplitude, center, 0.2)
    scan = scan_recovery(d, list(points), bump, np.zeros(d.n), truth=bump)
    if scan.failures or not scan.estimates:
        return _finish(6, "potential recovery", t0, limit, False, {"failures": scan.failures},
                       f"{len(scan.failures)} scan points failed")
    byp = {tuple(np.round(e.point, 6)): e for e in scan.estimates}
    c = np.array(center)
    est = list(byp.values())
    centre = min(est, key=lambda e: np.hypot(*(np.array(e.point) - c)))
    far = [e for e in est if e.truth is not None and abs(e.truth) <= far_threshold * amplitude]
    c_ok = abs(centre.recovered - amplitude) <= 0.2 * amplitude
    far_vals = [abs(e.recovered) for e in far]
    f_ok = len(far) > 0 and max(far_vals) <= 0.2 * amplitude
    am = scan.argmax()
    a_ok = tuple(np.round(am, 6)) == tuple(np.round(centre.point, 6))
    m = {"centre_point": centre.point, "centre_recovered": centre.recovered,
         "far_points": [e.point for e in far], "far_recovered": [e.recovered for e in far],
         "argmax": am, "rows": scan.rows()}
    if out is not None:
        os.makedirs(out, exist_ok=True)
        scan.to_csv(os.path.join(out, "scan.csv"))
        _write(out, "scan_details.json", json.dumps(_jsonable(scan.to_dict()), indent=2))
        _plots(out).scan_plot(d, scan, os.path.join(out, "scan.png"))
    return _finish(6, "potential recovery", t0, limit, c_ok and f_ok and a_ok, m,
                   f"centre {centre.recovered:.3f} vs {amplitude} (<= 20%), far max "
                   f"{max(far_vals) if far_vals else float('nan'):.3f} (<= {0.2 * amplitude:g}), "
                   f"argmax {tuple(round(v, 3) for v in am)}")


def check_homotopy(resolution=48, eps=0.05, n_t=21, out=None, limit=1800.0):
    """Equal terms give identical families; a planted eps*y^2 is reconstructed."""
    t0 = time.time()
    d = build_domain("halfdisk", resolution)
    q = np.zeros(d.n)
    f2 = cubic_term(1.0)
    f1 = polynomial_term([0.0, 0.0, eps, 1.0])
    xb = d.nodes[d.bidx]
    g = 2 * (1 + xb[:, 0]) * np.exp(-xb[:, 1])
    same = solution_path(d, q, f2, f2, g, n_t=11)
    dmax = same.max_difference_l2(d)
    path = solution_path(d, q, f1, f2, g, n_t=n_t)
    dfm = recover_df_along_path(d, path, q, f1, f2)
    S = np.array([u[dfm.node_index] for u in path.u1])
    queries = [(j, S[k, j]) for j in range(0, len(dfm.node_index), 5) for k in range(1, len(path.t), 4)]
    n_out = 0
    for j in range(0, len(dfm.node_index), 25):
        queries.append((j, 1.5 * np.abs(S[:, j]).max() + 0.1))
        n_out += 1
    rec = integrate_f_difference(d, path, dfm, queries, truth=lambda x, y: eps * y**2)
    ok = (dmax <= same.tol and not path.truncated and bool(rec.within_tolerance)
          and rec.excluded >= n_out)
    m = {"equal_terms_max_difference": dmax, "solver_tolerance": same.tol, "K": path.K,
         "max_error": rec.max_error, "max_tolerance": float(rec.tolerance.max()),
         "queries": len(queries), "excluded": rec.excluded, "planted_out_of_range": n_out}
    if out is not None:
        path.to_archive(os.path.join(out, "path_archive"), d)
        rec.to_csv(os.path.join(out, "reachable_set.csv"))
        _plots(out).reachable_plot(rec, os.path.join(out, "reachable_set.png"))
        _write(out, "homotopy.json", json.dumps(_jsonable(m), indent=2))
    return _finish(7, "homotopy reconstruction", t0, limit, ok, m,
                   f"equal-term difference {dmax:.1e} (<= {same.tol:g}), max error {rec.max_error:.1e} "
                   f"within tolerance={rec.within_tolerance}, {rec.excluded} of {len(queries)} excluded")


def check_diagnostics(resolutions=(128, 256), taus=(8.0, 16.0, 32.0), n_samples=8, tol=0.25,
                      seed=0, out=None, limit=600.0):
    """Carleman and conjugated-solver ratios: finite, and the sweep statistic stable under refinement."""
    t0 = time.time()
    table = {}
    for n in resolutions:
        d, w, q = _bump_setup(n)
        x, y = d.nodes.T
        for t in taus:
            cr = []
            for k in range(n_samples):
                u, lap, dn = carleman_sample(d, np.random.default_rng(seed + k))
                cr.append(carleman_ratio(d, u, q, w, t, lap, dn))
            sr = []
            for k in range(3):
                rng = np.random.default_rng(seed + 100 + k)
                kx, ky, ph = rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0, 2 * np.pi)
                f = np.cos(kx * x + ky * y + ph) * d.interior
                sr.append(solve_conjugated(d, q, w, t, f).ratio)
            table[(n, t)] = (max(cr), max(sr))
    c0, c1 = resolutions
    stats = {}
    for j, name in enumerate(("carleman", "solver")):
        coarse = max(table[(c0, t)][j] for t in taus)
        fine = max(table[(c1, t)][j] for t in taus)
        per_tau = [abs(table[(c1, t)][j] / table[(c0, t)][j] - 1) for t in taus]
        stats[name] = {"sweep_max_coarse": coarse, "sweep_max_fine": fine,
                       "sweep_change": abs(fine / coarse - 1), "per_tau_change": per_tau,
                       "per_tau_coarse": [table[(c0, t)][j] for t in taus],
                       "per_tau_fine": [table[(c1, t)][j] for t in taus]}
    vals = np.array(list(table.values()))
    finite = bool(np.all(np.isfinite(vals)) and np.all(vals > 0))
    ok = finite and all(s["sweep_change"] <= tol and max(s["per_tau_change"]) <= tol for s in stats.values())
    m = {"resolutions": list(resolutions), "tau": list(taus), **stats}
    _write(out, "diagnostics.json", json.dumps(_jsonable(m), indent=2))
    return _finish(8, "diagnostic ratios", t0, limit, ok, m,
                   f"Carleman sup {stats['carleman']['sweep_max_coarse']:.4g} -> {stats['carleman']['sweep_max_fine']:.4g}, "
                   f"solver sup {stats['solver']['sweep_max_coarse']:.4g} -> {stats['solver']['sweep_max_fine']:.4g} "
                   f"(within {tol:.0%})")


CHECKS = {1: check_cauchy_transform, 2: check_stationary_phase, 3: check_cgo_residuals,
          4: check_semilinear, 5: check_pairing, 6: check_recovery, 7: check_homotopy,
          8: check_diagnostics}


def run_checks(numbers=None, out=None, overrides=None):
    """Run the selected checks; ``overrides`` maps a number to keyword arguments."""
    overrides = overrides or {}
    results = []
    for k in numbers or sorted(CHECKS):
        kw = dict(overrides.get(k, {}))
        sub = None if out is None else os.path.join(out, f"criterion_{k}")
        try:
            res = CHECKS[k](out=sub, **kw)
        except Exception as exc:  # a crashing check is a failing check
            log.exception("check %d raised", k)
            res = CheckResult(k, CHECKS[k].__name__, False, 0.0, 0.0, {}, f"raised {exc!r}")
        log.info(res.line())
        results.append(res)
    return results
