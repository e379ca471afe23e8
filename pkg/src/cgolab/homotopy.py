"""Solution families along an excitation path and reconstruction of f1 - f2.

Along ``g_t = t g_base`` the forward solutions ``u_{1,t}``, ``u_{2,t}`` (same
Dirichlet data) sweep the reachable set ``{(x, u_{1,t}(x))}``.  The
difference of the linearised potentials ``q - df_j/dy(x, u_{j,t})`` is
recovered point by point, and ``f1 - f2`` at ``(x, y)`` follows by
integrating the recovered derivative difference in ``y`` along the
reparametrisation ``s = u_{1,t}(x)``, starting from ``f1 - f2 = 0`` at ``y = 0``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .solvers import NonlinearTerm, SolverError, solve_forward

log = logging.getLogger(__name__)


class HomotopyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# path


@dataclass
class SolutionPath:
    t: np.ndarray
    u1: list
    u2: list
    g_base: np.ndarray
    newton_iterations: list
    truncated: bool = False
    diagnostic: str = ""
    tol: float = 1e-9

    @property
    def K(self):
        """sup_t ||u_{1,t}||_C0."""
        return float(max(np.abs(u).max() for u in self.u1))

    def gamma(self, t_star=0.0):
        k = int(np.argmin(np.abs(self.t - t_star)))
        return np.array([np.abs(a - self.u1[k]).max() + np.abs(b - self.u2[k]).max()
                         for a, b in zip(self.u1, self.u2)])

    def max_difference_l2(self, domain):
        return float(max(domain.l2(a - b) for a, b in zip(self.u1, self.u2)))

    def increments(self):
        return [float(np.abs(b - a).max()) for a, b in zip(self.u1, self.u1[1:])]

    def to_archive(self, directory, domain=None, extra=None):
        """Write u1/u2 snapshots as .npy files plus manifest.json; returns the manifest."""
        os.makedirs(directory, exist_ok=True)
        entries = []
        for k, (t, a, b) in enumerate(zip(self.t, self.u1, self.u2)):
            fa, fb = f"u1_{k:04d}.npy", f"u2_{k:04d}.npy"
            np.save(os.path.join(directory, fa), a)
            np.save(os.path.join(directory, fb), b)
            entries.append({"index": k, "t": float(t), "u1": fa, "u2": fb,
                            "newton_iterations": self.newton_iterations[k],
                            "u1_sha256": hashlib.sha256(a.tobytes()).hexdigest(),
                            "u2_sha256": hashlib.sha256(b.tobytes()).hexdigest()})
        np.save(os.path.join(directory, "g_base.npy"), self.g_base)
        man = {"t": self.t.tolist(), "snapshots": entries, "K": self.K,
               "gamma_t0": self.gamma(0.0).tolist(), "truncated": self.truncated,
               "diagnostic": self.diagnostic, "tolerance": self.tol,
               "domain": None if domain is None else domain.shape_info}
        if extra:
            man.update(extra)
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
        return man

    @classmethod
    def from_archive(cls, directory):
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
        u1 = [np.load(os.path.join(directory, e["u1"])) for e in man["snapshots"]]
        u2 = [np.load(os.path.join(directory, e["u2"])) for e in man["snapshots"]]
        g = np.load(os.path.join(directory, "g_base.npy"))
        return cls(np.array(man["t"]), u1, u2, g, [e["newton_iterations"] for e in man["snapshots"]],
                   man["truncated"], man["diagnostic"], man["tolerance"])


def solution_path(domain, q, f1, f2, g_base, t_grid=None, n_t=11, tol=1e-9, max_newton=5,
                  min_step=1e-4):
    """Continuation in t with g_t = t g_base; u_{2,t} shares the Dirichlet data of u_{1,t}.

    The step is halved whenever either Newton solve needs more than
    ``max_newton`` iterations; a failed solve truncates the path.
    """
    g_base = np.asarray(g_base, float)
    if g_base.shape == (domain.n,):
        g_base = g_base[domain.bidx]
    grid = list(np.linspace(0.0, 1.0, n_t) if t_grid is None else np.asarray(t_grid, float))
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise HomotopyError("t grid must start at 0 and increase strictly")
    zero = np.zeros(domain.n)
    ts, U1, U2, its = [0.0], [zero.copy()], [zero.copy()], [0]
    truncated, diag = False, ""
    targets = grid[1:]
    i = 0
    while i < len(targets):
        t = targets[i]
        try:
            s1 = solve_forward(domain, q, f1, t * g_base, u0=U1[-1], tol=tol)
            s2 = solve_forward(domain, q, f2, t * g_base, u0=U2[-1], tol=tol)
        except SolverError as exc:
            s1 = s2 = None
            err = str(exc)
        if s1 is None or max(s1.iterations, s2.iterations) > max_newton:
            mid = 0.5 * (ts[-1] + t)
            if t - ts[-1] < min_step:
                truncated, diag = True, (f"continuation stalled at t={t:g}: "
                                         + (err if s1 is None else "too many Newton iterations"))
                break
            targets.insert(i, mid)
            continue
        ts.append(t)
        U1.append(s1.u)
        U2.append(s2.u)
        its.append(max(s1.iterations, s2.iterations))
        i += 1
    return SolutionPath(np.array(ts), U1, U2, g_base, its, truncated, diag, tol)


# ---------------------------------------------------------------------------
# effective potentials


@dataclass
class EffectivePotential:
    values: np.ndarray
    provenance: str
    residual: float | None = None
    mask: np.ndarray | None = None
    tilde: NonlinearTerm | None = None


def _node_lookup(domain):
    cache = domain.__dict__.setdefault("_node_tree", {})
    if "tree" not in cache:
        cache["tree"] = cKDTree(domain.nodes)
    return cache["tree"]


def linearized_potential(domain, q, f, u_t):
    """q - df/dy(x, u_t) and the shifted term f~(x, w) = f(x, w+u_t) - f(x, u_t) - df/dy(x, u_t) w."""
    u_t = np.asarray(u_t, float)
    xy = domain.nodes
    pot = np.asarray(q, float) - f.df(xy, u_t)
    tree = _node_lookup(domain)

    def idx(pts):
        d, k = tree.query(pts)
        if np.any(d > 1e-12):
            raise HomotopyError("shifted nonlinearity is defined on mesh nodes only")
        return k

    def ft(pts, w):
        k = idx(pts)
        ut = u_t[k]
        return f.f(pts, w + ut) - f.f(pts, ut) - f.df(pts, ut) * w

    def dft(pts, w):
        k = idx(pts)
        return f.df(pts, w + u_t[k]) - f.df(pts, u_t[k])

    def d2ft(pts, w):
        return f.d2f(pts, w + u_t[idx(pts)])

    tilde = NonlinearTerm(ft, dft, d2ft, f"shifted_{f.name}")
    return EffectivePotential(pot, "path_linearized", tilde=tilde)


def divided_potential(domain, q, f, u, threshold=1e-6):
    """q - f(x, u)/u where |u| > threshold, so that (Delta + q3) u = 0 there."""
    u = np.asarray(u, float)
    mask = np.abs(u) > threshold
    vals = np.asarray(q, float).copy()
    vals[mask] -= f.f(domain.nodes[mask], u[mask]) / u[mask]
    from .solvers import strong_residual

    r = strong_residual(domain, u, vals)
    m = mask & domain.interior
    res = float(np.abs(r[m]).max()) if m.any() else 0.0
    return EffectivePotential(vals, "divided", res, mask)


# ---------------------------------------------------------------------------
# derivative-difference map and integration


@dataclass
class DfMap:
    """Per-t values of the derivative difference d(f1 - f2)/dy along the path at ``node_index``."""

    t: np.ndarray
    node_index: np.ndarray
    values: np.ndarray          # shape (n_t, n_points)
    method: str
    failures: list = field(default_factory=list)


def recover_df_along_path(domain, path, q, f1, f2, points=None, method="oracle", taus=None,
                          t_indices=None, **recovery_kw):
    """Derivative-difference map along the path.

    method "recovery" runs the potential extraction on the pair of
    linearised potentials at every t and scan point.  method "oracle"
    evaluates df1/dy - df2/dy at (x, u_{1,t}(x)) directly, which isolates
    the reconstruction step from recovery error; it coincides with the
    potential difference whenever the two families agree.
    """
    if points is None:
        idx = np.flatnonzero(domain.interior)
    else:
        tree = _node_lookup(domain)
        idx = tree.query(np.asarray(points, float))[1]
    tk = range(len(path.t)) if t_indices is None else t_indices
    vals = np.zeros((len(path.t), len(idx)))
    fails = []
    xy = domain.nodes[idx]
    for k in tk:
        if method == "oracle":
            s = path.u1[k][idx]
            vals[k] = f1.df(xy, s) - f2.df(xy, s)
        elif method == "recovery":
            Q1 = linearized_potential(domain, q, f1, path.u1[k]).values
            Q2 = linearized_potential(domain, q, f2, path.u2[k]).values
            from .recovery import RecoveryError, extract_q_at_point
            from .weights import WeightError

            if np.array_equal(Q1, Q2):
                continue
            for j, i in enumerate(idx):
                try:
                    e = extract_q_at_point(domain, tuple(domain.nodes[i]), Q1, Q2, taus, **recovery_kw)
                    vals[k, j] = -e.recovered
                except (RecoveryError, WeightError, SolverError) as exc:
                    vals[k, j] = np.nan
                    fails.append({"t": float(path.t[k]), "node": int(i), "error": str(exc)})
        else:
            raise HomotopyError(f"unknown method {method!r}")
    return DfMap(path.t.copy(), idx, vals, method, fails)


@dataclass
class Reconstruction:
    node_index: np.ndarray
    y: np.ndarray
    estimate: np.ndarray
    truth: np.ndarray | None
    tolerance: np.ndarray
    in_range: np.ndarray
    x: np.ndarray

    @property
    def excluded(self):
        return int((~self.in_range).sum())

    @property
    def max_error(self):
        if self.truth is None or not self.in_range.any():
            return float("nan")
        return float(np.abs(self.estimate - self.truth)[self.in_range].max())

    @property
    def within_tolerance(self):
        if self.truth is None:
            return None
        m = self.in_range
        return bool(np.all(np.abs(self.estimate[m] - self.truth[m]) <= self.tolerance[m]))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "y", "f1_minus_f2_est", "truth_if_known"])
        for k in range(len(self.y)):
            est = f"{self.estimate[k]:.12e}" if self.in_range[k] else "excluded"
            tr = "" if self.truth is None else f"{self.truth[k]:.12e}"
            w.writerow([f"{self.x[k, 0]:.12e}", f"{self.x[k, 1]:.12e}", f"{self.y[k]:.12e}", est, tr])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _monotone_prefix(s):
    """Length of the leading run of s that is monotone away from s[0] = 0."""
    d = np.diff(s)
    sign = np.sign(d[np.flatnonzero(d)[0]]) if np.any(d) else 0.0
    if sign == 0:
        return 1
    bad = np.flatnonzero(sign * d < 0)
    return len(s) if len(bad) == 0 else int(bad[0]) + 1


def integrate_f_difference(domain, path, dfmap, queries=None, truth=None):
    """f1 - f2 on reachable-set samples by trapezoid integration in y.

    ``queries`` is a list of (k, y) pairs with k an index into
    ``dfmap.node_index``; by default every path sample (x, u_{1,t}(x)) is
    queried.  Queries outside the monotone part of the sampled range at x
    are excluded.  ``truth(xy, y)`` gives the exact difference when known.
    The per-sample tolerance is the trapezoid error bound from second
    differences of the integrand, plus a rounding floor.
    """
    idx = dfmap.node_index
    S = np.array([u[idx] for u in path.u1])      # (n_t, n_points)
    D = dfmap.values
    if queries is None:
        queries = [(j, S[k, j]) for j in range(len(idx)) for k in range(len(path.t))]
    out_k, out_y, est, tol, ok = [], [], [], [], []
    cache = {}
    for j, yq in queries:
        if j not in cache:
            s = S[:, j]
            m = _monotone_prefix(s)
            s, dv = s[:m], D[:m, j]
            order = np.argsort(s)
            ss, dd = s[order], dv[order]
            F = np.concatenate([[0.0], np.cumsum(0.5 * (dd[1:] + dd[:-1]) * np.diff(ss))])
            z0 = np.interp(0.0, ss, F) if ss[0] < 0 < ss[-1] else (F[0] if ss[0] >= 0 else F[-1])
            F = F - z0
            if len(ss) >= 3:
                h = np.diff(ss)
                sec = np.abs(np.diff(dd) / np.where(h > 0, h, np.inf))
                curv = float(np.abs(np.diff(sec)).max() / max(h.max(), 1e-300)) if len(sec) > 1 else 0.0
                hmax = float(h.max())
            else:
                curv, hmax = 0.0, 0.0
            scale = float(np.abs(dd).max() * max(np.abs(ss).max(), 1e-300))
            cache[j] = (ss, F, curv, hmax, scale)
        ss, F, curv, hmax, scale = cache[j]
        inside = ss[0] - 1e-14 <= yq <= ss[-1] + 1e-14 and (ss[0] <= 0 <= ss[-1] or len(ss) == 1)
        out_k.append(j)
        out_y.append(yq)
        ok.append(bool(inside and len(ss) > 1 or (inside and yq == 0)))
        est.append(float(np.interp(yq, ss, F)) if ok[-1] else np.nan)
        tol.append(curv * hmax**2 * abs(yq) / 12 + 1e-9 * max(scale, 1e-12) + 1e-12)
    out_k = np.array(out_k, int)
    X = domain.nodes[idx[out_k]]
    yv = np.array(out_y)
    tr = None if truth is None else np.asarray(truth(X, yv), float)
    return Reconstruction(idx[out_k], yv, np.array(est), tr, np.array(tol), np.array(ok), X)


# ---------------------------------------------------------------------------
# stability certificate


def stability_certificate(domain, path, t_star=0.0):
    """sup ||u~||_{H^2} / (gamma(t) sup ||u~||_{L^2}) over t~ in (t*, t], u~ = u1 - u2."""
    gam = path.gamma(t_star)
    k0 = int(np.argmin(np.abs(path.t - t_star)))
    diff = [a - b for a, b in zip(path.u1, path.u2)]
    h2 = np.array([domain.norm_h2(d) for d in diff])
    l2 = np.array([domain.l2(d) for d in diff])
    if np.all(l2 <= 1e-14 * max(1.0, path.K)):
        return {"t": path.t.tolist(), "certificate": [0.0] * len(path.t), "trivially_satisfied": True,
                "gamma": gam.tolist()}
    cert = []
    for k in range(len(path.t)):
        if k <= k0 or gam[k] == 0:
            cert.append(float("nan"))
            continue
        w = slice(k0 + 1, k + 1)
        den = gam[k] * l2[w].max()
        cert.append(float(h2[w].max() / den) if den > 0 else float("nan"))
    return {"t": path.t.tolist(), "certificate": cert, "trivially_satisfied": False,
            "gamma": gam.tolist(), "h2": h2.tolist(), "l2": l2.tolist()}
