"""Forward semilinear solver, conjugated solver, Cauchy data and Carleman diagnostics.

Discretisation: P1 stiffness ``K`` with lumped masses ``w``.  The discrete
operator in strong form is ``L_h u = w^{-1}(-K u) + q u`` at interior
nodes.  For a solution of ``L_h u - f(u) - s = 0`` the variationally
consistent boundary flux

    F_j = (K u)_j - w_j (q u - f(u) - s)_j        (boundary node j)

satisfies the exact discrete Green identity u^T K v = sum_interior ... +
sum_boundary v_j F_j; ``F_j / |boundary segment|`` approximates the normal
derivative.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


# ---------------------------------------------------------------------------
# nonlinear terms


@dataclass(frozen=True)
class NonlinearTerm:
    """f(x, y) with its first two y-derivatives, vectorised over nodes."""

    f: Callable
    df: Callable
    d2f: Callable
    name: str = "custom"
    C1: float = 0.0
    C2: float = 0.0
    p: float = 1.0
    C3: float = 0.0
    C4: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    C_small: float = 0.0
    delta: float = 0.0
    params: dict = field(default_factory=dict)

    def __call__(self, xy, y):
        return self.f(xy, y)

    @property
    def is_zero(self):
        return self.name == "zero"

    def check_vanishing(self, xy, tol=1e-12):
        z = np.zeros(len(xy))
        return float(max(np.abs(self.f(xy, z)).max(), np.abs(self.df(xy, z)).max())) <= tol

    def check_coercive(self, xy, ys=None):
        """Sampled f(x,y) y >= C1 |y|^{p+1} - C2."""
        ys = np.linspace(-3, 3, 61) if ys is None else ys
        for y in ys:
            yy = np.full(len(xy), y)
            if np.any(self.f(xy, yy) * yy < self.C1 * np.abs(yy) ** (self.p + 1) - self.C2 - 1e-12):
                return False
        return True

    def check_small(self, xy, n=21):
        """Sampled |f(x,y)| <= C |y|^p for |y| <= delta."""
        for y in np.linspace(-self.delta, self.delta, n):
            yy = np.full(len(xy), y)
            if np.any(np.abs(self.f(xy, yy)) > self.C_small * np.abs(yy) ** self.p + 1e-14):
                return False
        return True

    def to_dict(self):
        return {"name": self.name, "params": self.params, "C1": self.C1, "C2": self.C2,
                "p": self.p, "C3": self.C3, "C4": self.C4, "p1": self.p1, "p2": self.p2,
                "C_small": self.C_small, "delta": self.delta}


def zero_term():
    z = lambda xy, y: np.zeros_like(np.asarray(y, dtype=float))  # noqa: E731
    return NonlinearTerm(z, z, z, "zero", C1=0.0, C2=0.0, p=3.0, C_small=0.0, delta=1.0)


def cubic_term(c=1.0):
    """f(x, y) = c(x) y^3 with c > 0 constant or a callable of the node coordinates."""
    cf = c if callable(c) else (lambda xy, _c=float(c): np.full(len(xy), _c))
    cmin = float(c) if not callable(c) else None
    return NonlinearTerm(
        lambda xy, y: cf(xy) * y**3,
        lambda xy, y: 3 * cf(xy) * y**2,
        lambda xy, y: 6 * cf(xy) * y,
        "cubic",
        C1=cmin if cmin is not None else 0.0, C2=0.0, p=3.0,
        C3=abs(cmin) if cmin is not None else 0.0, C4=0.0, p1=3.0, p2=2.0,
        C_small=abs(cmin) if cmin is not None else 0.0, delta=1.0,
        params={"c": c if not callable(c) else "callable"},
    )


def polynomial_term(coeffs, y_window=None):
    """f(x, y) = sum_k coeffs[k] y^k (k >= 2), optionally times a smooth window in y.

    ``y_window=(lo, hi, width)`` multiplies by a C^2 bump equal to 1 on
    [lo, hi] and 0 outside [lo - width, hi + width].
    """
    c = np.asarray(coeffs, float)
    if len(c) > 0 and c[0] != 0 or len(c) > 1 and c[1] != 0:
        raise ValueError("f(x,0) and df/dy(x,0) must vanish: start at the y^2 coefficient")
    P = np.polynomial.Polynomial(c)
    dP, d2P = P.deriv(), P.deriv(2)
    if y_window is None:
        return NonlinearTerm(lambda xy, y: P(y), lambda xy, y: dP(y), lambda xy, y: d2P(y),
                             "polynomial", params={"coeffs": c.tolist()})
    lo, hi, wd = y_window

    def win(y, k=0):
        from .weights import smoothstep5

        a = (np.asarray(y) - (lo - wd)) / wd
        b = ((hi + wd) - np.asarray(y)) / wd
        if k == 0:
            return smoothstep5(a) * smoothstep5(b)
        eps = 1e-6 * wd
        return (win(y + eps) - win(y - eps)) / (2 * eps) if k == 1 else \
            (win(y + eps) - 2 * win(y) + win(y - eps)) / eps**2

    return NonlinearTerm(
        lambda xy, y: P(y) * win(y),
        lambda xy, y: dP(y) * win(y) + P(y) * win(y, 1),
        lambda xy, y: d2P(y) * win(y) + 2 * dP(y) * win(y, 1) + P(y) * win(y, 2),
        "windowed_polynomial", params={"coeffs": c.tolist(), "window": list(y_window)})


def add_terms(a, b, name=None):
    return NonlinearTerm(lambda xy, y: a.f(xy, y) + b.f(xy, y),
                         lambda xy, y: a.df(xy, y) + b.df(xy, y),
                         lambda xy, y: a.d2f(xy, y) + b.d2f(xy, y),
                         name or f"{a.name}+{b.name}", C1=a.C1, C2=a.C2, p=a.p,
                         params={"a": a.to_dict(), "b": b.to_dict()})


# ---------------------------------------------------------------------------
# linear algebra helpers


def operator_matrix(domain, q):
    """Weak-form matrix -K + diag(w q)."""
    return (-domain.stiffness + sp.diags(domain.weights * np.asarray(q, float))).tocsr()


def strong_residual(domain, u, q, f=None, s=None):
    """w^{-1}(-K u + w (q u - f(u) - s)) at every node (boundary rows unused)."""
    r = -(domain.stiffness @ u) + domain.weights * (np.asarray(q) * u)
    if f is not None and not f.is_zero:
        r = r - domain.weights * f(domain.nodes, u)
    if s is not None:
        r = r - domain.weights * s
    return r / domain.weights


def boundary_flux(domain, u, q, f=None, s=None):
    """Consistent flux F_j at boundary nodes (ordered as ``domain.bidx``)."""
    r = strong_residual(domain, u, q, f, s) * domain.weights
    return -r[domain.bidx]


# ---------------------------------------------------------------------------
# forward solver


@dataclass
class ForwardSolution:
    u: np.ndarray
    residual: float
    history: list
    iterations: int
    energy_ok: bool
    energy: dict

    def quadratic_ratios(self, below=1e-3):
        h = [r for r in self.history if r > 0]
        return [b / a**2 for a, b in zip(h, h[1:]) if a < below]


def energy_check(domain, u, q, f, s=None):
    """Discrete energy inequality int|grad u|^2 + C1 int|u|^{p+1} <= boundary term + int q u^2 + C2 Vol."""
    F = boundary_flux(domain, u, q, f, s)
    lhs = float(u @ (domain.stiffness @ u)) + f.C1 * float(np.sum(domain.weights * np.abs(u) ** (f.p + 1)))
    rhs = float(np.sum(u[domain.bidx] * F)) + float(np.sum(domain.weights * q * u**2)) + f.C2 * domain.area
    if s is not None:
        rhs -= float(np.sum(domain.weights * s * u))
    return lhs <= rhs + 1e-9 * max(1.0, abs(rhs)), {"lhs": lhs, "rhs": rhs}


def solve_forward(domain, q, f, g, s=None, u0=None, tol=1e-9, maxit=50, max_halvings=30,
                  scale=1.0):
    """Solve Delta u + q u - f(x,u) = s with u = g on the boundary by damped Newton.

    ``g`` are boundary values ordered as ``domain.bidx`` (or a full nodal
    array whose boundary entries are used).  The first iterate is the
    linear solve with f frozen at 0 unless ``u0`` is given; linear problems
    are solved directly.  Convergence is ``max |residual| <= tol * scale``,
    so pass the solution magnitude as ``scale`` for very small fields.
    """
    q = np.asarray(q, float)
    g = np.asarray(g, float)
    if g.shape == (domain.n,):
        g = g[domain.bidx]
    I = np.flatnonzero(domain.interior)
    B = domain.bidx
    A = operator_matrix(domain, q)
    AII = A[I][:, I].tocsc()
    AIB = A[I][:, B]
    W = domain.weights
    src = np.zeros(domain.n) if s is None else np.asarray(s, float)

    def res(u):
        r = A @ u - W * src
        if not f.is_zero:
            r = r - W * f(domain.nodes, u)
        return r[I]

    u = np.zeros(domain.n)
    u[B] = g
    if u0 is None or f.is_zero:
        u[I] = spla.spsolve(AII, -(AIB @ g) + (W * src)[I])
    else:
        u[I] = np.asarray(u0, float)[I]
    history = []
    r = res(u)
    rn = float(np.abs(r / W[I]).max())
    history.append(rn)
    it = 0
    tol = tol * scale
    while rn > tol and it < maxit:
        it += 1
        if f.is_zero:
            J = AII
        else:
            J = (AII - sp.diags(W[I] * f.df(domain.nodes[I], u[I]))).tocsc()
        du = spla.spsolve(J, -r)
        step = 1.0
        for _ in range(max_halvings + 1):
            un = u.copy()
            un[I] += step * du
            rn_new = float(np.abs(res(un) / W[I]).max())
            if np.isfinite(rn_new) and rn_new < rn:
                break
            step *= 0.5
        else:
            raise SolverError("Newton step could not reduce the residual", history)
        u = un
        r = res(u)
        rn = rn_new
        history.append(rn)
    if rn > tol:
        raise SolverError(f"Newton did not converge: residual {rn:.3e}", history)
    ok, en = energy_check(domain, u, q, f, s)
    return ForwardSolution(u, rn, history, it, ok, en)


# ---------------------------------------------------------------------------
# conjugated solver


@dataclass
class ConjugatedSolution:
    w: np.ndarray
    tau: float
    residual: float
    ratio: float
    mode: str


def conjugated_operator(domain, q, weight, tau):
    """Matrix of w -> e^{-tau phi} L_h (e^{tau phi} w), rows in strong form."""
    phi = weight.phi(domain.z)
    # scale by e^{tau(phi_j - phi_max)} to keep entries bounded
    A = operator_matrix(domain, q)
    Wi = sp.diags(1.0 / domain.weights)
    E = sp.diags(np.exp(tau * (phi - phi.max())))
    Ei = sp.diags(np.exp(-tau * (phi - phi.max())))
    return (Ei @ Wi @ A @ E).tocsr()


def apply_conjugated(domain, q, weight, tau, w):
    phi = weight.phi(domain.z)
    s = np.exp(tau * (phi - phi.max()))
    A = operator_matrix(domain, q)
    return (A @ (s * w)) / domain.weights / s


class ConjugatedSolver:
    """Factorised solver for e^{-tau phi} L_h e^{tau phi} w = f, w|Gamma_0 = g.

    mode "minnorm": unknowns at interior and Gamma-tilde nodes, equations at
    interior nodes; returns the solution of least weighted L2 norm through
    the KKT system [[W, P^H], [P, 0]].
    mode "dirichlet": additionally w = 0 on Gamma-tilde.
    ``norm`` selects the minimised quantity: "h1" uses tau^2 ||w||^2 +
    |w|_1^2 (smooth up to Gamma-tilde), "l2" the lumped L2 norm.
    """

    def __init__(self, domain, q, weight, tau, mode="minnorm", potential_shift=None, norm="h1"):
        from .weights import tau_cap

        if abs(tau) > tau_cap(domain, weight) * (1 + 1e-9):
            raise SolverError(f"|tau|={abs(tau):g} exceeds the mesh resolution cap")
        self.domain, self.weight, self.tau, self.mode = domain, weight, float(tau), mode
        self.norm = norm
        qq = np.asarray(q, float) if potential_shift is None else np.asarray(q, float) + potential_shift
        self.q = qq
        P = conjugated_operator(domain, qq, weight, tau)
        I = np.flatnonzero(domain.interior)
        G0 = domain.gamma0_nodes
        if mode == "minnorm":
            U = np.flatnonzero(~domain.gamma0)
        elif mode == "dirichlet":
            U = I
        else:
            raise SolverError(f"unknown mode {mode!r}")
        self.I, self.U, self.G0 = I, U, G0
        PI = P[I]
        self.PU = PI[:, U].tocsc()
        self.PG = PI[:, G0].tocsc()
        if mode == "minnorm":
            if norm == "l2":
                Wu = sp.diags(domain.weights[U])
            elif norm == "h1":
                Wu = (domain.stiffness + tau**2 * sp.diags(domain.weights))[U][:, U]
            else:
                raise SolverError(f"unknown norm {norm!r}")
            K = sp.bmat([[Wu, self.PU.T], [self.PU, None]], format="csc")
        else:
            K = self.PU
        try:
            self.lu = spla.splu(K.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"conjugated system is singular: {exc}") from exc

    def solve(self, f, g=None):
        dom = self.domain
        f = np.asarray(f)
        cplx = np.iscomplexobj(f) or (g is not None and np.iscomplexobj(g))
        if cplx:
            wr = self.solve(np.real(f), None if g is None else np.real(g))
            wi = self.solve(np.imag(f), None if g is None else np.imag(g))
            return wr + 1j * wi
        gG = np.zeros(len(self.G0)) if g is None else np.asarray(g, float).reshape(-1)
        if gG.shape == (dom.n,):
            gG = gG[self.G0]
        rhs = f[self.I] - self.PG @ gG
        w = np.zeros(dom.n)
        w[self.G0] = gG
        if self.mode == "minnorm":
            sol = self.lu.solve(np.concatenate([np.zeros(len(self.U)), rhs]))
            w[self.U] = sol[: len(self.U)]
        else:
            w[self.U] = self.lu.solve(rhs)
        return w

    def residual(self, w, f):
        r = apply_conjugated(self.domain, self.q, self.weight, self.tau, w) - f
        return float(np.abs(r[self.I]).max())


def solve_conjugated(domain, q, weight, tau, f, g=None, mode="minnorm", norm="h1"):
    """One-shot conjugated solve with the H^{2,tau} ratio against tau^{3/2}||f|| + ||g||."""
    S = ConjugatedSolver(domain, q, weight, tau, mode, norm=norm)
    w = S.solve(f, g)
    res = S.residual(w, f) if not np.iscomplexobj(w) else max(
        S.residual(w.real, np.real(f)), S.residual(w.imag, np.imag(f)))
    gnorm = 0.0 if g is None else domain.boundary_l2(
        np.asarray(g)[domain.bidx] if np.shape(g) == (domain.n,) else np.zeros(len(domain.bidx)))
    den = abs(tau) ** 1.5 * domain.l2(f) + gnorm
    ratio = domain.norm_h2_tau(w, tau) / den if den > 0 else 0.0
    return ConjugatedSolution(w, float(tau), res, float(ratio), mode)


# ---------------------------------------------------------------------------
# Cauchy data


@dataclass
class CauchyData:
    arclength: np.ndarray
    nodes: np.ndarray
    trace: np.ndarray
    normal_derivative: np.ndarray
    method: str

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "x1", "x2", "u", "du_dnu"])
        for s, (x, y), u, d in zip(self.arclength, self.nodes, self.trace, self.normal_derivative):
            w.writerow([f"{s:.12e}", f"{x:.12e}", f"{y:.12e}", f"{u:.12e}", f"{d:.12e}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def normal_derivative_stencil(domain, u):
    """Least-squares quadratic gradient at boundary nodes dotted with the normal (second order)."""
    gx = domain.dx @ u
    gy = domain.dy @ u
    b = domain.bidx
    return gx[b] * domain.normals[:, 0] + gy[b] * domain.normals[:, 1]


def cauchy_data(domain, u, q=None, f=None, s=None, method="stencil", region="gamma_tilde"):
    """(trace, normal derivative) on Gamma-tilde (or the whole boundary).

    method "stencil": one-sided least-squares quadratic fit, second order.
    method "flux": consistent flux divided by the boundary segment length.
    """
    u = np.asarray(u)
    if method == "stencil":
        dn = normal_derivative_stencil(domain, u)
    elif method == "flux":
        qq = np.zeros(domain.n) if q is None else q
        dn = boundary_flux(domain, u, qq, f, s) / domain.bd_weights
    else:
        raise ValueError(f"unknown method {method!r}")
    mask = domain.gamma_tilde[domain.bidx] if region == "gamma_tilde" else np.ones(len(domain.bidx), bool)
    b = domain.bidx[mask]
    return CauchyData(domain.arclength[mask], domain.nodes[b], u[b], dn[mask], method)


# ---------------------------------------------------------------------------
# Carleman diagnostic


def carleman_ratio(domain, u, q, weight, tau, lap_u=None, dnu=None):
    """LHS/RHS of the weighted Carleman inequality for u vanishing on the boundary.

    LHS = |tau| |u e|^2 + |u e|_{H^1}^2 + |dnu u e|^2_{Gamma_0} + tau^2 ||Phi'| u e|^2
    RHS = |(L u) e|^2 + |tau| int_{Gamma-tilde} |dnu u|^2 e^2
    with e = exp(tau phi).  ``lap_u``/``dnu`` default to least-squares values.
    """
    u = np.asarray(u, float)
    if not np.any(u):
        return 0.0
    if np.abs(u[domain.bidx]).max() > 1e-10 * np.abs(u).max():
        raise ValueError("Carleman sample must vanish on the boundary")
    phi = weight.phi(domain.z)
    e = np.exp(tau * phi)
    lap = domain.laplacian_ls(u) if lap_u is None else np.asarray(lap_u)
    dn = normal_derivative_stencil(domain, u) if dnu is None else np.asarray(dnu)
    ue = u * e
    w = domain.weights
    g0 = domain.gamma0[domain.bidx]
    eb = e[domain.bidx]
    lhs = (abs(tau) * np.sum(w * ue**2) + np.sum(w * ue**2) + float(ue @ (domain.stiffness @ ue))
           + domain.boundary_l2(dn * eb, g0) ** 2
           + tau**2 * np.sum(w * (np.abs(weight.dphi_c(domain.z)) * ue) ** 2))
    Lu = lap + np.asarray(q) * u
    rhs = np.sum(w * (Lu * e) ** 2) + abs(tau) * domain.boundary_l2(dn * eb, ~g0) ** 2
    return float(lhs / rhs) if rhs > 0 else float("inf")


def carleman_sample(domain, rng, n_modes=4, kmax=4.0):
    """Random smooth sample vanishing on the half-disk boundary with exact Laplacian and flux.

    u = b m with b = y (R^2 - x^2 - y^2) and m a random sum of plane waves.
    Returns (u, lap_u, dnu at boundary nodes).
    """
    if domain.shape_info.get("shape") != "halfdisk":
        raise ValueError("closed-form samples are provided for the half-disk")
    R = domain.shape_info["radius"]
    x, y = domain.nodes.T
    k = rng.uniform(-kmax, kmax, size=(n_modes, 2))
    th = rng.uniform(0, 2 * np.pi, n_modes)
    amp = rng.normal(size=n_modes)
    arg = k[:, :1] * x + k[:, 1:] * y + th[:, None]
    m = (amp[:, None] * np.cos(arg)).sum(0)
    mx = -(amp[:, None] * k[:, :1] * np.sin(arg)).sum(0)
    my = -(amp[:, None] * k[:, 1:] * np.sin(arg)).sum(0)
    lm = -(amp[:, None] * (k**2).sum(1)[:, None] * np.cos(arg)).sum(0)
    b = y * (R**2 - x**2 - y**2)
    bx, by = -2 * x * y, R**2 - x**2 - 3 * y**2
    lb = -8 * y
    u = b * m
    u[domain.bidx] = 0.0
    lap = lb * m + 2 * (bx * mx + by * my) + b * lm
    nb = domain.normals
    bi = domain.bidx
    dnu = (bx[bi] * nb[:, 0] + by[bi] * nb[:, 1]) * m[bi]
    return u, lap, dnu
