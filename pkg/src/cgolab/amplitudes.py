"""Amplitude ladder for CGO solutions.

With ``X`` the amplitude multiplying ``exp(tau Phi)``, the conjugated
operator acts as

    e^{-tau Phi} L (e^{tau Phi} X) = Delta X + 4 tau Phi' dX/dzbar + q X.

The correctors below cancel its O(1) and O(1/tau) parts in the interior and
the real part of ``X`` on Gamma_0 through O(1/tau^2).  Everything here is
independent of |tau|; only the sign of tau (direct or dual side) enters the
boundary coefficient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.linalg import null_space

from .cauchy import dbar_inv, kernel_sum, reflected_sum, supports_reflection
from .weights import CutoffPair, partition_of_unity


class AmplitudeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# holomorphic helpers


def local_jets(domain, values, center, order=3, radius=None):
    """Fit ``values`` near ``center`` by sum c_jl (z-c)^j (zbar-cbar)^l.

    Returns ``{(j, l): c_jl}`` for j + l <= order; c_j0 is d^j/dz^j / j!.
    """
    deg = order + 2
    if radius is None:
        radius = max(8 * domain.h, 0.08)
    z = domain.z
    sel = np.abs(z - center) <= radius
    if sel.sum() < 3 * (deg + 1) * (deg + 2) // 2:
        raise AmplitudeError("too few nodes for a local jet fit")
    s = (z[sel] - center) / radius
    idx = [(j, l) for j in range(deg + 1) for l in range(deg + 1 - j)]
    A = np.column_stack([s**j * np.conj(s) ** l for j, l in idx])
    w = np.exp(-2 * np.abs(s) ** 2)
    c, *_ = np.linalg.lstsq(A * w[:, None], np.asarray(values)[sel] * w, rcond=None)
    return {(j, l): c[k] / radius ** (j + l) for k, (j, l) in enumerate(idx) if j + l <= order}


def hermite_poly(points, jets):
    """Complex polynomial with prescribed derivatives ``jets[i][k]`` at ``points[i]``."""
    n = sum(len(j) for j in jets)
    if n == 0:
        return Polynomial([0j])
    A = np.zeros((n, n), complex)
    b = np.zeros(n, complex)
    r = 0
    for c, js in zip(points, jets):
        for k, val in enumerate(js):
            for m in range(k, n):
                A[r, m] = math.perm(m, k) * c ** (m - k)
            b[r] = val
            r += 1
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise AmplitudeError("coincident interpolation points") from exc
    return Polynomial(coef)


def _poly_jets(P, c, order):
    out, D = [], P
    for _ in range(order + 1):
        out.append(complex(D(c)))
        D = D.deriv()
    return out


@dataclass
class HolomorphicCorrector:
    """Polynomial plus pole-sum expansion, holomorphic away from ``poles``.

    Terms: s^k for k <= degree with s = (z - center)/scale, and
    (scale/(z - w))^j for each pole w and j <= its power.
    """

    center: complex
    scale: float
    degree: int
    poles: tuple = ()
    coef: np.ndarray = field(default=None, repr=False)
    residual: float = 0.0

    @property
    def n_terms(self):
        return self.degree + 1 + sum(p for _, p in self.poles)

    def terms(self, z, k=0):
        z = np.atleast_1d(np.asarray(z, complex))
        L = self.scale
        s = (z - self.center) / L
        cols = []
        for n in range(self.degree + 1):
            cols.append(math.perm(n, k) * s ** max(n - k, 0) / L**k if n >= k else np.zeros_like(s))
        for w, pw in self.poles:
            t = L / (z - w)
            for j in range(1, pw + 1):
                # d^k/dz^k (L/(z-w))^j = (-1)^k j(j+1)...(j+k-1) L^j (z-w)^{-j-k}
                rising = math.prod(range(j, j + k)) if k else 1
                cols.append((-1) ** k * rising * t ** (j + k) / L**k)
        return np.column_stack(cols)

    def __call__(self, z):
        if self.coef is None:
            return np.zeros(np.shape(z), complex)
        return (self.terms(z) @ self.coef).reshape(np.shape(z))

    def deriv(self, z, k=1):
        return (self.terms(z, k) @ self.coef).reshape(np.shape(z))

    def to_dict(self):
        c = lambda v: [float(np.real(v)), float(np.imag(v))]  # noqa: E731
        return {"center": c(self.center), "scale": self.scale, "degree": self.degree,
                "poles": [[c(w), p] for w, p in self.poles],
                "coef": [c(v) for v in (self.coef if self.coef is not None else [])],
                "boundary_residual": self.residual}


def default_poles(domain, weight, n_mfs=12):
    """Pole set outside the closure of Omega, beyond Gamma_0."""
    g0 = domain.gamma0_nodes
    zb = domain.z[g0]
    nb = domain.normals[np.searchsorted(domain.bidx, g0)]
    span = float(np.abs(zb - zb.mean()).max()) or 1.0
    poles = []
    for c in weight.interior_cps:
        k = np.argmin(np.abs(zb - c))
        n = complex(*nb[k])
        refl = c - 2 * ((c - zb[k]) * np.conj(n)).real * n
        poles.append((complex(refl), 4))
    pick = np.linspace(0, len(zb) - 1, n_mfs).round().astype(int)
    for delta in (0.3, 0.8):
        for k in pick:
            poles.append((complex(zb[k] + delta * span * complex(*nb[k])), 1))
    out = []
    for w, p in poles:
        if domain.contains(np.array([[w.real, w.imag]]), strict=False):
            continue
        if np.min(np.abs(domain.z[domain.bidx] - w)) < 0.1 * span:
            continue
        out.append((w, p))
    return tuple(out)


def build_boundary_corrector(domain, rhs, vanish_set=(), vanish_order=2, mode="real",
                             poles=None, degree=8, ridge=1e-10, weight=None):
    """Holomorphic h fitted on Gamma_0.

    mode "real":    minimise sum_j w_j |2 Re h(x_j) - rhs_j|^2
    mode "complex": minimise sum_j w_j |h(x_j) - rhs_j|^2

    subject to h^(k)(c) = 0 for c in ``vanish_set`` and k <= ``vanish_order``.
    """
    g0 = domain.gamma0_nodes
    rhs = np.asarray(rhs)
    if rhs.shape != (len(g0),):
        raise AmplitudeError("rhs must be given on the Gamma_0 nodes")
    zb = domain.z[g0]
    center = complex(zb.mean())
    scale = float(np.abs(zb - center).max()) or 1.0
    if poles is None:
        if weight is None:
            raise AmplitudeError("need a weight or an explicit pole set")
        poles = default_poles(domain, weight)
    H = HolomorphicCorrector(center, scale, degree, tuple(poles))
    if not np.any(np.abs(rhs) > 0):
        H.coef = np.zeros(H.n_terms, complex)
        return H
    T = H.terms(zb)
    sw = np.sqrt(domain.weights_bd_at(g0))[:, None]
    if mode == "real":
        A = np.hstack([2 * T.real, -2 * T.imag]) * sw
        b = rhs.real * sw[:, 0]
    elif mode == "complex":
        A = np.vstack([np.hstack([T.real, -T.imag]), np.hstack([T.imag, T.real])]) * np.vstack([sw, sw])
        b = np.concatenate([rhs.real, rhs.imag]) * np.concatenate([sw[:, 0], sw[:, 0]])
    else:
        raise AmplitudeError(f"unknown mode {mode!r}")
    scl = np.linalg.norm(A, axis=0)
    scl[scl == 0] = 1.0
    A = A / scl
    rows = []
    for c in vanish_set:
        for k in range(vanish_order + 1):
            t = H.terms(np.array([c]), k)[0]
            rows.append(np.concatenate([t.real, -t.imag]))
            rows.append(np.concatenate([t.imag, t.real]))
    if rows:
        C = np.array(rows) / scl
        N = null_space(C)
        if N.shape[1] == 0:
            raise AmplitudeError("constraints leave no freedom")
    else:
        N = np.eye(A.shape[1])
    AN = A @ N
    lam = ridge * np.linalg.norm(AN, 2)
    M = np.vstack([AN, lam * np.eye(N.shape[1])])
    y, *_ = np.linalg.lstsq(M, np.concatenate([b, np.zeros(N.shape[1])]), rcond=None)
    x = (N @ y) / scl
    nt = H.n_terms
    H.coef = x[:nt] + 1j * x[nt:]
    fit = 2 * H(zb).real if mode == "real" else H(zb)
    den = max(np.sqrt(np.sum(domain.weights_bd_at(g0) * np.abs(rhs) ** 2)), 1e-300)
    H.residual = float(np.sqrt(np.sum(domain.weights_bd_at(g0) * np.abs(fit - rhs) ** 2)) / den)
    return H


class ReflectedCorrector:
    """Holomorphic h on Omega with 2 Re h = Re(p / Phi') on the real axis.

    ``p = 1/2 dbar^{-1}(density) - M``.  Its mirror image
    p*(z) = conj(p(conj z)) is holomorphic on the upper half plane, so

        h = p* / (2 Phi') - sum_c r_c/(2(z-c)) + sum_c conj(r_c)/(2(z-conj c)) + i P(z)

    with r_c = p*(c)/Phi''(c) removing the poles at interior critical points
    c and a real-coefficient polynomial P fixing the jets at c (i P is pure
    imaginary on the axis).
    """

    def __init__(self, domain, weight, density, M, vanish_order=2, radius=None):
        self.domain = domain
        self.weight = weight
        self.wd = domain.weights * np.conj(np.asarray(density, complex))
        self.Mstar = Polynomial(np.conj(M.coef))
        self.cps = list(weight.interior_cps)
        self.radius = radius if radius is not None else 0.5 * min(
            [0.1] + [float(domain.distance_to_boundary(np.array([[c.real, c.imag]]))[0])
                     for c in self.cps])
        self.P = Polynomial([0j])
        self.res = [self._pstar(np.array([c]))[0] / complex(weight.d2phi_c(c)) for c in self.cps]
        self._nodes = None
        if vanish_order >= 0 and self.cps:
            jets = [self.jets(c, vanish_order) for c in self.cps]
            pts, vals = [], []
            for c, J in zip(self.cps, jets):
                pts += [c, np.conj(c)]
                vals += [[1j * v for v in J], [np.conj(1j * v) for v in J]]
            P = hermite_poly(pts, vals)
            self.P = Polynomial(P.coef.real.astype(complex))
        self._nodes = self._eval(domain.z, nodes=True)
        self.residual = 0.0

    def _pstar(self, z, nodes=False):
        if nodes:
            s = reflected_sum(self.domain, self.wd)
        else:
            s = reflected_sum(self.domain, self.wd, eval_z=z)
        return -s / (2 * np.pi) - self.Mstar(z)

    def _raw(self, z, nodes=False):
        z = np.asarray(z, complex)
        out = self._pstar(z, nodes) / (2 * self.weight.dphi_c(z))
        for c, r in zip(self.cps, self.res):
            out = out - 0.5 * r / (z - c) + 0.5 * np.conj(r) / (z - np.conj(c))
        return out

    def _circle(self, c, m=48):
        th = 2 * np.pi * (np.arange(m) + 0.5) / m
        xi = c + self.radius * np.exp(1j * th)
        return xi, self._raw(xi)

    def _eval(self, z, nodes=False):
        z = np.asarray(z, complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._raw(z, nodes)
        for c in self.cps:
            near = np.abs(z - c) < 0.5 * self.radius
            if near.any():
                xi, f = self._circle(c)
                k = (xi - c)[None, :] / (xi[None, :] - z[near][:, None])
                out[near] = (k * f[None, :]).mean(axis=1)
        return out + 1j * self.P(z)

    def jets(self, c, order):
        xi, f = self._circle(c)
        u = (xi - c) / self.radius
        return [complex(math.factorial(k) * np.mean(f * u ** (-k)) / self.radius**k)
                for k in range(order + 1)]

    def __call__(self, z):
        z = np.asarray(z)
        if self._nodes is not None and z.shape == self.domain.z.shape and np.array_equal(z, self.domain.z):
            return self._nodes
        return self._eval(np.atleast_1d(z)).reshape(z.shape)

    def to_dict(self):
        return {"kind": "reflected", "residues": [[float(r.real), float(r.imag)] for r in self.res],
                "jet_polynomial": [float(c.real) for c in self.P.coef],
                "boundary_residual": self.residual}


def trace_corrector(pack, tau):
    """Holomorphic C_tau equal to R~_tau(e1 (p + p~/tau)) on the real-axis part of the boundary."""
    dom, w = pack.domain, pack.weight
    E = np.exp(2j * tau * w.psi(dom.z))
    g = pack.cut.e1 * (pack.p + pack.p_tilde / tau)
    return -reflected_sum(dom, dom.weights * E * g) / (2 * np.pi)


def _corrector(domain, weight, density, M, p_values, vanish, vanish_order, reflect):
    g0 = domain.gamma0_nodes
    dphi0 = weight.dphi_c(domain.z[g0])
    rhs = (p_values[g0] / dphi0).real
    if reflect:
        H = ReflectedCorrector(domain, weight, density, M, vanish_order)
        fit = 2 * H(domain.z)[g0].real
        wb = domain.weights_bd_at(g0)
        den = max(np.sqrt(np.sum(wb * rhs**2)), 1e-300)
        H.residual = float(np.sqrt(np.sum(wb * (fit - rhs) ** 2)) / den)
        return H
    return build_boundary_corrector(domain, rhs, vanish, vanish_order, "real", weight=weight)


# ---------------------------------------------------------------------------
# amplitude ladder


def build_a(weight, ell0=7):
    """Holomorphic amplitude a = i * a0^ell0.

    a0 has real coefficients, a0(target) = 1 and vanishes at every other
    critical point, so Re a = 0 on the real axis and a(target) = i.
    """
    tgt = weight.target
    others = [c for c in weight.critical_points if abs(c - tgt) > 1e-12]
    N = Polynomial([1.0])
    for c in others:
        N = N * Polynomial([abs(c) ** 2, -2 * c.real, 1.0]) if abs(c.imag) > 1e-14 \
            else N * Polynomial([-c.real, 1.0])
    nv = complex(N(tgt))
    if abs(nv) < 1e-12:
        raise AmplitudeError("target coincides with another critical point")
    inv = 1.0 / nv
    if abs(tgt.imag) > 1e-14:
        beta = inv.imag / tgt.imag
        alpha = inv.real - beta * tgt.real
    else:
        alpha, beta = inv.real, 0.0
    a0 = N * Polynomial([alpha, beta])
    return Polynomial((1j * (a0**ell0)).coef.astype(complex))


def jet_kill(domain, values, points, order):
    """Polynomial M matching the holomorphic jets of ``values`` at ``points``."""
    jets = []
    for c in points:
        J = local_jets(domain, values, c, order)
        jets.append([J[(k, 0)] * math.factorial(k) for k in range(order + 1)])
    return hermite_poly(points, jets)


def _jet_report(domain, values, points, order):
    rep = []
    for c in points:
        J = local_jets(domain, values, c, order)
        rep.append({
            "point": [c.real, c.imag],
            "holomorphic": float(max(abs(J[(k, 0)]) for k in range(order + 1))),
            "full": float(max(abs(v) for v in J.values())),
        })
    return rep


@dataclass
class AmplitudePack:
    """All tau-independent parts of a CGO amplitude for one (q, weight, side)."""

    domain: object = field(repr=False)
    weight: object
    sign: int
    q: np.ndarray = field(repr=False)
    cut: CutoffPair = field(repr=False)
    a_poly: Polynomial = None
    a: np.ndarray = field(repr=False, default=None)
    p: np.ndarray = field(repr=False, default=None)
    M: Polynomial = None
    p_hat: np.ndarray = field(repr=False, default=None)
    p_tilde: np.ndarray = field(repr=False, default=None)
    M_tilde: Polynomial = None
    a_m1: HolomorphicCorrector = None
    a_m2: HolomorphicCorrector = None
    a_plus: HolomorphicCorrector = None
    m_samples: dict = field(default_factory=dict, repr=False)
    m_coef: np.ndarray = field(repr=False, default=None)
    m_spread: float = 0.0
    jets_p: list = field(default_factory=list)
    jets_p_tilde: list = field(default_factory=list)
    dphi: np.ndarray = field(repr=False, default=None)
    boundary: str = "asymptotic"

    @property
    def trivial(self):
        return not np.any(self.q)

    def phase_target(self):
        return self.weight.psi(self.weight.target)

    def node_values(self, H):
        return H(self.domain.z) if H is not None else np.zeros(self.domain.n, complex)

    def summary(self):
        return {
            "side": "direct" if self.sign > 0 else "dual",
            "a_at_target": [float(np.real(self.a_poly(self.weight.target))),
                            float(np.imag(self.a_poly(self.weight.target)))],
            "jets_p": self.jets_p,
            "jets_p_tilde": self.jets_p_tilde,
            "boundary_mode": self.boundary,
            "a_m1_boundary_residual": None if self.a_m1 is None else self.a_m1.residual,
            "a_m2_boundary_residual": None if self.a_m2 is None else self.a_m2.residual,
            "a_plus_boundary_residual": None if self.a_plus is None else self.a_plus.residual,
            "m_spread": self.m_spread,
            "m_samples": {f"{t:g}": [[float(v.real), float(v.imag)] for v in vals[:: max(1, len(vals) // 16)]]
                          for t, vals in self.m_samples.items()},
        }

    def to_json(self, **kw):
        return json.dumps(self.summary(), **kw)


def _safe_div(num, den, mask):
    out = np.zeros_like(num, dtype=complex)
    out[mask] = num[mask] / den[mask]
    return out


def build_p(domain, q, a, weight, jet_order=3):
    """p = 1/2 dbar^{-1}(q a) - M with the holomorphic jets at the critical points removed."""
    qa = np.asarray(q) * a
    if not np.any(qa):
        return np.zeros(domain.n, complex), Polynomial([0j]), []
    half = 0.5 * dbar_inv(domain, qa)
    pts = list(weight.interior_cps)
    M = jet_kill(domain, half, pts, jet_order)
    p = half - M(domain.z)
    return p, M, _jet_report(domain, p, pts, jet_order)


def boundary_coefficient_m(domain, weight, cut, p, p_tilde, taus, sign=1):
    """Demodulated tau^2 e^{tau(Phi-Phibar)} R~_tau(e1 (p + p~/tau)) on Gamma_0.

    Returns (samples per tau, extrapolated coefficient, spread).  The
    extrapolation fits m(tau) = m_inf + c/tau over ``taus`` per node.
    """
    g0 = domain.gamma0_nodes
    zb = domain.z[g0]
    psi_t = weight.psi_target
    samples = {}
    for t in taus:
        ts = sign * float(t)
        E = np.exp(2j * ts * weight.psi(domain.z))
        g = cut.e1 * (p + p_tilde / ts)
        # e^{tau(Phi-Phibar)} R~ g = 1/2 dz^{-1}(E g); g vanishes near the boundary
        val = -0.5 / np.pi * kernel_sum(domain, domain.weights * E * g, conj=True, eval_z=zb)
        val = val * np.exp(2j * ts * weight.psi(zb))
        samples[float(t)] = ts**2 * val * np.exp(-2j * ts * psi_t)
    T = np.array(sorted(samples))
    V = np.array([samples[t] for t in T])
    if len(T) >= 2:
        A = np.column_stack([np.ones_like(T), 1.0 / T])
        coef, *_ = np.linalg.lstsq(A, V, rcond=None)
        m_inf = coef[0]
    else:
        m_inf = V[0]
    scale = max(np.abs(m_inf).max(), 1e-300)
    spread = float(np.abs(V - m_inf).max() / scale) if np.abs(m_inf).max() > 0 else 0.0
    return samples, m_inf, spread


def default_m_taus(domain, weight):
    from .weights import tau_cap

    # m(tau) settles only well above the resolution cap; boundary quadrature
    # of the smooth density stays accurate there
    cap = tau_cap(domain, weight)
    return tuple(float(cap * f) for f in (2.0, 3.0, 4.0, 6.0))


def build_pack(domain, weight, q, sign=1, cut=None, jet_order=3, ell0=7, m_taus=None,
               vanish_order=2, boundary="auto"):
    """Build the amplitude ladder for potential ``q`` (direct side sign=+1, dual -1).

    ``boundary`` selects how the O(1/tau^2) boundary trace of the R~ term is
    cancelled: "asymptotic" uses a fixed corrector fitted to the extracted
    limit m, "exact" a tau-dependent holomorphic trace corrector (needs
    Gamma_0 on the real axis), "auto" picks "exact" when available.
    """
    reflect = supports_reflection(domain)
    if boundary == "auto":
        boundary = "exact" if reflect else "asymptotic"
    if boundary == "exact" and not reflect:
        raise AmplitudeError("exact boundary treatment needs Gamma_0 on the real axis")
    if boundary not in ("exact", "asymptotic"):
        raise AmplitudeError(f"unknown boundary mode {boundary!r}")
    q = np.asarray(q, float)
    if q.shape != (domain.n,):
        raise AmplitudeError("q must be sampled on the mesh nodes")
    if cut is None:
        cut = partition_of_unity(domain, weight)
    a_poly = build_a(weight, ell0)
    z = domain.z
    a = a_poly(z)
    dphi = weight.dphi_c(z)
    pack = AmplitudePack(domain, weight, int(np.sign(sign)), q, cut, a_poly, a, dphi=dphi,
                         boundary=boundary)
    g0 = domain.gamma0_nodes
    if np.min(np.abs(dphi[g0])) < 1e-8:
        raise AmplitudeError("Phi' vanishes on Gamma_0; boundary correctors undefined")
    zero = np.zeros(domain.n, complex)
    if not np.any(q):
        pack.p = pack.p_hat = pack.p_tilde = zero
        pack.M = pack.M_tilde = Polynomial([0j])
        pack.m_coef = np.zeros(len(g0), complex)
        return pack
    vanish = tuple(weight.interior_cps)
    p, M, jp = build_p(domain, q, a, weight, jet_order)
    pack.p, pack.M, pack.jets_p = p, M, jp
    pack.a_m1 = _corrector(domain, weight, q * a, M, p, vanish, vanish_order, reflect)
    a_m1 = pack.a_m1(z)
    e1, e2 = cut.e1, cut.e2
    supp = e2 > 1e-14
    G = _safe_div(-p * domain.d_zbar(e1) + e2 * q * a / 2, dphi, supp)
    lap_F = 2 * domain.d_z(G)
    p_hat = q * a_m1 - q * _safe_div(p, 2 * dphi, np.abs(dphi) > 0) - lap_F
    pack.p_hat = p_hat
    half = 0.5 * dbar_inv(domain, p_hat)
    Mt = jet_kill(domain, half, list(weight.interior_cps), jet_order)
    pt = half - Mt(z)
    pack.p_tilde, pack.M_tilde = pt, Mt
    pack.jets_p_tilde = _jet_report(domain, pt, list(weight.interior_cps), jet_order)
    # a_{-2} enters at tau^-2, so only value matching at the critical points is needed
    pack.a_m2 = _corrector(domain, weight, p_hat, Mt, pt, vanish, 0, reflect)
    taus = default_m_taus(domain, weight) if m_taus is None else tuple(m_taus)
    samples, m_inf, spread = boundary_coefficient_m(domain, weight, cut, p, pt, taus, pack.sign)
    pack.m_samples, pack.m_coef, pack.m_spread = samples, m_inf, spread
    pack.a_plus = build_boundary_corrector(domain, m_inf, (), 0, "complex", weight=weight)
    return pack


def assemble_a_tau(pack, tau):
    """Amplitude a_tau at the nodes for signed ``tau`` (sign must match the pack).

    In "exact" boundary mode the fixed e^{2 i tau psi(target)} a_plus term is
    replaced by the tau-dependent trace corrector.
    """
    if tau == 0:
        raise AmplitudeError("tau must be nonzero")
    if np.sign(tau) != pack.sign:
        raise AmplitudeError("tau sign does not match the pack side")
    if pack.trivial:
        return pack.a.copy()
    z = pack.domain.z
    e2, dphi = pack.cut.e2, pack.dphi
    supp = e2 > 1e-14
    lead1 = pack.a_m1(z) - _safe_div(e2 * pack.p, 2 * dphi, supp)
    th = 2 * tau * pack.weight.psi_target
    lead2 = pack.a_m2(z) - _safe_div(e2 * pack.p_tilde, 2 * dphi, supp)
    if pack.boundary == "exact":
        trace = trace_corrector(pack, tau)
    else:
        trace = np.exp(1j * th) * pack.a_plus(z) / tau**2
    return pack.a + lead1 / tau + lead2 / tau**2 + trace
