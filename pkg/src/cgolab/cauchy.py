"""Cauchy-transform operators, oscillatory variants and decay diagnostics.

The inverse of d/dzbar is

    (dbar^{-1} g)(z) = -1/pi * int_Omega g(zeta) / (zeta - z) dA(zeta)

and d/dz^{-1} uses the conjugate kernel.  Discretely the integrand is split
as g(z) / (zeta - z) + (g(zeta) - g(z)) / (zeta - z): the first part is
integrated exactly over the boundary polygon through a contour integral, the
second is a bounded integrand summed with the lumped weights.  Lattice-to-
lattice sums run through an FFT; everything touching boundary nodes is
summed directly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from matplotlib.tri import LinearTriInterpolator, Triangulation
from numba import njit

_CHUNK = 4_000_000


class CauchyError(ValueError):
    pass


def _cache(domain):
    c = domain.__dict__.setdefault("_cauchy_cache", {})
    return c


def _lattice_kernel_fft(domain, conj):
    cache = _cache(domain)
    key = ("kfft", conj)
    if key in cache:
        return cache[key]
    nx, ny = domain.lattice_idx.max(axis=0) + 1
    px, py = sfft.next_fast_len(2 * nx - 1), sfft.next_fast_len(2 * ny - 1)
    mx = np.fft.fftfreq(px, 1.0 / px).round().astype(int)
    my = np.fft.fftfreq(py, 1.0 / py).round().astype(int)
    MX, MY = np.meshgrid(mx, my, indexing="ij")
    off = domain.h * (MX + 1j * MY)
    with np.errstate(divide="ignore", invalid="ignore"):
        # S_i = sum_j c_j / (z_j - z_i) = sum_j c_j * kr(i - j), kr(m) = -1/(h m)
        kr = -1.0 / off
    kr[0, 0] = 0.0
    if conj:
        kr = np.conj(kr)
    out = (sfft.fft2(kr), (nx, ny), (px, py))
    cache[key] = out
    return out


def _lattice_sum(domain, charges_lat, conj):
    kf, (nx, ny), (px, py) = _lattice_kernel_fft(domain, conj)
    C = np.zeros((px, py), complex)
    ix, iy = domain.lattice_idx.T
    C[ix, iy] = charges_lat
    S = sfft.ifft2(sfft.fft2(C) * kf)
    return S[ix, iy]


@njit(cache=True)
def _direct_kernel(sx, sy, cr, ci, tx, ty, sgn, skip_self):  # pragma: no cover - compiled
    n = tx.shape[0]
    out_r = np.zeros(n)
    out_i = np.zeros(n)
    for t in range(n):
        ar = 0.0
        ai = 0.0
        for j in range(sx.shape[0]):
            dx = sx[j] - tx[t]
            dy = sgn * (sy[j] - ty[t])
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                if skip_self:
                    continue
                ar += np.inf
                continue
            kr = dx / r2
            ki = -dy / r2
            ar += kr * cr[j] - ki * ci[j]
            ai += kr * ci[j] + ki * cr[j]
        out_r[t] = ar
        out_i[t] = ai
    return out_r, out_i


def _direct_sum(src_z, charges, tgt_z, conj, skip_self=False):
    """sum_j charges_j / (zeta_j - z) (conjugated difference when ``conj``), zero charges skipped."""
    tgt_z = np.asarray(tgt_z, complex)
    if len(src_z) == 0 or len(tgt_z) == 0:
        return np.zeros(len(tgt_z), complex)
    charges = np.asarray(charges, complex)
    nz = charges != 0
    src = np.asarray(src_z, complex)[nz]
    ch = charges[nz]
    if len(src) == 0:
        return np.zeros(len(tgt_z), complex)
    re, im = _direct_kernel(src.real.copy(), src.imag.copy(), ch.real.copy(), ch.imag.copy(),
                            tgt_z.real.copy(), tgt_z.imag.copy(), -1.0 if conj else 1.0,
                            bool(skip_self))
    return re + 1j * im


def kernel_sum(domain, charges, conj=False, eval_z=None):
    """sum_j charges_j / (zeta_j - z) over mesh nodes, self term excluded.

    ``eval_z=None`` evaluates at every mesh node.
    """
    charges = np.asarray(charges, complex)
    nl = domain.n_lattice
    zb = domain.z[domain.bidx]
    if eval_z is None:
        out = np.empty(domain.n, complex)
        out[:nl] = _lattice_sum(domain, charges[:nl], conj)
        out[:nl] += _direct_sum(zb, charges[nl:], domain.z[:nl], conj)
        out[nl:] = _direct_sum(domain.z, charges, zb, conj, skip_self=True)
        return out
    return _direct_sum(domain.z, charges, np.asarray(eval_z, complex), conj, skip_self=True)


def supports_reflection(domain, tol=1e-12):
    """True when Gamma_0 lies on the real axis and Omega in the upper half plane."""
    g0 = domain.gamma0_nodes
    return bool(len(g0)) and bool(np.all(np.abs(domain.nodes[g0, 1]) < tol)) \
        and bool(domain.nodes[:, 1].min() > -tol)


def _reflected_kernel_fft(domain):
    cache = _cache(domain)
    if "rkfft" in cache:
        return cache["rkfft"]
    nx, ny = domain.lattice_idx.max(axis=0) + 1
    oy = int(round(domain.origin[1] / domain.h))
    if oy < 1:
        raise CauchyError("lattice touches the reflection axis")
    px, py = sfft.next_fast_len(2 * nx - 1), sfft.next_fast_len(2 * ny - 1)
    dx = np.fft.fftfreq(px, 1.0 / px).round().astype(int)
    dy = np.fft.fftfreq(py, 1.0 / py).round().astype(int)
    DX, DY = np.meshgrid(dx, dy, indexing="ij")
    # source row flipped: m = ny-1-iy_src, target row iy; iy_src + iy = ny-1 + dy
    den = domain.h * (-DX - 1j * (DY + ny - 1 + 2 * oy))
    # offsets outside [-(ny-1), ny-1] are wrap-around padding and never read
    used = np.abs(DY) <= ny - 1
    kr = np.zeros_like(den)
    kr[used] = 1.0 / den[used]
    out = (sfft.fft2(kr), (nx, ny), (px, py))
    cache["rkfft"] = out
    return out


def reflected_sum(domain, charges, eval_z=None):
    """sum_j charges_j / (conj(zeta_j) - z): sources mirrored across the real axis.

    Holomorphic in z away from the mirrored sources, so for Omega in the
    upper half plane it is holomorphic on Omega.
    """
    if not supports_reflection(domain):
        raise CauchyError("reflection needs Gamma_0 on the real axis and Omega above it")
    charges = np.asarray(charges, complex)
    zs = np.conj(domain.z)
    if eval_z is not None:
        return _direct_sum(zs, charges, np.asarray(eval_z, complex), False, skip_self=True)
    kf, (nx, ny), (px, py) = _reflected_kernel_fft(domain)
    nl = domain.n_lattice
    ix, iy = domain.lattice_idx.T
    C = np.zeros((px, py), complex)
    C[ix, ny - 1 - iy] = charges[:nl]
    out = np.empty(domain.n, complex)
    out[:nl] = sfft.ifft2(sfft.fft2(C) * kf)[ix, iy]
    out[:nl] += _direct_sum(zs[nl:], charges[nl:], domain.z[:nl], False)
    out[nl:] = _direct_sum(zs, charges, domain.z[nl:], False, skip_self=True)
    return out


@njit(cache=True)
def _polygon_kernel(A, d, z):  # pragma: no cover - compiled
    out = np.zeros(z.shape[0], np.complex128)
    for t in range(z.shape[0]):
        acc = 0j
        for k in range(A.shape[0]):
            al = A[k] - z[t]
            acc += np.conj(d[k])
            if al == 0 or al + d[k] == 0:
                continue
            coef = np.conj(al) - np.conj(d[k]) * al / d[k]
            if abs(coef) < 1e-300:
                continue
            acc += coef * np.log((al + d[k]) / al)
        out[t] = acc / 2j
    return out


def polygon_area_kernel(poly_z, z):
    """Exact int_P 1/(zeta - z) dA over the polygon with CCW vertices ``poly_z``.

    Uses int_P d_zbar F dA = (1/2i) \\oint F dzeta with
    F = (conj(zeta) - conj(z)) / (zeta - z), which is bounded.
    """
    A = np.asarray(poly_z, complex)
    d = np.roll(A, -1) - A
    z = np.atleast_1d(np.asarray(z, complex))
    return _polygon_kernel(A, d, z)


def _exact_area_kernel(domain):
    cache = _cache(domain)
    if "area_kernel" not in cache:
        cache["area_kernel"] = polygon_area_kernel(domain.z[domain.bidx], domain.z)
    return cache["area_kernel"]


def _kernel_sum_of_weights(domain, conj):
    cache = _cache(domain)
    key = ("w", conj)
    if key not in cache:
        cache[key] = kernel_sum(domain, domain.weights, conj)
    return cache[key]


def _check_points(domain, pts):
    pts = np.atleast_2d(np.asarray(pts, float))
    if not np.all(domain.contains(pts, strict=False) | (domain.distance_to_boundary(pts) < 1e-9)):
        raise CauchyError("evaluation point outside closure(Omega)")
    return pts


def _interp(domain, g, pts):
    tri = Triangulation(domain.nodes[:, 0], domain.nodes[:, 1], domain.triangles)
    re = LinearTriInterpolator(tri, np.real(g))(pts[:, 0], pts[:, 1])
    im = LinearTriInterpolator(tri, np.imag(g))(pts[:, 0], pts[:, 1])
    return np.ma.filled(re, 0.0) + 1j * np.ma.filled(im, 0.0)


def _inverse(domain, g, conj, dg=None, eval_points=None):
    g = np.asarray(g, complex)
    if g.shape != (domain.n,):
        raise CauchyError("grid function size does not match the domain")
    if eval_points is not None:
        pts = _check_points(domain, eval_points)
        zq = pts[:, 0] + 1j * pts[:, 1]
        gq = _interp(domain, g, pts)
        w = domain.weights
        s1 = kernel_sum(domain, w * g, conj, eval_z=zq)
        s0 = kernel_sum(domain, w, conj, eval_z=zq)
        ex = polygon_area_kernel(domain.z[domain.bidx], zq)
        if conj:
            ex = np.conj(ex)
        return -(s1 - gq * s0 + gq * ex) / np.pi
    w = domain.weights
    s1 = kernel_sum(domain, w * g, conj)
    s0 = _kernel_sum_of_weights(domain, conj)
    ex = _exact_area_kernel(domain)
    if conj:
        ex = np.conj(ex)
    if dg is None:
        dg = domain.d_zbar(g) if conj else domain.d_z(g)
    # self cell: int_cell (g(zeta)-g(z))/(zeta-z) ~ area * dg/dz (dg/dzbar for conj)
    selfc = w * dg
    return -(s1 - g * s0 + g * ex + selfc) / np.pi


def dbar_inv(domain, g, eval_points=None, dgdz=None):
    """Apply the inverse of d/dzbar to nodal values ``g``."""
    return _inverse(domain, g, conj=False, dg=dgdz, eval_points=eval_points)


def dz_inv(domain, g, eval_points=None, dgdzbar=None):
    """Apply the inverse of d/dz (kernel 1/(conj zeta - conj z))."""
    return _inverse(domain, g, conj=True, dg=dgdzbar, eval_points=eval_points)


def oscillatory_factor(domain, weight, tau):
    """exp(tau (Phi - conj Phi)) = exp(2 i tau psi) at the nodes."""
    return np.exp(2j * tau * weight.psi(domain.z))


def r_tau(domain, g, weight, tau, variant="tilde", check_cap=True):
    """Oscillatory operators.

    variant "tilde":  1/2 e^{tau(Phibar-Phi)} dz^{-1}    e^{tau(Phi-Phibar)} g
    variant "plain":  1/2 e^{tau(Phi-Phibar)} dzbar^{-1} e^{tau(Phibar-Phi)} g

    so that plain(conj g) = conj(tilde(g)).
    """
    from .weights import tau_cap

    if tau == 0:
        raise CauchyError("tau must be nonzero")
    if check_cap:
        cap = tau_cap(domain, weight)
        if abs(tau) > cap * (1 + 1e-9):
            need = int(np.ceil(domain.shape_info.get("resolution", 0) * abs(tau) / cap))
            raise CauchyError(f"|tau|={abs(tau):g} exceeds resolution cap {cap:.3g}; "
                              f"need resolution >= {need}")
    g = np.asarray(g, complex)
    E = oscillatory_factor(domain, weight, tau)
    dphibar = np.conj(weight.dphi_c(domain.z))
    if variant == "tilde":
        G = E * g
        # d/dzbar of E g: E (dg/dzbar - tau conj(Phi') g)
        dG = E * (domain.d_zbar(g) - tau * dphibar * g)
        return 0.5 * np.conj(E) * dz_inv(domain, G, dgdzbar=dG)
    if variant == "plain":
        G = np.conj(E) * g
        dG = np.conj(E) * (domain.d_z(g) - tau * weight.dphi_c(domain.z) * g)
        return 0.5 * E * dbar_inv(domain, G, dgdz=dG)
    raise CauchyError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# decay scans and stationary phase


@dataclass
class DecayTable:
    """Rows of (tau, value) with scaled magnitudes and a log-log slope fit."""

    tau: np.ndarray
    value: np.ndarray
    slope: float = field(init=False)
    intercept: float = field(init=False)
    fit_residual: float = field(init=False)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, float)
        self.value = np.asarray(self.value, complex)
        if np.any(np.diff(self.tau) <= 0):
            raise ValueError("tau must be strictly increasing")
        a = np.abs(self.value)
        ok = a > 0
        if ok.sum() >= 2:
            A = np.column_stack([np.log(self.tau[ok]), np.ones(ok.sum())])
            coef, res, *_ = np.linalg.lstsq(A, np.log(a[ok]), rcond=None)
            self.slope, self.intercept = float(coef[0]), float(coef[1])
            r = np.log(a[ok]) - A @ coef
            self.fit_residual = float(np.sqrt(np.mean(r**2)))
        else:
            self.slope, self.intercept, self.fit_residual = float("nan"), float("nan"), 0.0

    @property
    def abs(self):
        return np.abs(self.value)

    @property
    def monotone_decreasing(self):
        return bool(np.all(np.diff(self.abs) < 0))

    def scaled_decreasing(self, power):
        """True if |value| * tau**power is strictly decreasing."""
        return bool(np.all(np.diff(self.abs * self.tau**power) < 0))

    def rows(self):
        for t, v in zip(self.tau, self.value):
            yield (t, v.real, v.imag, abs(v), abs(v) * t, abs(v) * t * t)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "value_re", "value_im", "abs", "abs_tau", "abs_tau2"])
        for r in self.rows():
            w.writerow([f"{x:.12e}" for x in r])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        tau = [float(r["tau"]) for r in rows]
        val = [complex(float(r["value_re"]), float(r["value_im"])) for r in rows]
        return cls(tau, val)


def rl_integral(domain, g, weight, tau):
    """int_Omega g exp(2 i tau psi) dx with the lumped weights."""
    return complex(np.sum(domain.weights * np.asarray(g) * oscillatory_factor(domain, weight, tau)))


def rl_decay_scan(domain, g, weight, taus):
    vals = [rl_integral(domain, g, weight, t) for t in taus]
    return DecayTable(np.asarray(taus, float), np.asarray(vals))


def stationary_phase_eval(domain, g, weight, tau, points=None, g_at=None):
    """Leading stationary-phase term of int g exp(2 i tau psi) dx.

    Each nondegenerate interior critical point contributes
    pi / (tau |det psi''|^(1/2)) * g(x*) * exp(2 i tau psi(x*)).
    The signature phase factor is 1 because a harmonic psi only has saddles
    (det psi'' = -|Phi''|^2 < 0, signature 0).

    Returns (leading, numeric, remainder).
    """
    from .weights import hessian_psi

    cps = list(weight.interior_cps) if points is None else list(points)
    lead = 0.0 + 0.0j
    for zc in cps:
        _, det = hessian_psi(weight, zc)
        if abs(det) < 1e-12:
            raise CauchyError(f"degenerate Hessian at critical point {zc}")
        if g_at is not None:
            gv = g_at(zc)
        else:
            gv = _interp(domain, np.asarray(g, complex), np.array([[zc.real, zc.imag]]))[0]
        lead += np.pi / (tau * np.sqrt(abs(det))) * gv * np.exp(2j * tau * weight.psi(zc))
    num = rl_integral(domain, g, weight, tau)
    return complex(lead), num, abs(num - lead)
