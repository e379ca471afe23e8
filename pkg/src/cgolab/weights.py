"""Holomorphic Carleman weights, cutoff pairs and phase Hessians."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial


class WeightError(ValueError):
    """A requested weight violates one of its defining invariants."""


@dataclass(frozen=True)
class HolomorphicWeight:
    """Polynomial weight ``Phi`` with real coefficients.

    ``dcoef`` are the ascending coefficients of ``Phi'``; ``const`` is the
    real additive shift.  Critical points are split into interior ones and
    ones lying on Gamma_0.  ``target`` is the critical point the amplitude
    concentrates at.
    """

    dcoef: tuple
    const: float
    interior_cps: tuple = ()
    gamma0_cps: tuple = ()
    target: complex | None = None
    requested: complex | None = None

    def __post_init__(self):
        object.__setattr__(self, "dcoef", tuple(float(c) for c in self.dcoef))

    @property
    def dpoly(self):
        return Polynomial(self.dcoef)

    @property
    def poly(self):
        P = self.dpoly.integ()
        return P + self.const

    def phi_c(self, z):
        return self.poly(np.asarray(z, dtype=complex))

    def dphi_c(self, z):
        return self.dpoly(np.asarray(z, dtype=complex))

    def d2phi_c(self, z):
        return self.dpoly.deriv()(np.asarray(z, dtype=complex))

    def phi(self, z):
        """Real part of Phi (the Carleman weight)."""
        return self.phi_c(z).real

    def psi(self, z):
        return self.phi_c(z).imag

    @property
    def critical_points(self):
        return tuple(self.interior_cps) + tuple(self.gamma0_cps)

    @property
    def psi_target(self):
        return float(self.psi(self.target))

    def hessian_psi(self, point):
        return hessian_psi(self, point)

    def to_dict(self):
        c = lambda z: [float(np.real(z)), float(np.imag(z))]  # noqa: E731
        return {
            "dphi_coefficients": list(self.dcoef),
            "constant": self.const,
            "interior_critical_points": [c(z) for z in self.interior_cps],
            "gamma0_critical_points": [c(z) for z in self.gamma0_cps],
            "target": None if self.target is None else c(self.target),
            "requested_target": None if self.requested is None else c(self.requested),
        }

    @classmethod
    def from_dict(cls, d):
        cz = lambda v: complex(v[0], v[1])  # noqa: E731
        return cls(tuple(d["dphi_coefficients"]), d["constant"],
                   tuple(cz(v) for v in d["interior_critical_points"]),
                   tuple(cz(v) for v in d["gamma0_critical_points"]),
                   None if d["target"] is None else cz(d["target"]),
                   None if d.get("requested_target") is None else cz(d["requested_target"]))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def hessian_psi(weight, point):
    """Hessian of ``psi = Im Phi`` at ``point`` and its determinant.

    For holomorphic Phi: psi_xx = Im Phi'', psi_xy = Re Phi'', psi_yy = -psi_xx.
    """
    z = complex(point[0], point[1]) if np.ndim(point) else complex(point)
    d2 = complex(weight.d2phi_c(z))
    H = np.array([[d2.imag, d2.real], [d2.real, -d2.imag]])
    return H, float(np.linalg.det(H))


def weight_from_dphi(dcoef, const=0.0, target=None):
    """Wrap a given Phi' polynomial (no domain checks); used for tests."""
    P = Polynomial(dcoef)
    cps = tuple(complex(r) for r in P.roots()) if P.degree() > 0 else ()
    return HolomorphicWeight(tuple(dcoef), const, cps, (), target)


def _classify_roots(domain, roots, tol):
    interior, on_g0 = [], []
    for r in roots:
        pt = np.array([[r.real, r.imag]])
        if domain.contains(pt, strict=True) and domain.distance_to_boundary(pt)[0] > tol:
            interior.append(complex(r))
        elif domain.distance_to_boundary(pt)[0] <= tol and domain.contains(pt, strict=False):
            # on the boundary: must be on Gamma_0
            b = domain.nodes[domain.bidx]
            k = np.argmin(np.abs(b[:, 0] + 1j * b[:, 1] - r))
            if not domain.gamma0[domain.bidx[k]]:
                raise WeightError("critical point on Gamma-tilde")
            on_g0.append(complex(r))
    return interior, on_g0


def _assemble(domain, points, margin):
    dp = Polynomial([1.0])
    for zk in points:
        dp = dp * Polynomial([abs(zk) ** 2, -2 * zk.real, 1.0])
    P0 = dp.integ()
    phi0 = P0(domain.z).real
    const = -margin - float(phi0.max())
    return dp, const


def check_weight(domain, w, tol=1e-10):
    """Assert the weight invariants on ``domain``; raise WeightError naming a failure."""
    for zc in w.critical_points:
        if abs(w.dphi_c(zc)) > tol * max(1.0, np.abs(w.dcoef).max()):
            raise WeightError(f"Phi' does not vanish at critical point {zc}")
        if abs(w.d2phi_c(zc)) < 1e-6:
            raise WeightError(f"degenerate critical point {zc}")
    g0 = domain.gamma0_nodes
    if g0.size and np.max(np.abs(w.psi(domain.z[g0]))) > tol:
        raise WeightError("Im Phi does not vanish on Gamma_0")
    if w.phi(domain.z).max() >= 0:
        raise WeightError("max phi >= 0")
    if w.target is not None:
        pt = w.psi(w.target)
        if abs(pt) < 1e-8:
            raise WeightError("Im Phi(target) = 0")
        for zc in w.critical_points:
            if zc != w.target and abs(w.psi(zc) - pt) < 1e-8:
                raise WeightError("Im Phi(target) coincides with another critical value")


def make_weight(domain, target, eps=0.05, margin=0.1, extra_points=()):
    """Construct a weight with an interior critical point near ``target``.

    Phi'(z) = prod_k (z - z_k)(z - conj z_k) over the target and any
    ``extra_points``; real coefficients make Im Phi vanish on the real axis.
    If the exact target fails a condition, nearby candidates within ``eps``
    are tried in order of increasing distance.
    """
    zt = complex(*target) if np.ndim(target) else complex(target)
    pt = np.array([[zt.real, zt.imag]])
    if not domain.contains(pt):
        raise WeightError("target must be strictly interior")
    if domain.distance_to_boundary(pt)[0] < 2 * eps:
        raise WeightError("target closer than 2*eps to the boundary")
    extras = [complex(*p) if np.ndim(p) else complex(p) for p in extra_points]
    candidates = [zt]
    for r in (0.25, 0.5, 1.0):
        for k in range(8):
            candidates.append(zt + r * eps * np.exp(1j * np.pi * (k / 4 + 0.125)))
    last = None
    for zc in candidates:
        try:
            dp, const = _assemble(domain, [zc] + extras, margin)
            roots = dp.roots()
            interior, on_g0 = _classify_roots(domain, roots, 1e-9)
            # snap to the exact root closest to the requested location
            tgt = min(interior, key=lambda r: abs(r - zc)) if interior else None
            if tgt is None:
                raise WeightError("target is not an interior critical point")
            w = HolomorphicWeight(tuple(dp.coef), const, tuple(interior), tuple(on_g0),
                                  tgt, zt)
            check_weight(domain, w)
            return w
        except WeightError as exc:
            last = exc
    raise WeightError(f"no admissible weight within eps={eps}: {last}")


def max_dphi(domain, weight):
    return float(np.abs(weight.dphi_c(domain.z)).max())


def tau_cap(domain, weight, nodes_per_period=10):
    """Largest |tau| with >= nodes_per_period nodes per period of exp(2 i tau psi)."""
    return float(np.pi / (nodes_per_period * max_dphi(domain, weight) * domain.h))


def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2)


def _inner_profile(domain, r_bd, width):
    x, y = domain.nodes.T
    info = domain.shape_info
    shape = info.get("shape")
    if shape in ("halfdisk", "disk"):
        R = info["radius"]
        e = smoothstep5((R - np.hypot(x, y) - r_bd) / width)
        if shape == "halfdisk":
            e = e * smoothstep5((y - r_bd) / width)
    else:
        d = domain.distance_to_boundary(domain.nodes)
        e = smoothstep5((d - r_bd) / width)
    e[domain.is_boundary] = 0.0
    return e


@dataclass(frozen=True)
class CutoffPair:
    e1: np.ndarray
    e2: np.ndarray
    r_bd: float
    r_cp: float
    width: float
    grad_e1: np.ndarray = field(repr=False, default=None)


def partition_of_unity(domain, weight, r_bd=0.15, r_cp=0.15, width=None):
    """Smooth e1 + e2 = 1 with e1 = 0 near the boundary, e2 = 0 near interior
    critical points.

    e1 ramps from 0 at distance ``r_bd`` from the boundary to 1 at
    ``r_bd + width`` through a quintic smoothstep.  On the half-disk and disk
    it is a product of one-sided profiles so it stays C^2 where the nearest
    boundary piece switches.
    """
    if min(r_bd, r_cp) <= 2 * domain.h:
        raise WeightError("cutoff radii must exceed 2h")
    cps = np.array([[c.real, c.imag] for c in weight.interior_cps]).reshape(-1, 2)
    gap = np.inf
    if len(cps):
        gap = float(domain.distance_to_boundary(cps).min()) - r_bd - r_cp
        if gap <= 0:
            raise WeightError("cutoff supports overlap: critical point too close to boundary")
    if width is None:
        width = min(gap, r_bd)
    if width > gap:
        raise WeightError("cutoff width exceeds the admissible gap")
    e1 = _inner_profile(domain, r_bd, width)
    e2 = 1.0 - e1
    e1 = 1.0 - e2
    return CutoffPair(e1, e2, r_bd, r_cp, width)
