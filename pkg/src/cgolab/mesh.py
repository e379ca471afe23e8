"""Planar domains with a Gamma_0 / Gamma-tilde boundary split and a P1 mesh.

Interior nodes sit on a Cartesian lattice (so Cauchy-type sums can go
through an FFT), boundary nodes are arc-length samples of the contour, and
the whole node set is Delaunay-triangulated.  Quadrature weights are the
lumped P1 masses.
"""

from __future__ import annotations

import json
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import shapely
from matplotlib.path import Path
from scipy.spatial import Delaunay, cKDTree


class DomainError(ValueError):
    """Raised for invalid domain requests (bad contour, empty partition...)."""


class Domain:
    """Triangulated domain with boundary partition markers.

    Node arrays are ordered lattice nodes first, then boundary nodes in
    contour (counter-clockwise) order.
    """

    def __init__(self, nodes, lattice_idx, h, origin, boundary_xy, gamma0,
                 normals, shape_info, bd_polygon=None):
        self.h = float(h)
        self.origin = np.asarray(origin, dtype=float)
        n_lat = len(lattice_idx)
        self.nodes = np.vstack([nodes, boundary_xy])
        self.nodes.setflags(write=False)
        self.lattice_idx = np.asarray(lattice_idx, dtype=int)
        self.n_lattice = n_lat
        self.n = len(self.nodes)
        self.bidx = np.arange(n_lat, self.n)
        self.is_boundary = np.zeros(self.n, bool)
        self.is_boundary[self.bidx] = True
        self.gamma0 = np.zeros(self.n, bool)
        self.gamma0[self.bidx] = gamma0
        self.gamma_tilde = self.is_boundary & ~self.gamma0
        self.interior = ~self.is_boundary
        self.normals = np.asarray(normals, dtype=float)
        self.shape_info = dict(shape_info)
        self._bd_polygon = bd_polygon
        self._triangulate()

    # -- construction helpers -------------------------------------------
    def _triangulate(self):
        tri = Delaunay(self.nodes).simplices
        p = self.nodes[tri]
        area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        cent = p.mean(axis=1)
        keep = (np.abs(area) > 1e-12 * self.h**2) & self.contains(cent, strict=False)
        tri = tri[keep]
        area = area[keep]
        flip = area < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        self.triangles = tri
        self.tri_area = np.abs(area)
        w = np.zeros(self.n)
        np.add.at(w, tri.ravel(), np.repeat(self.tri_area / 3.0, 3))
        if np.any(w <= 0):
            raise DomainError("mesh has nodes without triangles")
        self.weights = w
        # boundary segment measure: half of each adjacent contour edge
        b = self.nodes[self.bidx]
        seg = np.linalg.norm(np.roll(b, -1, axis=0) - b, axis=1)
        self.bd_weights = 0.5 * (seg + np.roll(seg, 1))
        self.arclength = np.concatenate([[0.0], np.cumsum(seg[:-1])])

    # -- geometry queries --------------------------------------------------
    @property
    def z(self):
        return self.nodes[:, 0] + 1j * self.nodes[:, 1]

    @cached_property
    def polygon(self):
        if self._bd_polygon is not None:
            return shapely.Polygon(self._bd_polygon)
        return shapely.Polygon(self.nodes[self.bidx])

    @cached_property
    def _path(self):
        return Path(np.asarray(self.polygon.exterior.coords))

    def contains(self, pts, strict=True):
        pts = np.atleast_2d(pts)
        r = -1e-12 if strict else 1e-9 * self.h
        return self._path.contains_points(pts, radius=r)

    def distance_to_boundary(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        kind = self.shape_info["shape"]
        if kind in ("halfdisk", "disk"):
            R = self.shape_info["radius"]
            d = R - np.hypot(pts[:, 0], pts[:, 1])
            if kind == "halfdisk":
                d = np.minimum(d, pts[:, 1])
            return np.abs(d)
        return shapely.distance(shapely.points(pts), self.polygon.exterior)

    @property
    def area(self):
        return float(self.weights.sum())

    @property
    def gamma0_nodes(self):
        return np.flatnonzero(self.gamma0)

    @property
    def gamma_tilde_nodes(self):
        return np.flatnonzero(self.gamma_tilde)

    def weights_bd_at(self, idx):
        """Boundary arc-length weights at global node indices."""
        return self.bd_weights[np.asarray(idx) - self.n_lattice]

    def boundary_normal(self, idx):
        """Outward unit normal at global node indices (boundary only)."""
        return self.normals[np.asarray(idx) - self.n_lattice]

    # -- discrete operators -------------------------------------------------
    @cached_property
    def stiffness(self):
        """P1 stiffness matrix, ``u @ K @ u = int |grad u|^2``."""
        p = self.nodes[self.triangles]
        # gradients of barycentric functions
        d = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        g = np.stack([-d[..., 1], d[..., 0]], axis=-1) / (2 * self.tri_area[:, None, None])
        loc = np.einsum("tik,tjk->tij", g, g) * self.tri_area[:, None, None]
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def _ls_ops(self):
        # quadratic least-squares fit on 12 nearest neighbours per node
        k = 13
        tree = cKDTree(self.nodes)
        _, nb = tree.query(self.nodes, k=k)
        nb = nb[:, 1:]
        d = self.nodes[nb] - self.nodes[:, None, :]
        dx, dy = d[..., 0], d[..., 1]
        A = np.stack([dx, dy, 0.5 * dx**2, dx * dy, 0.5 * dy**2], axis=-1)
        scale = np.array([self.h, self.h, self.h**2, self.h**2, self.h**2])
        P = np.linalg.pinv(A / scale) / scale[None, :, None]
        rows = np.repeat(np.arange(self.n), k - 1)
        ops = []
        for m in range(5):
            c = P[:, m, :]
            M = sp.csr_matrix((c.ravel(), (rows, nb.ravel())), shape=(self.n, self.n))
            M = M - sp.diags(np.asarray(M.sum(axis=1)).ravel())
            ops.append(M.tocsr())
        return ops

    @property
    def dx(self):
        return self._ls_ops[0]

    @property
    def dy(self):
        return self._ls_ops[1]

    @property
    def hessian_ops(self):
        return self._ls_ops[2:]

    def d_zbar(self, u):
        return 0.5 * (self.dx @ u + 1j * (self.dy @ u))

    def d_z(self, u):
        return 0.5 * (self.dx @ u - 1j * (self.dy @ u))

    def laplacian_ls(self, u):
        return self.hessian_ops[0] @ u + self.hessian_ops[2] @ u

    # -- norms ----------------------------------------------------------------
    def l2(self, u, mask=None):
        w = self.weights if mask is None else self.weights * mask
        return float(np.sqrt(np.sum(w * np.abs(u) ** 2)))

    def lp(self, u, p):
        return float(np.sum(self.weights * np.abs(u) ** p) ** (1.0 / p))

    def h1_semi(self, u):
        K = self.stiffness
        val = np.real(np.vdot(u, K @ u))
        return float(np.sqrt(max(val, 0.0)))

    def h2_semi(self, u):
        Hxx, Hxy, Hyy = self.hessian_ops
        s = sum(self.l2(H @ u) ** 2 for H in (Hxx, Hxy, Hxy, Hyy))
        return float(np.sqrt(s))

    def norm_h1_tau(self, u, tau):
        return float(np.sqrt(tau**2 * self.l2(u) ** 2 + self.h1_semi(u) ** 2))

    def norm_h2_tau(self, u, tau):
        """sum_{|b|<=2} tau^(4-2|b|) ||d^b u||^2, square-rooted."""
        return float(np.sqrt(tau**4 * self.l2(u) ** 2 + tau**2 * self.h1_semi(u) ** 2
                             + self.h2_semi(u) ** 2))

    def norm_h2(self, u):
        return self.norm_h2_tau(u, 1.0)

    def boundary_l2(self, u_b, mask=None):
        """L2 norm on the boundary for values given at ``self.bidx``."""
        w = self.bd_weights if mask is None else self.bd_weights * mask
        return float(np.sqrt(np.sum(w * np.abs(u_b) ** 2)))

    def max_edge(self):
        t = self.triangles
        p = self.nodes
        e = np.concatenate([p[t[:, 0]] - p[t[:, 1]], p[t[:, 1]] - p[t[:, 2]],
                            p[t[:, 2]] - p[t[:, 0]]])
        return float(np.max(np.linalg.norm(e, axis=1)))

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        return {
            **self.shape_info,
            "h": self.h,
            "n_nodes": int(self.n),
            "n_boundary": int(len(self.bidx)),
            "area": self.area,
            "gamma0_arclength": self.arclength[self.gamma0[self.bidx]].tolist(),
            "gamma_tilde_arclength": self.arclength[self.gamma_tilde[self.bidx]].tolist(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def __repr__(self):
        return (f"Domain({self.shape_info['shape']}, h={self.h:.4g}, n={self.n}, "
                f"boundary={len(self.bidx)})")


def _lattice_nodes(poly_xy, h, lattice_origin, min_dist):
    lo = poly_xy.min(axis=0)
    hi = poly_xy.max(axis=0)
    i0 = int(np.floor((lo[0] - lattice_origin[0]) / h)) - 1
    i1 = int(np.ceil((hi[0] - lattice_origin[0]) / h)) + 1
    j0 = int(np.floor((lo[1] - lattice_origin[1]) / h)) - 1
    j1 = int(np.ceil((hi[1] - lattice_origin[1]) / h)) + 1
    I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    pts = np.column_stack([lattice_origin[0] + I * h, lattice_origin[1] + J * h])
    path = Path(poly_xy)
    inside = path.contains_points(pts)
    pts, I, J = pts[inside], I[inside], J[inside]
    ring = shapely.LinearRing(poly_xy)
    far = shapely.distance(shapely.points(pts), ring) >= min_dist
    pts, I, J = pts[far], I[far], J[far]
    return pts, np.column_stack([I - I.min(), J - J.min()]), \
        np.array([lattice_origin[0] + I.min() * h, lattice_origin[1] + J.min() * h])


def _halfdisk_boundary(R, h):
    n_d = max(int(np.ceil(2 * R / h)), 4)
    n_a = max(int(np.ceil(np.pi * R / h)), 4)
    xd = np.linspace(-R, R, n_d + 1)[:-1]
    diam = np.column_stack([xd, np.zeros_like(xd)])
    th = np.linspace(0.0, np.pi, n_a + 1)[:-1]
    arc = R * np.column_stack([np.cos(th), np.sin(th)])
    b = np.vstack([diam, arc])
    g0 = np.concatenate([np.ones(n_d, bool), np.zeros(n_a, bool)])
    nrm = np.vstack([np.tile([0.0, -1.0], (n_d, 1)), np.column_stack([np.cos(th), np.sin(th)])])
    # corners (-R,0) and (R,0): bisector normals, kept in the Dirichlet set
    nrm[0] = np.array([-1.0, -1.0]) / np.sqrt(2.0)
    nrm[n_d] = np.array([1.0, -1.0]) / np.sqrt(2.0)
    g0[n_d] = True
    return b, g0, nrm


def _disk_boundary(R, h):
    n_a = max(int(np.ceil(2 * np.pi * R / h)), 8)
    th = np.linspace(0.0, 2 * np.pi, n_a + 1)[:-1]
    nrm = np.column_stack([np.cos(th), np.sin(th)])
    return R * nrm, np.zeros(n_a, bool), nrm


def _resample_contour(contour, gamma0_mask, h):
    c = np.asarray(contour, dtype=float)
    if np.allclose(c[0], c[-1]):
        c = c[:-1]
        gamma0_mask = None if gamma0_mask is None else np.asarray(gamma0_mask)[:len(c)]
    ring = shapely.LinearRing(c)
    if not ring.is_simple:
        raise DomainError("contour is self-intersecting")
    if not ring.is_ccw:
        c = c[::-1]
        gamma0_mask = None if gamma0_mask is None else np.asarray(gamma0_mask)[::-1]
    seg = np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    L = s[-1]
    m = max(int(np.ceil(L / h)), 8)
    t = np.linspace(0.0, L, m + 1)[:-1]
    cc = np.vstack([c, c[:1]])
    b = np.column_stack([np.interp(t, s, cc[:, 0]), np.interp(t, s, cc[:, 1])])
    k = np.clip(np.searchsorted(s, t, side="right") - 1, 0, len(c) - 1)
    tang = (np.roll(c, -1, axis=0) - c)[k]
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]])
    g0 = np.zeros(m, bool) if gamma0_mask is None else np.asarray(gamma0_mask, bool)[k]
    return b, g0, nrm


def build_domain(shape="halfdisk", resolution=64, radius=1.0, contour=None,
                 gamma0_mask=None, allow_empty_gamma0=False):
    """Build a meshed domain.

    ``resolution`` is the number of lattice spacings per unit of ``radius``
    (for contours: per unit length of the bounding-box height).  The default
    half-disk has Gamma_0 = the flat diameter and Gamma-tilde = the arc.
    """
    if resolution < 16:
        raise DomainError("resolution must be >= 16")
    if shape == "halfdisk":
        h = radius / resolution
        b, g0, nrm = _halfdisk_boundary(radius, h)
        info = {"shape": "halfdisk", "radius": float(radius)}
    elif shape == "disk":
        h = radius / resolution
        b, g0, nrm = _disk_boundary(radius, h)
        info = {"shape": "disk", "radius": float(radius)}
    elif shape == "contour":
        if contour is None:
            raise DomainError("shape='contour' needs contour points")
        c = np.asarray(contour, float)
        h = np.ptp(c[:, 1]) / resolution
        b, g0, nrm = _resample_contour(c, gamma0_mask, h)
        info = {"shape": "contour"}
    else:
        raise DomainError(f"unknown shape {shape!r}")
    if not g0.any() and not allow_empty_gamma0:
        raise DomainError("Gamma_0 is empty; pass allow_empty_gamma0=True to allow it")
    info["resolution"] = int(resolution)
    ring = shapely.LinearRing(b)
    if not ring.is_simple:
        raise DomainError("contour is self-intersecting")
    pts, idx, origin = _lattice_nodes(b, h, np.zeros(2), 0.5 * h)
    if shape in ("halfdisk", "disk"):
        fine = _halfdisk_boundary(radius, radius / 2048)[0] if shape == "halfdisk" \
            else _disk_boundary(radius, radius / 2048)[0]
    else:
        fine = None
    return Domain(pts, idx, h, origin, b, g0, nrm, info, bd_polygon=fine)
