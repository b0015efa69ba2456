"""Structured 3D tissue meshes with a tagged vascular subdomain.

The internal generator builds axis-aligned trilinear hexahedra: a uniform
inner box (the vascular subdomain) surrounded by a geometrically graded
shell up to the enlarged far-field boundary. Linear tetrahedra are supported
for imported meshes. Meshes are immutable after construction; point location
and interpolation are safe for concurrent use.
"""

import math
from typing import Optional

import numpy as np

from vasoperf.errors import ConfigError, GeometryError

HEX8 = "hex8"
TET4 = "tet4"

TAG_VASCULAR = 1
TAG_OUTSIDE = 0

_GAUSS_1D = (-1.0 / math.sqrt(3.0), 1.0 / math.sqrt(3.0))


class ShapeFunctionSet:
    """Nodal basis of one element kind, evaluated in parameter space."""

    def __init__(self, kind: str):
        if kind not in (HEX8, TET4):
            raise ConfigError(f"unknown element kind {kind!r}")
        self.kind = kind
        self.n_nodes = 8 if kind == HEX8 else 4

    def values(self, params) -> np.ndarray:
        """Shape function values, shape (..., n_nodes)."""
        p = np.asarray(params, dtype=float)
        if self.kind == HEX8:
            xi, eta, zeta = p[..., 0], p[..., 1], p[..., 2]
            out = np.empty(p.shape[:-1] + (8,))
            for l, (sx, sy, sz) in enumerate(_HEX_SIGNS):
                out[..., l] = (1 + sx * xi) * (1 + sy * eta) * (1 + sz * zeta) / 8.0
            return out
        r, s, t = p[..., 0], p[..., 1], p[..., 2]
        return np.stack([1.0 - r - s - t, r, s, t], axis=-1)

    def gradients(self, params) -> np.ndarray:
        """Parameter-space gradients, shape (..., n_nodes, 3)."""
        p = np.asarray(params, dtype=float)
        if self.kind == HEX8:
            xi, eta, zeta = p[..., 0], p[..., 1], p[..., 2]
            out = np.empty(p.shape[:-1] + (8, 3))
            for l, (sx, sy, sz) in enumerate(_HEX_SIGNS):
                out[..., l, 0] = sx * (1 + sy * eta) * (1 + sz * zeta) / 8.0
                out[..., l, 1] = sy * (1 + sx * xi) * (1 + sz * zeta) / 8.0
                out[..., l, 2] = sz * (1 + sx * xi) * (1 + sy * eta) / 8.0
            return out
        g = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return np.broadcast_to(g, p.shape[:-1] + (4, 3)).copy()

    def center(self) -> np.ndarray:
        return np.zeros(3) if self.kind == HEX8 else np.full(3, 0.25)

    def contains(self, params, tol: float = 1e-9) -> bool:
        p = np.asarray(params, dtype=float)
        if self.kind == HEX8:
            return bool(np.all(np.abs(p) <= 1.0 + tol))
        return bool(np.all(p >= -tol) and p.sum() <= 1.0 + tol)


# VTK corner ordering for the hexahedron
_HEX_SIGNS = [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
              (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]

HEX_BASIS = ShapeFunctionSet(HEX8)
TET_BASIS = ShapeFunctionSet(TET4)


def gauss_points_hex(order: int = 2):
    """Tensor Gauss rule on [-1,1]^3: (points (n,3), weights (n,))."""
    x, w = np.polynomial.legendre.leggauss(order)
    pts = np.array([(a, b, c) for a in x for b in x for c in x])
    wts = np.array([wa * wb * wc for wa in w for wb in w for wc in w])
    return pts, wts


class TissueMesh:
    """Conforming mesh of the tissue domain with a tagged vascular subdomain.

    nodes: (n, 3) positions in um; conn: (ne, 8|4) node ids; tag: 1 inside
    the vascular subdomain, 0 in the far-field shell. Per-node Dirichlet data
    for the interstitial (pl) and homogenized blood (pv) pressures live in
    plain dicts node id -> value.
    """

    def __init__(self, nodes, conn, kind: str, tag=None,
                 outer_boundary_nodes=None, vascular_boundary_nodes=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.conn = np.asarray(conn, dtype=int)
        self.kind = kind
        self.basis = ShapeFunctionSet(kind)
        if self.conn.ndim != 2 or self.conn.shape[1] != self.basis.n_nodes:
            raise ConfigError(f"connectivity shape {self.conn.shape} does not "
                              f"match element kind {kind}")
        if self.conn.size and (self.conn.min() < 0 or self.conn.max() >= len(self.nodes)):
            raise ConfigError("element references a node id outside the mesh")
        self.tag = (np.asarray(tag, dtype=np.int8) if tag is not None
                    else np.full(self.n_elements, TAG_VASCULAR, dtype=np.int8))
        if self.tag.shape != (self.n_elements,):
            raise ConfigError("tag must label every element")
        self.outer_boundary_nodes = np.asarray(
            outer_boundary_nodes if outer_boundary_nodes is not None else [], dtype=int)
        self.vascular_boundary_nodes = np.asarray(
            vascular_boundary_nodes if vascular_boundary_nodes is not None else [], dtype=int)
        self.pl_dirichlet: dict = {}
        self.pv_dirichlet: dict = {}

        corners = self.nodes[self.conn]  # (ne, nn, 3)
        self.elem_lo = corners.min(axis=1)
        self.elem_hi = corners.max(axis=1)
        self.axis_aligned = self._check_axis_aligned(corners)
        self._hash = None

        vmask = np.zeros(len(self.nodes), dtype=bool)
        if self.n_elements:
            vmask[np.unique(self.conn[self.tag == TAG_VASCULAR])] = True
        self.vnode_mask = vmask
        self.vnode_ids = np.flatnonzero(vmask)  # global ids of vascular-domain nodes
        self.vnode_index = np.full(len(self.nodes), -1, dtype=int)
        self.vnode_index[self.vnode_ids] = np.arange(len(self.vnode_ids))

    def _check_axis_aligned(self, corners) -> bool:
        if self.kind != HEX8 or not self.n_elements:
            return self.kind == HEX8
        lo = self.elem_lo[:, None, :]
        hi = self.elem_hi[:, None, :]
        signs = (np.array(_HEX_SIGNS) + 1) / 2.0  # 0/1 per axis
        expect = lo + signs[None, :, :] * (hi - lo)
        scale = np.maximum(np.abs(corners).max(), 1.0)
        return bool(np.allclose(corners, expect, atol=1e-9 * scale, rtol=0.0))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.conn)

    @property
    def n_vnodes(self) -> int:
        return len(self.vnode_ids)

    def element_volumes(self) -> np.ndarray:
        if self.kind == TET4:
            p = self.nodes[self.conn]
            d = p[:, 1:] - p[:, :1]
            return np.abs(np.linalg.det(d)) / 6.0
        if self.axis_aligned:
            return np.prod(self.elem_hi - self.elem_lo, axis=1)
        pts, wts = gauss_points_hex(2)
        grads = self.basis.gradients(pts)  # (ng, 8, 3)
        vols = np.zeros(self.n_elements)
        for e in range(self.n_elements):
            xe = self.nodes[self.conn[e]]
            for g, w in enumerate(wts):
                jac = xe.T @ grads[g]
                vols[e] += w * np.linalg.det(jac)
        return vols

    def volume(self) -> float:
        return float(self.element_volumes().sum())

    def vascular_box(self):
        """Bounding box (lo, hi) of the vascular-tagged subdomain."""
        mask = self.tag == TAG_VASCULAR
        if not mask.any():
            raise ConfigError("mesh has no vascular-tagged elements")
        return self.elem_lo[mask].min(axis=0), self.elem_hi[mask].max(axis=0)

    # -- geometry queries ---------------------------------------------------

    def _spatial_hash(self):
        if self._hash is None:
            ext = self.elem_hi - self.elem_lo
            cell = float(np.mean(ext.max(axis=1))) if self.n_elements else 1.0
            lo = self.nodes.min(axis=0)
            table: dict = {}
            ilo = np.floor((self.elem_lo - lo) / cell - 1e-12).astype(int)
            ihi = np.floor((self.elem_hi - lo) / cell + 1e-12).astype(int)
            for e in range(self.n_elements):
                for i in range(ilo[e, 0], ihi[e, 0] + 1):
                    for j in range(ilo[e, 1], ihi[e, 1] + 1):
                        for k in range(ilo[e, 2], ihi[e, 2] + 1):
                            table.setdefault((i, j, k), []).append(e)
            self._hash = (table, lo, cell)
        return self._hash

    def candidate_elements(self, lo, hi) -> np.ndarray:
        """Elements whose bounding box may intersect the box [lo, hi]."""
        table, origin, cell = self._spatial_hash()
        ilo = np.floor((np.asarray(lo) - origin) / cell - 1e-12).astype(int)
        ihi = np.floor((np.asarray(hi) - origin) / cell + 1e-12).astype(int)
        out: set = set()
        for i in range(ilo[0], ihi[0] + 1):
            for j in range(ilo[1], ihi[1] + 1):
                for k in range(ilo[2], ihi[2] + 1):
                    out.update(table.get((i, j, k), ()))
        return np.array(sorted(out), dtype=int)

    def inverse_map(self, e: int, point) -> Optional[np.ndarray]:
        """Parameter coordinates of a physical point in element e, or None."""
        p = np.asarray(point, dtype=float)
        xe = self.nodes[self.conn[e]]
        if self.kind == TET4:
            mat = (xe[1:] - xe[0]).T
            try:
                bar = np.linalg.solve(mat, p - xe[0])
            except np.linalg.LinAlgError:
                return None
            return bar
        if self.axis_aligned:
            lo, hi = self.elem_lo[e], self.elem_hi[e]
            return 2.0 * (p - lo) / (hi - lo) - 1.0
        params = np.zeros(3)
        for _ in range(25):
            n = self.basis.values(params)
            res = n @ xe - p
            if np.abs(res).max() < 1e-12 * max(1.0, np.abs(xe).max()):
                break
            jac = xe.T @ self.basis.gradients(params)
            params = params - np.linalg.solve(jac, res)
        return params

    def locate_point(self, point, tol: float = 1e-9, tag: Optional[int] = None):
        """(element id, parameter coords) containing the point, or None.

        When the point sits exactly on a shared face the lowest element id
        wins, which keeps downstream assembly deterministic. With tag set,
        only elements of that subdomain are considered.
        """
        p = np.asarray(point, dtype=float)
        cands = self.candidate_elements(p, p)
        if tag is not None and cands.size:
            cands = cands[self.tag[cands] == tag]
        scale = np.maximum(self.elem_hi[cands] - self.elem_lo[cands], 1e-30) \
            if cands.size else None
        best = None
        for idx, e in enumerate(cands):
            m = (p >= self.elem_lo[e] - tol * scale[idx]).all() and \
                (p <= self.elem_hi[e] + tol * scale[idx]).all()
            if not m:
                continue
            params = self.inverse_map(int(e), p)
            if params is not None and self.basis.contains(params, tol=10 * tol):
                best = (int(e), params)
                break  # candidates sorted ascending: first hit has lowest id
        return best

    def map_to_physical(self, e: int, params) -> np.ndarray:
        return self.basis.values(params) @ self.nodes[self.conn[e]]

    def interpolate(self, nodal_field, point):
        """FE interpolation of a nodal field at a physical point."""
        hit = self.locate_point(point)
        if hit is None:
            raise GeometryError(f"point {np.asarray(point)} lies outside the mesh")
        e, params = hit
        return float(self.basis.values(params) @ np.asarray(nodal_field)[self.conn[e]])

    def jacobian(self, e: int, params) -> np.ndarray:
        xe = self.nodes[self.conn[e]]
        return xe.T @ self.basis.gradients(params)

    def physical_gradient(self, nodal_field, e: int, params) -> np.ndarray:
        """Gradient of a nodal field at parameter coords of element e."""
        gp = self.basis.gradients(params)  # (nn, 3)
        jac = self.nodes[self.conn[e]].T @ gp
        gphys = np.linalg.solve(jac.T, gp.T)  # (3, nn)
        return gphys @ np.asarray(nodal_field)[self.conn[e]]


def interpolate_field(mesh: TissueMesh, nodal_field, point) -> float:
    """Module-level convenience wrapper around TissueMesh.interpolate."""
    return mesh.interpolate(nodal_field, point)


def locate_point(mesh: TissueMesh, point, tol: float = 1e-9):
    return mesh.locate_point(point, tol=tol)


def _graded_shell(h0: float, thickness: float, grading: float):
    """Outward element sizes for one shell side.

    Only the outermost layer absorbs the fitting remainder, so shells of
    different total thickness share their inner layers exactly (far-field
    comparisons then see domain-size effects, not re-discretization).
    """
    if thickness <= 0:
        return np.zeros(0)
    sizes = []
    total = 0.0
    h = h0
    while total < thickness - 1e-12 * thickness:
        h = h * grading
        sizes.append(min(h, thickness - total))
        total += sizes[-1]
        if len(sizes) > 100000:
            raise ConfigError("shell grading produces too many layers; "
                              "use grading >= 1 or a thinner shell")
    sizes = np.array(sizes)
    # merge a sliver of an outermost layer into its neighbour
    if len(sizes) > 1 and sizes[-1] < 0.2 * sizes[-2]:
        sizes[-2] += sizes[-1]
        sizes = sizes[:-1]
    return sizes


def build_box_mesh(inner_lo, inner_hi, resolution, enlargement: float = 1.0,
                   grading: float = 1.4) -> TissueMesh:
    """Hexahedral mesh of an inner (vascular) box plus a graded far shell.

    resolution: elements per axis of the inner box (scalar or 3-sequence).
    enlargement >= 1 scales the outer box extents relative to the inner box,
    keeping it centered; grading > 0 is the geometric growth factor of shell
    element sizes. The outer boundary nodes receive a zero interstitial
    pressure Dirichlet condition (far field), which callers may override.
    """
    inner_lo = np.asarray(inner_lo, dtype=float)
    inner_hi = np.asarray(inner_hi, dtype=float)
    if np.any(inner_hi <= inner_lo):
        raise ConfigError("inner box is degenerate")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,)).copy()
    if np.any(res < 2):
        raise ConfigError("resolution must be at least 2 elements per axis")
    if not enlargement >= 1.0:
        raise ConfigError(f"enlargement must be >= 1, got {enlargement}")
    if not grading > 0:
        raise ConfigError(f"grading must be positive, got {grading}")

    coords = []
    inner_rng = []
    for d in range(3):
        inner = np.linspace(inner_lo[d], inner_hi[d], res[d] + 1)
        h0 = (inner_hi[d] - inner_lo[d]) / res[d]
        thick = 0.5 * (enlargement - 1.0) * (inner_hi[d] - inner_lo[d])
        shell = _graded_shell(h0, thick, grading)
        lo_side = inner_lo[d] - np.cumsum(shell)[::-1] if shell.size else np.zeros(0)
        hi_side = inner_hi[d] + np.cumsum(shell) if shell.size else np.zeros(0)
        c = np.concatenate([lo_side, inner, hi_side])
        coords.append(c)
        inner_rng.append((len(lo_side), len(lo_side) + res[d]))  # element index span

    nx, ny, nz = (len(c) - 1 for c in coords)
    gx, gy, gz = np.meshgrid(coords[0], coords[1], coords[2], indexing="ij")
    # x-fastest node numbering
    nodes = np.stack([gx.transpose(2, 1, 0).ravel(),
                      gy.transpose(2, 1, 0).ravel(),
                      gz.transpose(2, 1, 0).ravel()], axis=1)

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    conn = np.empty((nx * ny * nz, 8), dtype=int)
    tag = np.empty(nx * ny * nz, dtype=np.int8)
    e = 0
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                conn[e] = [nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k),
                           nid(i, j + 1, k), nid(i, j, k + 1), nid(i + 1, j, k + 1),
                           nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1)]
                inner = (inner_rng[0][0] <= i < inner_rng[0][1]
                         and inner_rng[1][0] <= j < inner_rng[1][1]
                         and inner_rng[2][0] <= k < inner_rng[2][1])
                tag[e] = TAG_VASCULAR if inner else TAG_OUTSIDE
                e += 1

    eps = 1e-9 * float(np.max(np.abs(nodes)) + 1.0)
    outer = np.flatnonzero(
        np.any(np.abs(nodes - nodes.min(axis=0)) < eps, axis=1)
        | np.any(np.abs(nodes - nodes.max(axis=0)) < eps, axis=1))
    on_inner_face = np.zeros(len(nodes), dtype=bool)
    inside_inner = np.all((nodes >= inner_lo - eps) & (nodes <= inner_hi + eps), axis=1)
    for d in range(3):
        on_inner_face |= inside_inner & (
            (np.abs(nodes[:, d] - inner_lo[d]) < eps)
            | (np.abs(nodes[:, d] - inner_hi[d]) < eps))
    vascular = np.flatnonzero(on_inner_face)

    mesh = TissueMesh(nodes, conn, HEX8, tag=tag, outer_boundary_nodes=outer,
                      vascular_boundary_nodes=vascular)
    mesh.pl_dirichlet = {int(i): 0.0 for i in outer}
    return mesh


# ---------------------------------------------------------------------------
# Minimal ASCII mesh format:
#   n_nodes
#   id x y z                      (n_nodes lines)
#   n_elements
#   id kind n0 ... n7|n0..n3 tag  (n_elements lines)
# ---------------------------------------------------------------------------

def save_mesh(mesh: TissueMesh, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{mesh.n_nodes}\n")
        for i, p in enumerate(mesh.nodes):
            f.write(f"{i} {p[0]!r} {p[1]!r} {p[2]!r}\n")
        f.write(f"{mesh.n_elements}\n")
        for e in range(mesh.n_elements):
            ids = " ".join(str(int(v)) for v in mesh.conn[e])
            f.write(f"{e} {mesh.kind} {ids} {int(mesh.tag[e])}\n")


def load_mesh(path: str) -> TissueMesh:
    with open(path, encoding="utf-8") as f:
        toks = f.read().split("\n")
    row = 0
    n_nodes = int(toks[row]); row += 1
    nodes = np.empty((n_nodes, 3))
    for _ in range(n_nodes):
        parts = toks[row].split(); row += 1
        nodes[int(parts[0])] = [float(parts[1]), float(parts[2]), float(parts[3])]
    n_el = int(toks[row]); row += 1
    kinds = set()
    conn_rows = []
    tags = np.empty(n_el, dtype=np.int8)
    for _ in range(n_el):
        parts = toks[row].split(); row += 1
        eid, kind = int(parts[0]), parts[1]
        kinds.add(kind)
        nn = 8 if kind == HEX8 else 4
        conn_rows.append((eid, [int(v) for v in parts[2:2 + nn]]))
        tags[eid] = int(parts[2 + nn])
    if len(kinds) > 1:
        raise ConfigError("mixed element kinds are not supported")
    kind = kinds.pop() if kinds else HEX8
    conn = np.empty((n_el, 8 if kind == HEX8 else 4), dtype=int)
    for eid, ids in conn_rows:
        conn[eid] = ids
    mesh = TissueMesh(nodes, conn, kind, tag=tags)
    # recover boundary sets geometrically for imported meshes
    eps = 1e-9 * float(np.max(np.abs(nodes)) + 1.0)
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    outer = np.flatnonzero(np.any(np.abs(nodes - lo) < eps, axis=1)
                           | np.any(np.abs(nodes - hi) < eps, axis=1))
    mesh.outer_boundary_nodes = outer
    if (mesh.tag == TAG_OUTSIDE).any():
        shared = _interface_nodes(mesh)
        mesh.vascular_boundary_nodes = shared
    else:
        mesh.vascular_boundary_nodes = outer
    mesh.pl_dirichlet = {int(i): 0.0 for i in mesh.outer_boundary_nodes}
    return mesh


def _interface_nodes(mesh: TissueMesh) -> np.ndarray:
    inside = np.zeros(mesh.n_nodes, dtype=bool)
    outside = np.zeros(mesh.n_nodes, dtype=bool)
    inside[np.unique(mesh.conn[mesh.tag == TAG_VASCULAR])] = True
    outside[np.unique(mesh.conn[mesh.tag == TAG_OUTSIDE])] = True
    return np.flatnonzero(inside & outside)
