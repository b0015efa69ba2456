"""Segment-based line integration along 1D vessel elements embedded in a 3D
mesh, assembly of the Dirac line-exchange blocks, and the mortar operators
(D, M, kappa) coupling resolved vessels to a homogenized 3D field.

Each 1D element is split at 3D element boundaries so quadrature never crosses
a kink of the 3D shape functions; sub-intervals of one element tile its
parameter space [-1, 1] exactly. Host elements are found by parametric
line-box clipping (axis-aligned hexahedra) or half-space clipping (tets);
degenerate on-face points go to the lowest containing element id after a
tiny inward nudge along the vessel tangent, so assembly is deterministic.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from vasoperf.errors import ConfigError, GeometryError
from vasoperf.mesh import HEX8, TissueMesh
from vasoperf.network import VesselNetwork

_BREAK_TOL = 1e-10


@dataclass
class IntegrationSegment:
    """One sub-interval of a 1D element hosted by a single 3D element.

    gauss_* arrays hold the quadrature data mapped to the physical line:
    weights carry the full measure ds, so sums of weights give arc length.
    """

    elem1d: int
    elem3d: int
    xi_a: float
    xi_b: float
    gauss_xi: np.ndarray        # (ng,) 1D parameter coordinates
    gauss_weight: np.ndarray    # (ng,) physical length weights, um
    gauss_position: np.ndarray  # (ng, 3) physical points
    gauss_host_params: np.ndarray  # (ng, 3) parameter coords in elem3d

    @property
    def length(self) -> float:
        return float(self.gauss_weight.sum())


def _clip_line_box(p0, p1, lo, hi):
    """Parametric interval [t0, t1] of the line p0 + t (p1 - p0) inside an
    axis-aligned box, or None."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for a in range(3):
        if abs(d[a]) < 1e-300:
            if p0[a] < lo[a] or p0[a] > hi[a]:
                return None
            continue
        ta = (lo[a] - p0[a]) / d[a]
        tb = (hi[a] - p0[a]) / d[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1


def _clip_line_tet(p0, p1, verts):
    """Parametric interval of the line inside a tetrahedron, or None."""
    t0, t1 = 0.0, 1.0
    centroid = verts.mean(axis=0)
    faces = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))
    d = p1 - p0
    for f in faces:
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        n = np.cross(b - a, c - a)
        if n.dot(centroid - a) < 0:  # orient inward
            n = -n
        denom = n.dot(d)
        num = n.dot(a - p0)
        if abs(denom) < 1e-300:
            if n.dot(p0 - a) < 0:
                return None
            continue
        t = num / denom
        if denom > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return t0, t1


def _gauss_1d(n: int):
    return np.polynomial.legendre.leggauss(n)


def build_segments(network: VesselNetwork, mesh: TissueMesh,
                   element_ids: Optional[np.ndarray] = None, n_gauss: int = 3,
                   restrict_tag: Optional[int] = None) -> List[IntegrationSegment]:
    """Integration segments for the given 1D elements (default: all).

    restrict_tag limits host elements to a mesh subdomain tag (used when the
    3D field only lives on the vascular subdomain). Raises GeometryError when
    a 1D element is not fully covered by admissible host elements.
    """
    if mesh.kind == HEX8 and not mesh.axis_aligned:
        raise GeometryError("segment integration supports axis-aligned hexahedra "
                            "or tetrahedra only")
    if element_ids is None:
        element_ids = np.arange(network.n_segments)
    gx, gw = _gauss_1d(n_gauss)
    out: List[IntegrationSegment] = []
    for eid in np.asarray(element_ids, dtype=int):
        a, b = network.seg_nodes[eid]
        p0 = network.positions[a]
        p1 = network.positions[b]
        length = network.lengths[eid]
        tangent = network.tangents[eid]
        lo = np.minimum(p0, p1)
        hi = np.maximum(p0, p1)
        cands = mesh.candidate_elements(lo, hi)
        if restrict_tag is not None:
            cands = cands[mesh.tag[cands] == restrict_tag]
        breaks = {0.0, 1.0}
        havens = []
        for e in cands:
            if mesh.kind == HEX8:
                iv = _clip_line_box(p0, p1, mesh.elem_lo[e], mesh.elem_hi[e])
            else:
                iv = _clip_line_tet(p0, p1, mesh.nodes[mesh.conn[e]])
            if iv is None or iv[1] - iv[0] <= _BREAK_TOL:
                continue
            havens.append((int(e), iv[0], iv[1]))
            breaks.add(iv[0])
            breaks.add(iv[1])
        ts = np.array(sorted(t for t in breaks if -_BREAK_TOL < t < 1 + _BREAK_TOL))
        ts[0], ts[-1] = 0.0, 1.0
        keep = np.concatenate([[True], np.diff(ts) > _BREAK_TOL])
        ts = ts[keep]
        if ts[-1] != 1.0:
            ts = np.append(ts, 1.0)

        hscale = float(np.mean(mesh.elem_hi[cands] - mesh.elem_lo[cands])) \
            if cands.size else 1.0
        pieces = []  # (t0, t1, host)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            tm = 0.5 * (t0 + t1)
            host = _host_for(tm, havens, p0, p1, tangent, hscale, mesh, length)
            if host is None:
                raise GeometryError(
                    f"1D element {int(eid)} escapes the admissible mesh region "
                    f"near t={tm:.6f} (point {p0 + tm * (p1 - p0)})")
            if pieces and pieces[-1][2] == host:
                pieces[-1] = (pieces[-1][0], t1, host)
            else:
                pieces.append((t0, t1, host))

        for t0, t1, host in pieces:
            xi_a, xi_b = 2.0 * t0 - 1.0, 2.0 * t1 - 1.0
            mid, half = 0.5 * (xi_a + xi_b), 0.5 * (xi_b - xi_a)
            xi = mid + half * gx
            w = gw * half * (length / 2.0)
            tpts = 0.5 * (xi + 1.0)
            pos = p0[None, :] + tpts[:, None] * (p1 - p0)[None, :]
            host_params = np.array([mesh.inverse_map(host, q) for q in pos])
            out.append(IntegrationSegment(int(eid), host, float(xi_a), float(xi_b),
                                          xi, w, pos, host_params))
    return out


def _host_for(tm, havens, p0, p1, tangent, hscale, mesh, length):
    pull = [h for h, t0, t1 in havens if t0 - _BREAK_TOL <= tm <= t1 + _BREAK_TOL]
    if not pull:
        return None
    if len(pull) == 1:
        return pull[0]
    # degenerate overlap: nudge inward along the tangent, keep lowest id
    q = p0 + tm * (p1 - p0) + 1e-9 * hscale * tangent
    inside = [h for h in sorted(pull)
              if (q >= mesh.elem_lo[h] - 1e-9 * hscale).all()
              and (q <= mesh.elem_hi[h] + 1e-9 * hscale).all()] \
        if mesh.kind == HEX8 else sorted(pull)
    return (inside or sorted(pull))[0]


def _shape_1d(xi: np.ndarray) -> np.ndarray:
    return np.stack([(1.0 - xi) / 2.0, (1.0 + xi) / 2.0], axis=-1)


def segment_dump(segments: List[IntegrationSegment], path: str) -> None:
    """Debug CSV: elem1d, elem3d, xi_a, xi_b, length."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("elem1d,elem3d,xi_a,xi_b,length\n")
        for s in segments:
            f.write(f"{s.elem1d},{s.elem3d},{s.xi_a!r},{s.xi_b!r},{s.length!r}\n")


def assemble_line_exchange(segments: List[IntegrationSegment],
                           network: VesselNetwork, mesh: TissueMesh,
                           coeff_per_length):
    """Dirac line-source exchange blocks for a per-length coefficient.

    coeff_per_length is a scalar or an array indexed by 1D element id. Returns
    (b11, b13, b31, b33) where the 1D index space is the network's nodes and
    the 3D space the mesh's nodes: b11[i,j] = int N_i c N_j ds along the
    vessels, b13 mixes 1D and 3D shapes, b31 = b13^T (same integrand) and b33
    uses 3D shapes on both sides. For constant fields each block's entries
    sum to c * total line length.
    """
    c = np.asarray(coeff_per_length, dtype=float)
    if c.ndim == 0:
        c = np.full(network.n_segments, float(c))
    n1 = network.n_nodes
    n3 = mesh.n_nodes
    nn3 = mesh.basis.n_nodes
    r11, c11, v11 = [], [], []
    r13, c13, v13 = [], [], []
    r33, c33, v33 = [], [], []
    for s in segments:
        nodes1 = network.seg_nodes[s.elem1d]
        nodes3 = mesh.conn[s.elem3d]
        n1v = _shape_1d(s.gauss_xi)                   # (ng, 2)
        n3v = mesh.basis.values(s.gauss_host_params)  # (ng, nn3)
        wc = s.gauss_weight * c[s.elem1d]
        m11 = (n1v * wc[:, None]).T @ n1v             # (2, 2)
        m13 = (n1v * wc[:, None]).T @ n3v             # (2, nn3)
        m33 = (n3v * wc[:, None]).T @ n3v             # (nn3, nn3)
        for i in range(2):
            r11.extend([nodes1[i]] * 2)
            c11.extend(nodes1)
            v11.extend(m11[i])
            r13.extend([nodes1[i]] * nn3)
            c13.extend(nodes3)
            v13.extend(m13[i])
        for i in range(nn3):
            r33.extend([nodes3[i]] * nn3)
            c33.extend(nodes3)
            v33.extend(m33[i])
    b11 = sp.coo_matrix((v11, (r11, c11)), shape=(n1, n1)).tocsr()
    b13 = sp.coo_matrix((v13, (r13, c13)), shape=(n1, n3)).tocsr()
    b33 = sp.coo_matrix((v33, (r33, c33)), shape=(n3, n3)).tocsr()
    return b11, b13, b13.T.tocsr(), b33


@dataclass
class MortarOperators:
    """Mortar matrices coupling 1D nodal pressures to a 3D nodal field.

    D is the 1D mass matrix on the coupled vessel set (the multiplier basis
    equals the 1D trial basis), M mixes multiplier and 3D shapes, and kappa
    holds the multiplier partition-of-unity weights int Phi_j ds. Columns of
    M are indexed by the mesh's vascular-subdomain node numbering.
    """

    D: sp.csr_matrix
    M: sp.csr_matrix
    kappa: np.ndarray

    def row_sum_error(self) -> float:
        """Max relative deviation of D and M row sums from kappa."""
        rd = np.asarray(self.D.sum(axis=1)).ravel()
        rm = np.asarray(self.M.sum(axis=1)).ravel()
        scale = np.where(self.kappa > 0, self.kappa, 1.0)
        err = np.concatenate([np.abs(rd - self.kappa) / scale,
                              np.abs(rm - self.kappa) / scale])
        return float(err.max()) if err.size else 0.0


def assemble_mortar(segments: List[IntegrationSegment], network: VesselNetwork,
                    mesh: TissueMesh) -> MortarOperators:
    """Mortar operators over the given integration segments.

    Host elements must carry 3D-field unknowns, i.e. lie in the vascular
    subdomain (build the segments with restrict_tag=TAG_VASCULAR).
    """
    n1 = network.n_nodes
    nv = mesh.n_vnodes
    nn3 = mesh.basis.n_nodes
    rd, cd, vd = [], [], []
    rm, cm, vm = [], [], []
    kappa = np.zeros(n1)
    for s in segments:
        nodes1 = network.seg_nodes[s.elem1d]
        vcols = mesh.vnode_index[mesh.conn[s.elem3d]]
        if np.any(vcols < 0):
            raise GeometryError(
                f"integration segment of 1D element {s.elem1d} is hosted by "
                f"element {s.elem3d} outside the vascular subdomain")
        phi = _shape_1d(s.gauss_xi)                   # multiplier basis = 1D basis
        n3v = mesh.basis.values(s.gauss_host_params)
        w = s.gauss_weight
        md = (phi * w[:, None]).T @ phi
        mm = (phi * w[:, None]).T @ n3v
        np.add.at(kappa, nodes1, (phi * w[:, None]).sum(axis=0))
        for i in range(2):
            rd.extend([nodes1[i]] * 2)
            cd.extend(nodes1)
            vd.extend(md[i])
            rm.extend([nodes1[i]] * nn3)
            cm.extend(vcols)
            vm.extend(mm[i])
    d = sp.coo_matrix((vd, (rd, cd)), shape=(n1, n1)).tocsr()
    m = sp.coo_matrix((vm, (rm, cm)), shape=(n1, nv)).tocsr()
    return MortarOperators(D=d, M=m, kappa=kappa)


def weighted_gap(ops: MortarOperators, p_1d: np.ndarray, p_v: np.ndarray) -> np.ndarray:
    """Weighted pressure gap g = D p_1d - M p_v per coupled 1D node."""
    p_1d = np.asarray(p_1d, dtype=float)
    p_v = np.asarray(p_v, dtype=float)
    if p_1d.shape != (ops.D.shape[1],) or p_v.shape != (ops.M.shape[1],):
        raise ConfigError(
            f"gap arguments have shapes {p_1d.shape}/{p_v.shape}, expected "
            f"({ops.D.shape[1]},)/({ops.M.shape[1]},)")
    return ops.D @ p_1d - ops.M @ p_v


def recover_multipliers(ops: MortarOperators, penalty: float,
                        gap: np.ndarray) -> np.ndarray:
    """Nodal multipliers lambda = penalty * kappa^-1 g.

    With the penalty in um^2/(Pa*s) the multipliers are volumetric flow per
    unit vessel length (um^2/s), positive from the 1D vessels into the
    homogenized field.
    """
    if not penalty > 0:
        raise ConfigError(f"penalty must be positive, got {penalty}")
    kappa = np.where(ops.kappa > 0, ops.kappa, 1.0)
    return penalty * np.asarray(gap) / kappa
