"""Comparison metrics between the fully-resolved and the hybrid model:
coefficient-of-determination suites over pressures and REV flows, mean REV
pressures with absolute/relative errors, and the large-to-small compartment
transfer comparison.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vasoperf.errors import ConfigError, NumericError
from vasoperf.fullmodel import FullSolution
from vasoperf.hybrid import HybridSolution
from vasoperf.mesh import TAG_VASCULAR, TissueMesh, gauss_points_hex
from vasoperf.network import LARGE, SMALL, VesselNetwork, connecting_elements
from vasoperf.rev import RevPartition, clip_lengths


def r2(values_ref, values_test) -> float:
    """Coefficient of determination 1 - SSE/SST of test against reference."""
    ref = np.asarray(values_ref, dtype=float).ravel()
    test = np.asarray(values_test, dtype=float).ravel()
    if ref.shape != test.shape or ref.size < 2:
        raise ConfigError("r2 needs two equal-length sequences of >= 2 values")
    sst = float(np.sum((ref - ref.mean()) ** 2))
    if sst == 0:
        raise NumericError("r2 undefined: reference values have no variance")
    sse = float(np.sum((ref - test) ** 2))
    return 1.0 - sse / sst


def interpolate_homogenized(mesh: TissueMesh, p_hom: np.ndarray, point):
    """Homogenized pressure at a physical point, or None outside the
    vascular subdomain."""
    hit = mesh.locate_point(point, tag=TAG_VASCULAR)
    if hit is None:
        return None
    e, params = hit
    vals = mesh.basis.values(params)
    return float(vals @ p_hom[mesh.vnode_index[mesh.conn[e]]])


class HomogenizedSampler:
    """Cached interpolation of the homogenized field at fixed points.

    Locating host elements dominates repeated metric evaluation during
    calibration; the (element, shape values) table is built once.
    """

    def __init__(self, mesh: TissueMesh, points: np.ndarray):
        self.mesh = mesh
        self.kept = []
        rows, weights = [], []
        for i, p in enumerate(np.atleast_2d(points)):
            hit = mesh.locate_point(p, tag=TAG_VASCULAR)
            if hit is None:
                continue
            e, params = hit
            self.kept.append(i)
            rows.append(mesh.vnode_index[mesh.conn[e]])
            weights.append(mesh.basis.values(params))
        self.kept = np.array(self.kept, dtype=int)
        self.rows = np.array(rows, dtype=int) if rows else np.zeros((0, 1), int)
        self.weights = np.array(weights) if weights else np.zeros((0, 1))

    def sample(self, p_hom: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.weights, np.asarray(p_hom)[self.rows])


def r2_small_pressures(full: FullSolution, hybrid: HybridSolution,
                       network: VesselNetwork, mesh: TissueMesh,
                       sampler: Optional[HomogenizedSampler] = None) -> float:
    """Agreement of small-vessel nodal pressures with the homogenized field
    evaluated at those node positions."""
    nodes = network.node_set(SMALL)
    if nodes.size == 0:
        raise ConfigError("network has no small-vessel nodes")
    if sampler is None:
        sampler = HomogenizedSampler(mesh, network.positions[nodes])
    if sampler.kept.size == 0:
        raise NumericError("every small-vessel node lies outside the "
                           "homogenized subdomain")
    skipped = nodes.size - sampler.kept.size
    if skipped:
        warnings.warn(f"{skipped} small-vessel nodes outside the vascular "
                      "subdomain were excluded")
    ref = full.p_vessel[nodes[sampler.kept]]
    return r2(ref, sampler.sample(hybrid.p_hom))


# ---------------------------------------------------------------------------
# REV plane flows
# ---------------------------------------------------------------------------

def plane_crossings(network: VesselNetwork, center, half_side: float, axis: int,
                    segment_ids: Optional[np.ndarray] = None):
    """Segments crossing the axis-aligned square of side 2*half_side centered
    at `center` with normal along `axis`.

    Returns (ids, signs) where sign is +1 when the segment tangent points
    along the positive axis. The crossing plane is owned by coordinates >= c
    (half-open), and the square is closed on its minimum edges and open on
    its maximum edges so adjacent REV squares never double count.
    """
    ids = np.arange(network.n_segments) if segment_ids is None \
        else np.asarray(segment_ids, dtype=int)
    p0 = network.positions[network.seg_nodes[ids, 0]]
    p1 = network.positions[network.seg_nodes[ids, 1]]
    c = np.asarray(center, dtype=float)
    below0 = p0[:, axis] < c[axis]
    below1 = p1[:, axis] < c[axis]
    crossing = below0 != below1
    if not crossing.any():
        return np.zeros(0, dtype=int), np.zeros(0)
    sel = np.flatnonzero(crossing)
    d = p1[sel] - p0[sel]
    t = (c[axis] - p0[sel, axis]) / d[:, axis]
    pt = p0[sel] + t[:, None] * d
    others = [a for a in range(3) if a != axis]
    ok = np.ones(len(sel), dtype=bool)
    for a in others:
        ok &= (pt[:, a] >= c[a] - half_side) & (pt[:, a] < c[a] + half_side)
    sel = sel[ok]
    signs = np.where(d[ok][:, axis] > 0, 1.0, -1.0)
    return ids[sel], signs


def rev_plane_flows_discrete(network: VesselNetwork, segment_flow: np.ndarray,
                             partition: RevPartition,
                             label: Optional[str] = None) -> np.ndarray:
    """Signed volumetric flow through each REV's three center squares summed
    over crossing segments (optionally restricted to one partition label)."""
    segment_ids = None
    if label is not None:
        segment_ids = network.segment_ids(label)
    q = np.asarray(segment_flow, dtype=float)
    out = np.zeros((partition.n_rev, 3))
    for j in range(partition.n_rev):
        half = float(partition.extents[j].min()) / 2.0
        for axis in range(3):
            ids, signs = plane_crossings(network, partition.centers[j], half,
                                         axis, segment_ids)
            out[j, axis] = float(np.sum(q[ids] * signs))
    return out


def rev_plane_abs_flows_discrete(network: VesselNetwork, segment_flow: np.ndarray,
                                 partition: RevPartition,
                                 label: Optional[str] = None) -> np.ndarray:
    """Unsigned variant: sum of |Q| over crossing segments per direction."""
    segment_ids = None
    if label is not None:
        segment_ids = network.segment_ids(label)
    q = np.asarray(segment_flow, dtype=float)
    out = np.zeros((partition.n_rev, 3))
    for j in range(partition.n_rev):
        half = float(partition.extents[j].min()) / 2.0
        for axis in range(3):
            ids, _ = plane_crossings(network, partition.centers[j], half,
                                     axis, segment_ids)
            out[j, axis] = float(np.sum(np.abs(q[ids])))
    return out


class HomogenizedPlaneFlux:
    """Cached Darcy flux of the homogenized field through REV center squares.

    Integrates -k/mu dp/dn over each square with per-element 2x2 Gauss
    quadrature on the square clipped to the element, exact for trilinear
    pressure on axis-aligned hexahedra. Geometry tables are built once; each
    evaluation is a sparse dot with the nodal field.
    """

    def __init__(self, mesh: TissueMesh, partition: RevPartition):
        if mesh.kind != "hex8" or not mesh.axis_aligned:
            raise ConfigError("homogenized plane flows require an axis-aligned "
                              "hexahedral mesh")
        self.mesh = mesh
        self.partition = partition
        gp, gw = np.polynomial.legendre.leggauss(2)
        entries = []  # (rev, axis, element, vnode cols, per-gp grad weights)
        for j in range(partition.n_rev):
            c = partition.centers[j]
            half = float(partition.extents[j].min()) / 2.0
            for axis in range(3):
                o1, o2 = [a for a in range(3) if a != axis]
                lo = c.copy(); hi = c.copy()
                lo[o1] -= half; lo[o2] -= half
                hi[o1] += half; hi[o2] += half
                cands = mesh.candidate_elements(lo, hi)
                cands = cands[mesh.tag[cands] == TAG_VASCULAR]
                for e in cands:
                    elo, ehi = mesh.elem_lo[e], mesh.elem_hi[e]
                    if not (elo[axis] <= c[axis] <= ehi[axis]):
                        continue
                    # element owns its lower face on shared planes
                    if c[axis] == ehi[axis] and not np.isclose(
                            ehi[axis], partition.domain_hi[axis]):
                        continue
                    a1 = max(lo[o1], elo[o1]); b1 = min(hi[o1], ehi[o1])
                    a2 = max(lo[o2], elo[o2]); b2 = min(hi[o2], ehi[o2])
                    if b1 <= a1 or b2 <= a2:
                        continue
                    w_nodes = np.zeros(mesh.basis.n_nodes)
                    for g1, w1 in zip(gp, gw):
                        for g2, w2 in zip(gp, gw):
                            pt = np.empty(3)
                            pt[axis] = c[axis]
                            pt[o1] = 0.5 * (a1 + b1) + 0.5 * (b1 - a1) * g1
                            pt[o2] = 0.5 * (a2 + b2) + 0.5 * (b2 - a2) * g2
                            params = mesh.inverse_map(int(e), pt)
                            gpar = mesh.basis.gradients(params)  # (nn, 3)
                            jac = mesh.nodes[mesh.conn[e]].T @ gpar
                            gphys = np.linalg.solve(jac.T, gpar.T)  # (3, nn)
                            area_w = w1 * w2 * 0.25 * (b1 - a1) * (b2 - a2)
                            w_nodes += -gphys[axis] * area_w
                    entries.append((j, axis, int(e),
                                    mesh.vnode_index[mesh.conn[e]], w_nodes))
        self._entries = entries

    def evaluate(self, p_hom: np.ndarray, kv_over_mu) -> np.ndarray:
        kv = np.asarray(kv_over_mu, dtype=float)
        p = np.asarray(p_hom)
        out = np.zeros((self.partition.n_rev, 3))
        for j, axis, e, cols, w in self._entries:
            ke = float(kv if kv.ndim == 0 else kv[e])
            out[j, axis] += ke * float(w @ p[cols])
        return out


def rev_plane_flows_homogenized(mesh: TissueMesh, p_hom: np.ndarray,
                                kv_over_mu, partition: RevPartition,
                                evaluator: Optional[HomogenizedPlaneFlux] = None
                                ) -> np.ndarray:
    """Darcy flux of the homogenized field through each REV center square."""
    if evaluator is None:
        evaluator = HomogenizedPlaneFlux(mesh, partition)
    return evaluator.evaluate(p_hom, kv_over_mu)


# ---------------------------------------------------------------------------
# REV mean pressures
# ---------------------------------------------------------------------------

def _integrate_field_in_box(mesh: TissueMesh, field: np.ndarray, lo, hi,
                            tag: Optional[int] = None) -> float:
    """int field dV over box [lo, hi] by per-element sub-box quadrature."""
    pts, wts = gauss_points_hex(2)
    cands = mesh.candidate_elements(lo, hi)
    if tag is not None:
        cands = cands[mesh.tag[cands] == tag]
    total = 0.0
    for e in cands:
        a = np.maximum(mesh.elem_lo[e], lo)
        b = np.minimum(mesh.elem_hi[e], hi)
        if np.any(b <= a):
            continue
        vol = float(np.prod(b - a))
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        phys = mid[None, :] + pts * half[None, :]
        params = np.array([mesh.inverse_map(int(e), q) for q in phys])
        vals = mesh.basis.values(params) @ field[mesh.conn[e]]
        total += float(np.sum(wts * vals)) * vol / 8.0
    return total


@dataclass
class RevPressureComparison:
    """Per-REV mean pressures of both models and their errors."""

    mean_if_full: np.ndarray
    mean_if_hybrid: np.ndarray
    mean_blood_full: np.ndarray    # nodal mean over small vessels, NaN if empty
    mean_blood_hybrid: np.ndarray  # volume mean of the homogenized field
    err_if_abs: np.ndarray
    err_if_rel: np.ndarray
    err_blood_abs: np.ndarray
    err_blood_rel: np.ndarray
    excluded_revs: np.ndarray      # REVs with no small-vessel node

    @property
    def mean_err_if_abs(self) -> float:
        return float(np.nanmean(self.err_if_abs))

    @property
    def mean_err_if_rel(self) -> float:
        return float(np.nanmean(self.err_if_rel))

    @property
    def mean_err_blood_abs(self) -> float:
        return float(np.nanmean(self.err_blood_abs))

    @property
    def mean_err_blood_rel(self) -> float:
        return float(np.nanmean(self.err_blood_rel))


def rev_mean_pressures(full: FullSolution, hybrid: HybridSolution,
                       partition: RevPartition, network: VesselNetwork,
                       mesh: TissueMesh) -> RevPressureComparison:
    """Volume-averaged IF pressures, small-vessel blood pressure means and
    their per-REV errors between the two models."""
    if partition.n_rev == 0:
        raise ConfigError("empty REV partition")
    n = partition.n_rev
    small_nodes = network.node_set(SMALL)
    node_rev = partition.rev_of_points(network.positions[small_nodes]) \
        if small_nodes.size else np.zeros(0, dtype=int)

    hom_field = np.zeros(mesh.n_nodes)
    hom_field[mesh.vnode_ids] = hybrid.p_hom

    mif_f = np.empty(n)
    mif_h = np.empty(n)
    mb_f = np.full(n, np.nan)
    mb_h = np.empty(n)
    excluded = []
    for j in range(n):
        lo, hi = partition.box(j)
        vol = float(partition.volumes[j])
        mif_f[j] = _integrate_field_in_box(mesh, full.p_if, lo, hi) / vol
        mif_h[j] = _integrate_field_in_box(mesh, hybrid.p_if, lo, hi) / vol
        mb_h[j] = _integrate_field_in_box(mesh, hom_field, lo, hi,
                                          tag=TAG_VASCULAR) / vol
        mask = node_rev == j
        if mask.any():
            mb_f[j] = float(full.p_vessel[small_nodes[mask]].mean())
        else:
            excluded.append(j)
    if excluded:
        warnings.warn(f"REVs {excluded} contain no small-vessel node and are "
                      "excluded from blood-pressure errors")

    def rel(err, ref):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.abs(ref) > 0, err / np.abs(ref), np.nan)

    e_if = np.abs(mif_f - mif_h)
    e_b = np.abs(mb_f - mb_h)
    return RevPressureComparison(
        mean_if_full=mif_f, mean_if_hybrid=mif_h,
        mean_blood_full=mb_f, mean_blood_hybrid=mb_h,
        err_if_abs=e_if, err_if_rel=rel(e_if, mif_f),
        err_blood_abs=e_b, err_blood_rel=rel(e_b, mb_f),
        excluded_revs=np.array(excluded, dtype=int))


# ---------------------------------------------------------------------------
# Large-to-small compartment transfer
# ---------------------------------------------------------------------------

def rev_multiplier_integrals(large_net: VesselNetwork, lam: np.ndarray,
                             partition: RevPartition) -> np.ndarray:
    """int lambda ds over the large vessels inside each REV (trapezoid on
    box-clipped elements; exact for the linear multiplier interpolation)."""
    out = np.zeros(partition.n_rev)
    p0 = large_net.positions[large_net.seg_nodes[:, 0]]
    p1 = large_net.positions[large_net.seg_nodes[:, 1]]
    lam0 = np.asarray(lam)[large_net.seg_nodes[:, 0]]
    lam1 = np.asarray(lam)[large_net.seg_nodes[:, 1]]
    upper_open = np.array([True, True, True])
    for j in range(partition.n_rev):
        lo, hi = partition.box(j)
        d = p1 - p0
        t0 = np.zeros(len(p0))
        t1 = np.ones(len(p0))
        frac = clip_lengths(p0, p1, lo, hi, upper_open=upper_open,
                            domain_hi=partition.domain_hi)
        # recover the clip interval for the multiplier endpoint values
        for a in range(3):
            da = d[:, a]
            degenerate = np.abs(da) < 1e-300
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (lo[a] - p0[:, a]) / da
                tb = (hi[a] - p0[:, a]) / da
            lo_t = np.where(degenerate, 0.0, np.minimum(ta, tb))
            hi_t = np.where(degenerate, 1.0, np.maximum(ta, tb))
            t0 = np.maximum(t0, lo_t)
            t1 = np.minimum(t1, hi_t)
        t0 = np.clip(t0, 0, 1)
        t1 = np.clip(t1, 0, 1)
        use = frac > 0
        la = lam0[use] + (lam1[use] - lam0[use]) * t0[use]
        lb = lam0[use] + (lam1[use] - lam0[use]) * t1[use]
        out[j] = float(np.sum(frac[use] * large_net.lengths[use] * 0.5 * (la + lb)))
    return out


def rev_connecting_flows(network: VesselNetwork, segment_flow: np.ndarray,
                         partition: RevPartition) -> np.ndarray:
    """Signed flow from large into small vessels through connecting elements,
    summed per REV (elements assigned by midpoint, half-open boxes)."""
    conn = connecting_elements(network)
    if conn.size == 0:
        raise NumericError("network has no elements connecting large and "
                           "small vessels")
    large_nodes = set(int(i) for i in network.node_set(LARGE))
    q = np.asarray(segment_flow, dtype=float)[conn]
    a = network.seg_nodes[conn, 0]
    b = network.seg_nodes[conn, 1]
    # orient large -> small positive
    flips = np.array([int(x) not in large_nodes for x in a])
    q = np.where(flips, -q, q)
    mid = 0.5 * (network.positions[a] + network.positions[b])
    rev = partition.rev_of_points(mid)
    out = np.zeros(partition.n_rev)
    for val, j in zip(q, rev):
        if j >= 0:
            out[j] += float(val)
    return out


def compartment_transfer_comparison(full: FullSolution, hybrid: HybridSolution,
                                    network: VesselNetwork,
                                    large_net: VesselNetwork,
                                    partition: RevPartition) -> float:
    """R^2 of per-REV large-to-small transfer: multiplier line integrals of
    the hybrid model against connecting-element flows of the full model."""
    hyb = rev_multiplier_integrals(large_net, hybrid.lam, partition)
    ful = rev_connecting_flows(network, full.segment_flow, partition)
    return r2(ful, hyb)


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    """All scalar agreement metrics between the two models."""

    r2_large: float
    r2_small: float
    r2_if: float
    r2_flow_small: float
    r2_total: float
    r2_flow_whole: Optional[float] = None
    r2_flow_transfer: Optional[float] = None
    rev_pressures: Optional[RevPressureComparison] = None
    weights: tuple = (0.25, 0.25, 0.25, 0.25)

    def scalars(self) -> dict:
        out = {
            "r2_large": self.r2_large,
            "r2_small": self.r2_small,
            "r2_if": self.r2_if,
            "r2_flow_small": self.r2_flow_small,
            "r2_total": self.r2_total,
        }
        if self.r2_flow_whole is not None:
            out["r2_flow_whole"] = self.r2_flow_whole
        if self.r2_flow_transfer is not None:
            out["r2_flow_transfer"] = self.r2_flow_transfer
        if self.rev_pressures is not None:
            out.update({
                "mean_err_if_abs": self.rev_pressures.mean_err_if_abs,
                "mean_err_if_rel": self.rev_pressures.mean_err_if_rel,
                "mean_err_blood_abs": self.rev_pressures.mean_err_blood_abs,
                "mean_err_blood_rel": self.rev_pressures.mean_err_blood_rel,
            })
        return out


@dataclass
class MetricCaches:
    """Reusable geometry tables for repeated comparisons on one case."""

    sampler: Optional[HomogenizedSampler] = None
    flux: Optional[HomogenizedPlaneFlux] = None
    q_small_full: Optional[np.ndarray] = None

    @classmethod
    def build(cls, full: FullSolution, network: VesselNetwork,
              mesh: TissueMesh, partition: RevPartition) -> "MetricCaches":
        nodes = network.node_set(SMALL)
        return cls(sampler=HomogenizedSampler(mesh, network.positions[nodes]),
                   flux=HomogenizedPlaneFlux(mesh, partition),
                   q_small_full=rev_plane_flows_discrete(
                       network, full.segment_flow, partition, label=SMALL))


def compare_solutions(full: FullSolution, hybrid: HybridSolution,
                      network: VesselNetwork, large_net: VesselNetwork,
                      orig_node_ids: np.ndarray, mesh: TissueMesh,
                      partition: RevPartition, kv_over_mu,
                      weights=(0.25, 0.25, 0.25, 0.25),
                      with_extras: bool = True,
                      caches: Optional[MetricCaches] = None) -> ComparisonReport:
    """Full metric suite; the four weighted components make up r2_total."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,) or np.any(w < 0):
        raise ConfigError("weights must be 4 non-negative values")
    caches = caches or MetricCaches()
    r2_l = r2(full.p_vessel[orig_node_ids], hybrid.p_vessel)
    r2_s = r2_small_pressures(full, hybrid, network, mesh,
                              sampler=caches.sampler)
    r2_i = r2(full.p_if, hybrid.p_if)

    q_small_full = caches.q_small_full
    if q_small_full is None:
        q_small_full = rev_plane_flows_discrete(network, full.segment_flow,
                                                partition, label=SMALL)
    q_small_hyb = rev_plane_flows_homogenized(mesh, hybrid.p_hom, kv_over_mu,
                                              partition, evaluator=caches.flux)
    r2_f = r2(q_small_full, q_small_hyb)
    r2_tot = float(w[0] * r2_l + w[1] * r2_s + w[2] * r2_i + w[3] * r2_f)

    report = ComparisonReport(r2_large=r2_l, r2_small=r2_s, r2_if=r2_i,
                              r2_flow_small=r2_f, r2_total=r2_tot,
                              weights=tuple(w))
    if with_extras:
        q_whole_full = rev_plane_flows_discrete(network, full.segment_flow,
                                                partition)
        q_hyb_large = hybrid_segment_flows(large_net, hybrid)
        q_large_hyb = rev_plane_flows_discrete(large_net, q_hyb_large, partition)
        report.r2_flow_whole = r2(q_whole_full, q_small_hyb + q_large_hyb)
        try:
            report.r2_flow_transfer = compartment_transfer_comparison(
                full, hybrid, network, large_net, partition)
        except NumericError:
            report.r2_flow_transfer = None
        report.rev_pressures = rev_mean_pressures(full, hybrid, partition,
                                                  network, mesh)
    return report


def hybrid_segment_flows(large_net: VesselNetwork,
                         hybrid: HybridSolution) -> np.ndarray:
    """Per-segment flows of the hybrid model's resolved vessels."""
    k = large_net.conductances()
    return k * (hybrid.p_vessel[large_net.seg_nodes[:, 0]]
                - hybrid.p_vessel[large_net.seg_nodes[:, 1]])
