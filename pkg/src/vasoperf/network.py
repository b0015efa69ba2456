"""Vascular graphs: node/segment types, Poiseuille flow, flow-based
partitioning into large and small vessels, and geometric statistics.

Networks are immutable after construction; analysis functions never mutate
their inputs (tip classification attaches derived metadata only).
"""

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from vasoperf.errors import ConfigError, NumericError
from vasoperf.viscosity import viscosity_in_vivo

BC_NONE = "none"
BC_PRESSURE = "pressure"
BC_NOFLUX = "noflux"
_BC_TYPES = (BC_NONE, BC_PRESSURE, BC_NOFLUX)

LARGE = "large"
SMALL = "small"


@dataclass
class VesselNode:
    """Network node: position in um and an optional boundary condition."""

    id: int
    position: np.ndarray  # (3,) um
    bc_type: str = BC_NONE
    bc_value: float = 0.0  # Pa, meaningful for bc_type == "pressure"

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise ConfigError(f"node {self.id}: position must be a finite 3-vector")
        if self.bc_type not in _BC_TYPES:
            raise ConfigError(f"node {self.id}: unknown bc_type {self.bc_type!r}")


@dataclass
class VesselSegment:
    """Straight cylindrical segment between two nodes.

    length and viscosity are derived by the owning network (Euclidean node
    distance and the in-vivo viscosity law at the network hematocrit).
    """

    id: int
    node_a: int
    node_b: int
    radius: float  # um
    length: float = 0.0  # um, derived
    viscosity: float = 0.0  # Pa*s, derived

    def __post_init__(self):
        if self.node_a == self.node_b:
            raise ConfigError(f"segment {self.id}: node_a == node_b")
        if not self.radius > 0:
            raise ConfigError(f"segment {self.id}: radius must be positive")


class VesselNetwork:
    """Immutable graph of nodes and segments with derived flow quantities."""

    def __init__(self, nodes: Sequence[VesselNode], segments: Sequence[VesselSegment],
                 partition: Optional[np.ndarray] = None, hematocrit: float = 0.45):
        self.nodes = list(nodes)
        self.segments = list(segments)
        self.hematocrit = float(hematocrit)

        ids = [n.id for n in self.nodes]
        if ids != list(range(len(ids))):
            raise ConfigError("node ids must be dense and sorted from 0")
        seg_ids = [s.id for s in self.segments]
        if seg_ids != list(range(len(seg_ids))):
            raise ConfigError("segment ids must be dense and sorted from 0")

        self.positions = np.array([n.position for n in self.nodes], dtype=float) \
            if self.nodes else np.zeros((0, 3))
        self.seg_nodes = np.array([(s.node_a, s.node_b) for s in self.segments],
                                  dtype=int).reshape(-1, 2)
        if self.n_segments and (self.seg_nodes.min() < 0
                                or self.seg_nodes.max() >= self.n_nodes):
            raise ConfigError("segment references a node id outside the network")

        self.radii = np.array([s.radius for s in self.segments], dtype=float)
        if self.n_segments:
            delta = self.positions[self.seg_nodes[:, 1]] - self.positions[self.seg_nodes[:, 0]]
            self.lengths = np.linalg.norm(delta, axis=1)
            if np.any(self.lengths <= 0):
                bad = int(np.argmin(self.lengths))
                raise ConfigError(f"segment {bad}: zero length (coincident nodes)")
            self.tangents = delta / self.lengths[:, None]
            self.viscosities = viscosity_in_vivo(2.0 * self.radii, self.hematocrit)
        else:
            self.lengths = np.zeros(0)
            self.tangents = np.zeros((0, 3))
            self.viscosities = np.zeros(0)
        for s, length, mu in zip(self.segments, self.lengths, self.viscosities):
            s.length = float(length)
            s.viscosity = float(mu)

        if partition is not None:
            partition = np.asarray(partition)
            if partition.shape != (self.n_segments,):
                raise ConfigError("partition must label every segment exactly once")
            if not np.all(np.isin(partition, [LARGE, SMALL])):
                raise ConfigError("partition labels must be 'large' or 'small'")
        self.partition = partition

        self.tip_class: Optional[dict] = None  # node id -> 'hull' | 'interior'
        self._degree = np.zeros(self.n_nodes, dtype=int)
        if self.n_segments:
            np.add.at(self._degree, self.seg_nodes[:, 0], 1)
            np.add.at(self._degree, self.seg_nodes[:, 1], 1)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def conductances(self) -> np.ndarray:
        """Hagen-Poiseuille conductance pi R^4 / (8 mu L) per segment, um^3/(Pa*s)."""
        return np.pi * self.radii**4 / (8.0 * self.viscosities * self.lengths)

    def tips(self) -> np.ndarray:
        """Node ids of degree-1 nodes."""
        return np.flatnonzero(self._degree == 1)

    def degree(self) -> np.ndarray:
        return self._degree.copy()

    def adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        if not self.n_segments:
            return sp.csr_matrix((n, n))
        a, b = self.seg_nodes[:, 0], self.seg_nodes[:, 1]
        data = np.ones(len(a))
        m = sp.coo_matrix((data, (a, b)), shape=(n, n))
        return (m + m.T).tocsr()

    def connected_components(self):
        """(n_components, label per node)."""
        return csgraph.connected_components(self.adjacency(), directed=False)

    def pressure_bc(self) -> dict:
        """node id -> prescribed pressure (Pa)."""
        return {n.id: n.bc_value for n in self.nodes if n.bc_type == BC_PRESSURE}

    def node_set(self, label: str) -> np.ndarray:
        """Node ids incident to at least one segment with the given label."""
        if self.partition is None:
            raise ConfigError("network has no partition")
        mask = self.partition == label
        return np.unique(self.seg_nodes[mask].ravel())

    def segment_ids(self, label: str) -> np.ndarray:
        if self.partition is None:
            raise ConfigError("network has no partition")
        return np.flatnonzero(self.partition == label)

    def with_partition(self, labels: np.ndarray) -> "VesselNetwork":
        net = VesselNetwork(self.nodes, self.segments, partition=labels,
                            hematocrit=self.hematocrit)
        net.tip_class = self.tip_class
        return net

    def with_bcs(self, bc_type: dict, bc_value: dict) -> "VesselNetwork":
        """Copy of the network with per-node BCs replaced by the given maps."""
        nodes = [VesselNode(n.id, n.position.copy(),
                            bc_type.get(n.id, BC_NONE), bc_value.get(n.id, 0.0))
                 for n in self.nodes]
        segs = [VesselSegment(s.id, s.node_a, s.node_b, s.radius) for s in self.segments]
        net = VesselNetwork(nodes, segs, partition=self.partition,
                            hematocrit=self.hematocrit)
        net.tip_class = self.tip_class
        return net

    def subnetwork(self, segment_ids: np.ndarray):
        """Renumbered network restricted to the given segments.

        Returns (network, orig_node_ids, orig_segment_ids); BCs are carried
        over, the partition is dropped.
        """
        segment_ids = np.sort(np.asarray(segment_ids, dtype=int))
        conn = self.seg_nodes[segment_ids]
        orig_node_ids = np.unique(conn.ravel())
        remap = {int(o): i for i, o in enumerate(orig_node_ids)}
        nodes = [VesselNode(remap[int(o)], self.nodes[int(o)].position.copy(),
                            self.nodes[int(o)].bc_type, self.nodes[int(o)].bc_value)
                 for o in orig_node_ids]
        segs = [VesselSegment(k, remap[int(a)], remap[int(b)], self.radii[sid])
                for k, (sid, (a, b)) in enumerate(zip(segment_ids, conn))]
        net = VesselNetwork(nodes, segs, hematocrit=self.hematocrit)
        if self.tip_class is not None:
            net.tip_class = {remap[int(o)]: self.tip_class[int(o)]
                             for o in orig_node_ids if int(o) in self.tip_class}
        return net, orig_node_ids, segment_ids


def segment_conductance(segment: VesselSegment) -> float:
    """Hagen-Poiseuille conductance of one segment, um^3/(Pa*s)."""
    if segment.length <= 0 or segment.viscosity <= 0:
        raise ConfigError("segment has no derived length/viscosity; "
                          "construct it through a VesselNetwork")
    return math.pi * segment.radius**4 / (8.0 * segment.viscosity * segment.length)


@dataclass
class NetworkSolution:
    """Nodal pressures and per-segment flows of a pure 1D Kirchhoff solve."""

    pressures: np.ndarray  # (n_nodes,) Pa
    segment_flow: np.ndarray  # (n_segments,) um^3/s, positive from node_a to node_b


def network_laplacian(network: VesselNetwork) -> sp.csr_matrix:
    """Conductance-weighted graph Laplacian of the network."""
    n = network.n_nodes
    k = network.conductances()
    a, b = network.seg_nodes[:, 0], network.seg_nodes[:, 1]
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([k, k, -k, -k])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def solve_network_poiseuille(network: VesselNetwork) -> NetworkSolution:
    """Solve nodal pressures from pressure BCs and conductances.

    Every connected component must carry at least one pressure BC; nodes with
    no BC (including no-flux tips) obey flow conservation.
    """
    bc = network.pressure_bc()
    n_comp, labels = network.connected_components()
    has_bc = np.zeros(n_comp, dtype=bool)
    for node_id in bc:
        has_bc[labels[node_id]] = True
    for c in range(n_comp):
        if not has_bc[c]:
            members = np.flatnonzero(labels == c)[:5]
            raise NumericError(
                f"connected component {c} (nodes {members.tolist()}...) has no "
                "pressure boundary condition; the system is singular")

    lap = network_laplacian(network).tolil()
    rhs = np.zeros(network.n_nodes)
    fixed = sorted(bc)
    vals = np.array([bc[i] for i in fixed])
    free = np.setdiff1d(np.arange(network.n_nodes), fixed)
    a_ff = lap[np.ix_(free, free)].tocsr()
    rhs_f = rhs[free] - lap[np.ix_(free, fixed)].tocsr() @ vals
    p = np.zeros(network.n_nodes)
    p[fixed] = vals
    if free.size:
        p[free] = spla.spsolve(a_ff.tocsc(), rhs_f)
    k = network.conductances()
    q = k * (p[network.seg_nodes[:, 0]] - p[network.seg_nodes[:, 1]])
    return NetworkSolution(pressures=p, segment_flow=q)


def _segment_flows(flows) -> np.ndarray:
    if hasattr(flows, "segment_flow"):
        return np.asarray(flows.segment_flow, dtype=float)
    return np.asarray(flows, dtype=float)


def partition_by_flow(network: VesselNetwork, flows, keep_fraction: float,
                      min_component_length: float = 250.0) -> VesselNetwork:
    """Label the top keep_fraction of segments by |Q| as large, then demote
    connected large components shorter than min_component_length (um).

    Ties in |Q| break by ascending segment id so results are platform-stable.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    q = np.abs(_segment_flows(flows))
    if q.shape != (network.n_segments,):
        raise ConfigError("flows do not match the network segment count")
    m = network.n_segments
    n_keep = min(m, int(round(keep_fraction * m)))
    order = np.lexsort((np.arange(m), -q))  # by -|Q|, ties by id ascending
    labels = np.full(m, SMALL, dtype="<U5")
    large_ids = order[:n_keep]
    labels[large_ids] = LARGE

    # demote small isolated islands of the large subgraph
    if n_keep:
        conn = network.seg_nodes[large_ids]
        used_nodes, inv = np.unique(conn.ravel(), return_inverse=True)
        inv = inv.reshape(-1, 2)
        n_used = used_nodes.size
        adj = sp.coo_matrix((np.ones(len(inv)), (inv[:, 0], inv[:, 1])),
                            shape=(n_used, n_used))
        n_comp, comp = csgraph.connected_components(adj + adj.T, directed=False)
        seg_comp = comp[inv[:, 0]]
        comp_len = np.zeros(n_comp)
        np.add.at(comp_len, seg_comp, network.lengths[large_ids])
        demote = comp_len[seg_comp] < min_component_length
        labels[large_ids[demote]] = SMALL

    return network.with_partition(labels)


@dataclass
class ConnectivityStats:
    """Connectivity between the large and small vessel subsets.

    phi is the fraction of large-vessel nodes shared with the small subset;
    the CVs are coefficients of variation of diameter and |Q| over the
    connecting elements (None when there are no connecting elements).
    """

    phi: float
    cv_diameter: Optional[float]
    cv_abs_flow: Optional[float]
    n_connecting: int


def connecting_elements(network: VesselNetwork) -> np.ndarray:
    """Small segments with one node in the large set and one outside it."""
    large_nodes = set(network.node_set(LARGE).tolist())
    out = []
    for sid in network.segment_ids(SMALL):
        a, b = network.seg_nodes[sid]
        if (int(a) in large_nodes) != (int(b) in large_nodes):
            out.append(sid)
    return np.array(out, dtype=int)


def connectivity_stats(network: VesselNetwork, flows) -> ConnectivityStats:
    """Interface statistics between the partitioned subsets."""
    large_nodes = network.node_set(LARGE)
    if large_nodes.size == 0:
        return ConnectivityStats(0.0, None, None, 0)
    small_nodes = set(network.node_set(SMALL).tolist())
    shared = sum(1 for i in large_nodes if int(i) in small_nodes)
    phi = shared / large_nodes.size

    conn = connecting_elements(network)
    if conn.size == 0:
        return ConnectivityStats(phi, None, None, 0)
    q = np.abs(_segment_flows(flows)[conn])
    d = 2.0 * network.radii[conn]

    def cv(x):
        m = x.mean()
        return float(x.std() / m) if m > 0 else None

    return ConnectivityStats(phi, cv(d), cv(q), int(conn.size))


@dataclass
class NetworkStats:
    """Whole-network geometric summary against a reference tissue volume."""

    n_segments: int
    n_nodes: int
    volume_fraction: float
    surface_to_volume: float  # 1/um
    mean_diameter: float
    std_diameter: float
    mean_length: float
    std_length: float
    n_boundary_nodes_hull: int
    n_boundary_nodes_interior: int


def classify_tips(network: VesselNetwork, box, threshold: Optional[float] = None) -> dict:
    """Classify degree-1 nodes as hull or interior tips.

    A tip is a hull tip when its distance to the box boundary is below the
    threshold (default: one mean segment length). The result is attached to
    the network (tip_class) and returned.
    """
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    if threshold is None:
        threshold = float(network.lengths.mean()) if network.n_segments else 0.0
    tips = network.tips()
    out = {}
    for t in tips:
        p = network.positions[t]
        dist = float(min(np.min(p - lo), np.min(hi - p)))
        out[int(t)] = "hull" if dist < threshold else "interior"
    network.tip_class = out
    return out


def network_stats(network: VesselNetwork, domain_volume: float,
                  box=None, hull_threshold: Optional[float] = None) -> NetworkStats:
    """Volume fraction, surface density, size statistics and tip counts."""
    if not domain_volume > 0:
        raise ConfigError("domain volume must be positive")
    if network.n_segments == 0:
        return NetworkStats(0, network.n_nodes, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0)
    vol = float(np.sum(np.pi * network.radii**2 * network.lengths))
    surf = float(np.sum(2.0 * np.pi * network.radii * network.lengths))
    d = 2.0 * network.radii
    n_hull = n_int = 0
    if box is not None:
        cls = classify_tips(network, box, hull_threshold)
        n_hull = sum(1 for v in cls.values() if v == "hull")
        n_int = len(cls) - n_hull
    elif network.tip_class is not None:
        n_hull = sum(1 for v in network.tip_class.values() if v == "hull")
        n_int = len(network.tip_class) - n_hull
    return NetworkStats(
        n_segments=network.n_segments,
        n_nodes=network.n_nodes,
        volume_fraction=vol / domain_volume,
        surface_to_volume=surf / domain_volume,
        mean_diameter=float(d.mean()),
        std_diameter=float(d.std()),
        mean_length=float(network.lengths.mean()),
        std_length=float(network.lengths.std()),
        n_boundary_nodes_hull=n_hull,
        n_boundary_nodes_interior=n_int,
    )


# ---------------------------------------------------------------------------
# CSV import/export: nodes.csv (id,x,y,z,bc_type,bc_value) and
# segments.csv (id,node_a,node_b,radius). Floats use shortest round-trip repr
# so that export -> import -> export is byte-identical.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_network(network: VesselNetwork, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "x", "y", "z", "bc_type", "bc_value"])
    for n in network.nodes:
        val = _fmt(n.bc_value) if n.bc_type == BC_PRESSURE else ""
        w.writerow([n.id, _fmt(n.position[0]), _fmt(n.position[1]),
                    _fmt(n.position[2]), n.bc_type, val])
    with open(os.path.join(directory, "nodes.csv"), "w", encoding="utf-8") as f:
        f.write(buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "node_a", "node_b", "radius"])
    for s in network.segments:
        w.writerow([s.id, s.node_a, s.node_b, _fmt(s.radius)])
    with open(os.path.join(directory, "segments.csv"), "w", encoding="utf-8") as f:
        f.write(buf.getvalue())


def load_network(directory: str, hematocrit: float = 0.45) -> VesselNetwork:
    nodes = []
    with open(os.path.join(directory, "nodes.csv"), encoding="utf-8") as f:
        for row in csv.DictReader(f):
            bc_type = row["bc_type"]
            bc_value = float(row["bc_value"]) if row["bc_value"] else 0.0
            nodes.append(VesselNode(int(row["id"]),
                                    np.array([float(row["x"]), float(row["y"]),
                                              float(row["z"])]),
                                    bc_type, bc_value))
    segments = []
    with open(os.path.join(directory, "segments.csv"), encoding="utf-8") as f:
        for row in csv.DictReader(f):
            segments.append(VesselSegment(int(row["id"]), int(row["node_a"]),
                                          int(row["node_b"]), float(row["radius"])))
    return VesselNetwork(nodes, segments, hematocrit=hematocrit)


def save_partition(network: VesselNetwork, path: str) -> None:
    if network.partition is None:
        raise ConfigError("network has no partition to save")
    with open(path, "w", encoding="utf-8") as f:
        f.write("segment,label\n")
        for sid, lab in enumerate(network.partition):
            f.write(f"{sid},{lab}\n")


def load_partition(network: VesselNetwork, path: str) -> VesselNetwork:
    labels = np.full(network.n_segments, SMALL, dtype="<U5")
    with open(path, encoding="utf-8") as f:
        for row in csv.DictReader(f):
            labels[int(row["segment"])] = row["label"]
    return network.with_partition(labels)
