"""Deterministic synthetic vascular networks: cubic lattices, randomized
branching trees, and two-scale lattices with a coarse high-radius backbone.

Lattice edges lying inside a bounding-box face are omitted, so face nodes
are degree-1 hull tips; optional interior stubs create dead ends. All
generators are pure functions of (config, seed).
"""

import math
from typing import Optional

import numpy as np

from vasoperf.errors import ConfigError
from vasoperf.network import VesselNetwork, VesselNode, VesselSegment


def _validate_box(box):
    box = np.asarray(box, dtype=float)
    if box.shape != (3,) or np.any(box <= 0):
        raise ConfigError(f"box must be three positive extents, got {box}")
    return box


def lattice_volume_fraction(pitch: float, radius: float) -> float:
    """Interior-cell volume fraction of a cubic lattice: 3 pi R^2 / a^2."""
    return 3.0 * math.pi * radius**2 / pitch**2


def generate_lattice(box, pitch: float, radius: float, seed: int = 0,
                     radius_sigma: float = 0.0, n_stubs: int = 0,
                     stub_length: Optional[float] = None,
                     stub_radius: Optional[float] = None,
                     backbone_every: int = 0, backbone_radius: float = 0.0,
                     max_segment_length: Optional[float] = 30.0,
                     trim_faces: bool = True):
    """Cubic lattice network inside `box` (extents in um, origin corner at 0).

    With trim_faces (default) the edges lying within a boundary face are
    omitted so face nodes carry exactly one inward edge and act as hull tips;
    grid points on box edges and corners are dropped. trim_faces=False keeps
    the complete lattice (uniform density up to the hull; no degree-1 tips).
    With backbone_every = k > 0, every k-th interior lattice line per
    direction is widened to backbone_radius, forming a connected coarse
    backbone (two-scale variant). n_stubs dangling interior segments are
    attached at random interior nodes. radius_sigma applies lognormal jitter
    to small-vessel radii.

    Returns (network, meta) where meta records which segments are backbone.
    """
    box = _validate_box(box)
    if not pitch > 0:
        raise ConfigError(f"pitch must be positive, got {pitch}")
    n = np.floor(box / pitch + 1e-9).astype(int)
    if np.any(n < 2):
        raise ConfigError("box must span at least two lattice cells per axis")
    rng = np.random.default_rng(seed)

    def on_face(idx):
        return [idx[d] == 0 or idx[d] == n[d] for d in range(3)]

    # grid points; with face trimming, points on >= 2 faces would be isolated
    index = {}
    nodes = []
    for i in range(n[0] + 1):
        for j in range(n[1] + 1):
            for k in range(n[2] + 1):
                if trim_faces and sum(on_face((i, j, k))) >= 2:
                    continue
                index[(i, j, k)] = len(nodes)
                nodes.append(np.array([i, j, k], dtype=float) * pitch)

    edges = []  # (node_a, node_b, is_backbone)
    axes = np.eye(3, dtype=int)
    r_off = max(1, backbone_every // 2) if backbone_every else 0
    for (i, j, k), a in sorted(index.items()):
        for d in range(3):
            nb = (i + axes[d][0], j + axes[d][1], k + axes[d][2])
            if nb not in index:
                continue
            idx = (i, j, k)
            # skip edges lying inside a face: some transverse axis is extreme
            if trim_faces and any(idx[t] in (0, n[t]) for t in range(3) if t != d):
                continue
            backbone = bool(backbone_every) and all(
                idx[t] % backbone_every == r_off and 1 <= idx[t] <= n[t] - 1
                for t in range(3) if t != d)
            edges.append((a, index[nb], backbone))

    radii = np.full(len(edges), float(radius))
    if backbone_every:
        if not backbone_radius > 0:
            raise ConfigError("backbone_radius must be positive with backbone_every set")
        bb = np.array([e[2] for e in edges])
        radii[bb] = backbone_radius
    if radius_sigma > 0:
        small = np.array([not e[2] for e in edges])
        radii[small] *= np.exp(rng.normal(0.0, radius_sigma, small.sum()))

    vnodes = [VesselNode(i, p) for i, p in enumerate(nodes)]
    vsegs = [VesselSegment(sid, a, b, r)
             for sid, ((a, b, _), r) in enumerate(zip(edges, radii))]
    backbone_ids = [sid for sid, e in enumerate(edges) if e[2]]

    # dangling interior stubs (tumor-like dead ends); bases sit at least two
    # layers from the hull so stub tips classify as interior
    if n_stubs:
        interior = [idx for idx in index
                    if all(2 <= idx[d] <= n[d] - 2 for d in range(3))]
        if not interior:
            interior = [idx for idx in index
                        if all(1 <= idx[d] <= n[d] - 1 for d in range(3))]
        if not interior:
            raise ConfigError("no interior nodes available for stubs")
        slen = stub_length if stub_length is not None else 0.45 * pitch
        srad = stub_radius if stub_radius is not None else float(radius)
        picks = rng.choice(len(interior), size=n_stubs, replace=True)
        for p in picks:
            base = index[interior[p]]
            while True:
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                pos = vnodes[base].position + slen * direction
                if np.all(pos > 0) and np.all(pos < box):
                    break
            nid = len(vnodes)
            vnodes.append(VesselNode(nid, pos))
            vsegs.append(VesselSegment(len(vsegs), base, nid, srad))

    net = VesselNetwork(vnodes, vsegs)
    if max_segment_length is not None:
        keep = set(backbone_ids)
        net, seg_map = subdivide_segments(net, max_segment_length)
        backbone_ids = [new for new, old in enumerate(seg_map) if old in keep]
    return net, {"backbone_segments": np.array(backbone_ids, dtype=int),
                 "cells": n, "pitch": pitch}


def generate_tree(box, root_radius: float, levels: int = 5, taper: float = 0.8,
                  branch_length: float = 120.0, spread_deg: float = 35.0,
                  seed: int = 0, max_segment_length: Optional[float] = 30.0):
    """Randomized bifurcating tree growing from the center of the x=0 face.

    Child radius = taper * parent radius; branches leaving the box are
    discarded. Returns (network, meta).
    """
    box = _validate_box(box)
    if not 0 < taper <= 1:
        raise ConfigError(f"taper must lie in (0, 1], got {taper}")
    rng = np.random.default_rng(seed)
    nodes = [np.array([0.0, box[1] / 2, box[2] / 2])]
    edges = []

    def rotate_towards(direction, rng):
        # jitter direction within the spread cone
        ang = math.radians(spread_deg)
        axis = rng.normal(size=3)
        axis -= axis.dot(direction) * direction
        nrm = np.linalg.norm(axis)
        if nrm < 1e-12:
            return direction
        axis /= nrm
        theta = rng.uniform(0.3 * ang, ang)
        return math.cos(theta) * direction + math.sin(theta) * axis

    frontier = [(0, np.array([1.0, 0.0, 0.0]), float(root_radius))]
    for _ in range(levels):
        nxt = []
        for nid, direction, rad in frontier:
            for _ in range(2):
                d = rotate_towards(direction, rng)
                d /= np.linalg.norm(d)
                pos = nodes[nid] + branch_length * d
                if np.any(pos < 0) or np.any(pos > box):
                    continue
                nodes.append(pos)
                child = len(nodes) - 1
                edges.append((nid, child, rad * taper))
                nxt.append((child, d, rad * taper))
        frontier = nxt
        if not frontier:
            break

    if not edges:
        raise ConfigError("tree generation produced no segments; enlarge the box")
    vnodes = [VesselNode(i, p) for i, p in enumerate(nodes)]
    vsegs = [VesselSegment(i, a, b, r) for i, (a, b, r) in enumerate(edges)]
    net = VesselNetwork(vnodes, vsegs)
    if max_segment_length is not None:
        net, _ = subdivide_segments(net, max_segment_length)
    return net, {"levels": levels}


def subdivide_segments(network: VesselNetwork, max_length: float):
    """Split segments longer than max_length into equal collinear pieces.

    Returns (network, seg_map) where seg_map[i] is the original segment id of
    new segment i. Boundary conditions are preserved on original nodes.
    """
    if not max_length > 0:
        raise ConfigError("max_length must be positive")
    nodes = [VesselNode(n.id, n.position.copy(), n.bc_type, n.bc_value)
             for n in network.nodes]
    segs = []
    seg_map = []
    for s in network.segments:
        parts = max(1, math.ceil(s.length / max_length - 1e-12))
        pa = network.positions[s.node_a]
        pb = network.positions[s.node_b]
        prev = s.node_a
        for p in range(1, parts):
            pos = pa + (pb - pa) * (p / parts)
            nid = len(nodes)
            nodes.append(VesselNode(nid, pos))
            segs.append(VesselSegment(len(segs), prev, nid, s.radius))
            seg_map.append(s.id)
            prev = nid
        segs.append(VesselSegment(len(segs), prev, s.node_b, s.radius))
        seg_map.append(s.id)
    return VesselNetwork(nodes, segs, hematocrit=network.hematocrit), np.array(seg_map)


def generate_synthetic_network(config: dict, seed: int):
    """Dispatch on config['kind'] in {lattice, two_scale, tree}.

    Deterministic for fixed (config, seed); returns (network, meta).
    """
    cfg = dict(config)
    kind = cfg.pop("kind", None)
    if kind == "lattice":
        return generate_lattice(seed=seed, **cfg)
    if kind == "two_scale":
        cfg.setdefault("backbone_every", 3)
        if not cfg.get("backbone_every"):
            raise ConfigError("two_scale networks need backbone_every > 0")
        return generate_lattice(seed=seed, **cfg)
    if kind == "tree":
        return generate_tree(seed=seed, **cfg)
    raise ConfigError(f"unknown network kind {kind!r}")
