"""Shared synthetic test cases.

The two-scale case is the workhorse: a capillary lattice with a widened
coarse backbone, dead-end stubs, the stochastic BC pipeline, a full-model
reference solve, flow-based partition and hybrid BC transfer. Everything is
deterministic for the fixed seeds used here.
"""

from dataclasses import dataclass

import numpy as np

from vasoperf.boundary import (BcConfig, assign_boundary_conditions,
                               optimize_unknown_boundaries)
from vasoperf.calibration import CalibrationCase
from vasoperf.fullmodel import FullSolution, assemble_full_system, solve_full
from vasoperf.generators import generate_lattice
from vasoperf.hybrid import (HybridModel, HybridSolution,
                             solve_hybrid_auto, transfer_boundary_conditions)
from vasoperf.mesh import TissueMesh, build_box_mesh
from vasoperf.network import (LARGE, SMALL, VesselNetwork, classify_tips,
                              partition_by_flow)
from vasoperf.params import HybridParams, PhysicsParams
from vasoperf.rev import RevPartition, partition_into_revs


@dataclass
class TwoScaleCase:
    box: tuple
    network: VesselNetwork          # partitioned, with BCs
    mesh: TissueMesh
    params: PhysicsParams
    full: FullSolution
    large_net: VesselNetwork
    pv_dirichlet: dict
    orig_nodes: np.ndarray
    orig_segs: np.ndarray
    sv_geom: float
    hybrid0: HybridSolution          # at the initial guess, auto penalty
    penalty: float
    rev: RevPartition
    meta: dict

    def calibration_case(self, weights=(0.25, 0.25, 0.25, 0.25)) -> CalibrationCase:
        base = HybridParams(kv_over_mu=8.0, sv_ratio=self.sv_geom,
                            penalty=self.penalty, smearing_radius=50.0)
        return CalibrationCase(network=self.network, large_net=self.large_net,
                               orig_node_ids=self.orig_nodes, mesh=self.mesh,
                               pv_dirichlet=self.pv_dirichlet,
                               full_solution=self.full, rev_partition=self.rev,
                               params=self.params, base_hybrid=base,
                               weights=weights)


def geometric_sv(network: VesselNetwork, volume: float) -> float:
    ids = network.segment_ids(SMALL)
    return float(np.sum(2.0 * np.pi * network.radii[ids]
                        * network.lengths[ids]) / volume)


def build_two_scale_case(seed: int = 7, uniform: bool = False,
                         resolution: int = 10) -> TwoScaleCase:
    """Backbone-plus-lattice network in a 420 um box with paper physics.

    uniform=True drops the dead-end stubs, skips the no-flux step and labels
    exactly the backbone as large, which makes the per-REV small-vessel
    volume fraction uniform (used by the permeability-law equivalence tests).
    """
    edge = 420.0
    box = (np.zeros(3), np.full(3, edge))
    net, meta = generate_lattice([edge] * 3, 60.0, 6.0, seed=1,
                                 backbone_every=3, backbone_radius=32.0,
                                 n_stubs=0 if uniform else 170,
                                 max_segment_length=60.0)
    classify_tips(net, box)
    bc = BcConfig(frac_noflux=0.0) if uniform else BcConfig()
    net = assign_boundary_conditions(net, seed, bc)
    net = optimize_unknown_boundaries(net)
    mesh = build_box_mesh(box[0], box[1], resolution, enlargement=3.0,
                          grading=1.5)
    params = PhysicsParams()
    full = solve_full(assemble_full_system(net, mesh, params))
    if uniform:
        labels = np.full(net.n_segments, SMALL, dtype="<U5")
        labels[meta["backbone_segments"]] = LARGE
        pnet = net.with_partition(labels)
    else:
        pnet = partition_by_flow(net, full, 0.10, 250.0)
    large_net, pvd, onodes, osegs = transfer_boundary_conditions(pnet, mesh, 50.0)
    sv_geom = geometric_sv(pnet, edge**3)
    hp = HybridParams(kv_over_mu=8.0, sv_ratio=sv_geom, penalty=100.0,
                      smearing_radius=50.0)
    model = HybridModel(large_net, mesh, params, hp, pv_dirichlet=pvd)
    hsol, _ = solve_hybrid_auto(model, initial_penalty=100.0)
    rev = partition_into_revs(box, 210.0, pnet)
    return TwoScaleCase(box=box, network=pnet, mesh=mesh, params=params,
                        full=full, large_net=large_net, pv_dirichlet=pvd,
                        orig_nodes=onodes, orig_segs=osegs, sv_geom=sv_geom,
                        hybrid0=hsol, penalty=hsol.penalty, rev=rev, meta=meta)


def build_farfield_network():
    """Untrimmed lattice with direct hull pressure BCs for domain-enlargement
    insensitivity checks (uniform vessel density up to the hull)."""
    edge, pitch = 600.0, 60.0
    net, _ = generate_lattice([edge] * 3, pitch, 6.0, seed=3,
                              max_segment_length=60.0, trim_faces=False)
    rng = np.random.default_rng(11)
    on_face = np.flatnonzero(
        np.any((net.positions < 1e-9) | (net.positions > edge - 1e-9), axis=1))
    pick = rng.choice(on_face, size=40, replace=False)
    bc_t, bc_v = {}, {}
    for i, node in enumerate(pick):
        bc_t[int(node)] = "pressure"
        bc_v[int(node)] = 5999.4 if i % 2 == 0 else 1999.8
    return net.with_bcs(bc_t, bc_v), edge


def build_rev_lattice():
    """Plain lattice, all segments small, for REV growth/partition checks."""
    pitch = 60.0
    edge = 23 * pitch
    net, _ = generate_lattice([edge] * 3, pitch, 6.0, seed=2,
                              max_segment_length=None)
    net = net.with_partition(np.full(net.n_segments, SMALL, dtype="<U5"))
    inset = (np.full(3, pitch / 2), np.full(3, edge - pitch / 2))
    return net, pitch, edge, inset
