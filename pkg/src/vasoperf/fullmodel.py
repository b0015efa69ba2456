"""Fully-resolved 1D-3D perfusion model: Poiseuille flow in the vessel graph,
Darcy flow in the interstitium, and transvascular exchange concentrated on
the vessel centerlines.

Unknown ordering: [vessel nodal pressures | interstitial nodal pressures].
"""

import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from vasoperf import fem
from vasoperf.coupling import IntegrationSegment, assemble_line_exchange, build_segments
from vasoperf.errors import NumericError
from vasoperf.linsolve import apply_dirichlet, solve_checked
from vasoperf.mesh import TissueMesh
from vasoperf.network import VesselNetwork, network_laplacian
from vasoperf.params import PhysicsParams


def starling_flux_per_length(p_vessel, p_if, radius, params: PhysicsParams):
    """Transvascular volumetric flux per unit vessel length, um^2/s.

    2 pi R L_p (p_vessel - p_if - sigma (pi_b - pi_l)); positive means
    filtration from the vessel into the interstitium.
    """
    r = np.asarray(radius, dtype=float)
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    return 2.0 * np.pi * r * params.lp_vessel * (
        np.asarray(p_vessel, dtype=float) - np.asarray(p_if, dtype=float)
        - params.oncotic_jump)


@dataclass
class FullSystem:
    """Assembled block system of the fully-resolved model."""

    matrix: sp.csr_matrix          # with Dirichlet rows eliminated
    rhs: np.ndarray
    matrix_raw: sp.csr_matrix      # before boundary conditions (for reactions)
    rhs_raw: np.ndarray
    network: VesselNetwork
    mesh: TissueMesh
    segments: List[IntegrationSegment]
    params: PhysicsParams
    dirichlet_idx: np.ndarray
    dirichlet_val: np.ndarray
    pl_dirichlet_rows: np.ndarray  # rows of interstitial Dirichlet dofs

    @property
    def n_vessel(self) -> int:
        return self.network.n_nodes


@dataclass
class FullSolution:
    """Pressures, per-segment flows and leakages of a full-model solve."""

    p_vessel: np.ndarray       # (n 1D nodes,) Pa
    p_if: np.ndarray           # (n mesh nodes,) Pa
    segment_flow: np.ndarray   # (n segments,) um^3/s, node_a -> node_b positive
    segment_leakage: np.ndarray  # (n segments,) um^3/s into the interstitium
    total_leakage: float
    boundary_outflux: float    # um^3/s through the outer boundary
    residual_rel: float
    solve_seconds: float

    @property
    def mass_balance_error(self) -> float:
        scale = np.abs(self.segment_leakage).sum()
        if scale == 0:
            return abs(self.total_leakage - self.boundary_outflux)
        return abs(self.total_leakage - self.boundary_outflux) / scale


def _check_vessel_bcs(network: VesselNetwork):
    bc = network.pressure_bc()
    n_comp, labels = network.connected_components()
    seen = np.zeros(n_comp, dtype=bool)
    for node in bc:
        seen[labels[node]] = True
    missing = np.flatnonzero(~seen)
    if missing.size:
        nodes = np.flatnonzero(labels == missing[0])[:5]
        raise NumericError(
            f"network component {missing[0]} (nodes {nodes.tolist()}...) has no "
            "pressure boundary condition; assemble would be singular")


def assemble_full_system(network: VesselNetwork, mesh: TissueMesh,
                         params: PhysicsParams,
                         segments: Optional[List[IntegrationSegment]] = None) -> FullSystem:
    """Assemble the coupled two-field block system.

    With zero wall conductivity the off-diagonal blocks vanish and the two
    problems decouple; the oncotic constant enters only the right-hand side.
    """
    _check_vessel_bcs(network)
    if segments is None:
        segments = build_segments(network, mesh)
    n1 = network.n_nodes
    n3 = mesh.n_nodes

    coeff = 2.0 * np.pi * network.radii * params.lp_vessel  # per unit length
    b11, b13, b31, b33 = assemble_line_exchange(segments, network, mesh, coeff)
    ratio = params.rho_if / params.rho_blood

    k_vv = network_laplacian(network) + ratio * b11
    g_vl = -ratio * b13
    h_lv = -b31
    k_ll = fem.darcy_stiffness(mesh, params.k_if_over_mu) + b33

    dp = params.oncotic_jump
    f_v = ratio * dp * np.asarray(b11.sum(axis=1)).ravel()
    f_l = -dp * np.asarray(b33.sum(axis=1)).ravel()

    a = sp.bmat([[k_vv, g_vl], [h_lv, k_ll]], format="csr")
    b = np.concatenate([f_v, f_l])

    bc = network.pressure_bc()
    idx = [int(i) for i in sorted(bc)]
    val = [bc[i] for i in idx]
    pl_rows = []
    for node in sorted(mesh.pl_dirichlet):
        idx.append(n1 + int(node))
        val.append(mesh.pl_dirichlet[node])
        pl_rows.append(n1 + int(node))
    idx = np.array(idx, dtype=int)
    val = np.array(val, dtype=float)
    a_bc, b_bc = apply_dirichlet(a, b, idx, val)
    return FullSystem(matrix=a_bc, rhs=b_bc, matrix_raw=a, rhs_raw=b,
                      network=network, mesh=mesh, segments=segments,
                      params=params, dirichlet_idx=idx, dirichlet_val=val,
                      pl_dirichlet_rows=np.array(pl_rows, dtype=int))


def segment_leakage(network: VesselNetwork, segments: List[IntegrationSegment],
                    mesh: TissueMesh, params: PhysicsParams,
                    p_vessel: np.ndarray, p_if: np.ndarray) -> np.ndarray:
    """Per-segment transvascular volumetric flow (interstitial side), um^3/s."""
    from vasoperf.coupling import _shape_1d

    out = np.zeros(network.n_segments)
    dp = params.oncotic_jump
    for s in segments:
        nodes1 = network.seg_nodes[s.elem1d]
        c = 2.0 * np.pi * network.radii[s.elem1d] * params.lp_vessel
        pv = _shape_1d(s.gauss_xi) @ p_vessel[nodes1]
        pl = mesh.basis.values(s.gauss_host_params) @ p_if[mesh.conn[s.elem3d]]
        out[s.elem1d] += float(np.sum(s.gauss_weight * c * (pv - pl - dp)))
    return out


def solve_full(system: FullSystem) -> FullSolution:
    """Direct solve of the assembled system plus flow/leakage recovery."""
    t0 = time.perf_counter()
    x = solve_checked(system.matrix, system.rhs)
    dt = time.perf_counter() - t0
    n1 = system.n_vessel
    p_vessel = x[:n1]
    p_if = x[n1:]

    net = system.network
    k = net.conductances()
    q = k * (p_vessel[net.seg_nodes[:, 0]] - p_vessel[net.seg_nodes[:, 1]])
    leak = segment_leakage(net, system.segments, system.mesh, system.params,
                           p_vessel, p_if)

    reactions = system.matrix_raw @ x - system.rhs_raw
    outflux = -float(reactions[system.pl_dirichlet_rows].sum())

    scale = float(np.linalg.norm(system.rhs))
    res = float(np.linalg.norm(system.matrix @ x - system.rhs))
    return FullSolution(p_vessel=p_vessel, p_if=p_if, segment_flow=q,
                        segment_leakage=leak, total_leakage=float(leak.sum()),
                        boundary_outflux=outflux,
                        residual_rel=res / scale if scale > 0 else res,
                        solve_seconds=dt)


def solve_full_model(network: VesselNetwork, mesh: TissueMesh,
                     params: PhysicsParams) -> FullSolution:
    """Assemble and solve in one call."""
    return solve_full(assemble_full_system(network, mesh, params))
