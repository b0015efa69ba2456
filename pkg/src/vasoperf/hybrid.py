"""Hybrid perfusion model: resolved large vessels, homogenized small-vessel
Darcy field on the vascular subdomain, interstitial Darcy field on the whole
domain, and a mortar-penalty constraint tying the resolved and homogenized
blood pressures along the large vessels.

Unknown ordering: [large-vessel nodal pressures | interstitial pressures |
homogenized pressures on vascular-subdomain nodes]. A node-wise interleaved
ordering of the two 3D fields is an equivalent documented alternative; the
block layout is used here for clarity.
"""

import time
import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from vasoperf import fem
from vasoperf.coupling import (IntegrationSegment, MortarOperators,
                               assemble_line_exchange, assemble_mortar,
                               build_segments, recover_multipliers, weighted_gap)
from vasoperf.errors import ConfigError, NumericError
from vasoperf.fullmodel import segment_leakage
from vasoperf.linsolve import apply_dirichlet, solve_checked
from vasoperf.mesh import TAG_VASCULAR, TissueMesh
from vasoperf.network import (BC_PRESSURE, LARGE, VesselNetwork,
                              network_laplacian)
from vasoperf.params import HybridParams, PhysicsParams


def homogenized_leak(p_v, p_l, params: PhysicsParams, hybrid: HybridParams):
    """Homogenized transvascular outflow per tissue volume, 1/s.

    L_p (S/V) (p_v - p_l - sigma (pi_b - pi_l)); applies on the vascular
    subdomain only (the term is zero outside by construction). Positive means
    flow from the homogenized vessels into the interstitium.
    """
    return params.lp_homogenized * hybrid.sv_ratio * (
        np.asarray(p_v, dtype=float) - np.asarray(p_l, dtype=float)
        - params.oncotic_jump)


def transfer_boundary_conditions(network: VesselNetwork, mesh: TissueMesh,
                                 smearing_radius: float):
    """Carry full-model BCs over to the hybrid model.

    Large-vessel Dirichlet nodes keep their values on the extracted 1D
    subnetwork. Pressure values on small-vessel hull tips are smeared onto
    vascular-boundary mesh nodes within the smearing radius (mean where
    several tips are in range); nodes within the radius of any large-vessel
    end node receive no homogenized-pressure Dirichlet value to avoid
    over-constraining the mortar coupling. Interior small-vessel tip values
    are dropped. Remaining vascular-boundary nodes stay no-flux (natural).

    Returns (large subnetwork with BCs, homogenized Dirichlet dict,
    orig_node_ids, orig_segment_ids).
    """
    if network.partition is None:
        raise ConfigError("network must be partitioned before BC transfer")
    large_net, orig_nodes, orig_segs = network.subnetwork(network.segment_ids(LARGE))

    large_node_set = set(int(i) for i in orig_nodes)
    small_bc_hull = []
    for n in network.nodes:
        if n.bc_type != BC_PRESSURE or int(n.id) in large_node_set:
            continue
        if network.tip_class is not None and \
                network.tip_class.get(int(n.id)) != "hull":
            continue  # interior small-vessel values have no 3D counterpart
        small_bc_hull.append((n.position, n.bc_value))

    pv_dirichlet: dict = {}
    candidates = mesh.vascular_boundary_nodes
    if small_bc_hull and candidates.size:
        tip_pos = np.array([p for p, _ in small_bc_hull])
        tip_val = np.array([v for _, v in small_bc_hull])
        large_tips = large_net.tips()
        lt_pos = large_net.positions[large_tips] if large_tips.size else np.zeros((0, 3))
        npos = mesh.nodes[candidates]
        d_tip = np.linalg.norm(npos[:, None, :] - tip_pos[None, :, :], axis=2)
        in_range = d_tip < smearing_radius
        if lt_pos.shape[0]:
            d_lt = np.linalg.norm(npos[:, None, :] - lt_pos[None, :, :], axis=2)
            masked = (d_lt < smearing_radius).any(axis=1)
        else:
            masked = np.zeros(len(candidates), dtype=bool)
        for i, node in enumerate(candidates):
            if masked[i] or not in_range[i].any():
                continue
            pv_dirichlet[int(node)] = float(tip_val[in_range[i]].mean())
    return large_net, pv_dirichlet, orig_nodes, orig_segs


@dataclass
class HybridSystem:
    """Assembled penalty-regularized block system of the hybrid model."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    matrix_raw: sp.csr_matrix
    rhs_raw: np.ndarray
    network: VesselNetwork            # large-vessel subnetwork
    mesh: TissueMesh
    segments: List[IntegrationSegment]
    mortar: MortarOperators
    params: PhysicsParams
    hybrid_params: HybridParams
    penalty: float
    pv_dirichlet: dict
    pl_dirichlet_rows: np.ndarray
    blocks: dict                      # named sub-blocks for inspection/tests

    @property
    def n_vessel(self) -> int:
        return self.network.n_nodes

    @property
    def n_if(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_hom(self) -> int:
        return self.mesh.n_vnodes


@dataclass
class HybridSolution:
    """Pressures, multipliers and diagnostics of a hybrid solve."""

    p_vessel: np.ndarray       # large-vessel nodal pressures, Pa
    p_if: np.ndarray           # interstitial pressures on all mesh nodes, Pa
    p_hom: np.ndarray          # homogenized pressures on vascular nodes, Pa
    lam: np.ndarray            # multipliers, um^2/s (flow per length, 1D -> hom)
    gap: np.ndarray            # weighted pressure gap D p_vessel - M p_hom
    delta: float               # mean relative pressure error of the constraint
    penalty: float
    segment_leakage: np.ndarray
    homogenized_leak_total: float
    vessel_to_hom_flow: float  # int lambda ds over the large vessels
    boundary_outflux: float
    residual_rel: float
    solve_seconds: float

    @property
    def total_leakage(self) -> float:
        return float(self.segment_leakage.sum() + self.homogenized_leak_total)

    @property
    def mass_balance_error(self) -> float:
        scale = float(np.abs(self.segment_leakage).sum()
                      + abs(self.homogenized_leak_total))
        err = abs(self.total_leakage - self.boundary_outflux)
        return err / scale if scale > 0 else err


class HybridModel:
    """Precomputed penalty-independent parts of the hybrid system.

    Building the model once and varying only the penalty (or the homogenized
    permeability) keeps repeated assembly cheap during auto-penalty selection
    and calibration.
    """

    def __init__(self, large_network: VesselNetwork, mesh: TissueMesh,
                 params: PhysicsParams, hybrid_params: HybridParams,
                 pv_dirichlet: Optional[dict] = None,
                 segments: Optional[List[IntegrationSegment]] = None,
                 shared: Optional["HybridModel"] = None):
        self.network = large_network
        self.mesh = mesh
        self.params = params
        self.hybrid_params = hybrid_params
        self.pv_dirichlet = dict(pv_dirichlet if pv_dirichlet is not None
                                 else mesh.pv_dirichlet)
        p, h = params, hybrid_params
        ratio = p.rho_if / p.rho_blood

        if shared is not None:
            # reuse every block that does not depend on (kv, sv)
            self.segments = shared.segments
            self.mortar = shared.mortar
            self._line = shared._line
            self._vasc_elements = shared._vasc_elements
            self._v_unit = shared._v_unit
            self._load_unit = shared._load_unit
            self._k_vessel = shared._k_vessel
            self._g_vl = shared._g_vl
            self._h_lv = shared._h_lv
            self._k_ll_base = shared._k_ll_base
            self._f_vessel = shared._f_vessel
            self._f_l_base = shared._f_l_base
        else:
            if segments is None:
                segments = build_segments(large_network, mesh,
                                          restrict_tag=TAG_VASCULAR)
            self.segments = segments
            self.mortar = assemble_mortar(segments, large_network, mesh)
            coeff = 2.0 * np.pi * large_network.radii * p.lp_vessel
            self._line = assemble_line_exchange(segments, large_network,
                                                mesh, coeff)
            b11, b13, b31, b33 = self._line
            vasc = np.flatnonzero(mesh.tag == TAG_VASCULAR)
            self._vasc_elements = vasc
            vmap = mesh.vnode_index
            cunit = p.lp_homogenized  # per unit wall area density
            self._v_unit = (
                fem.volume_mass(mesh, cunit, elements=vasc),
                fem.volume_mass(mesh, cunit, elements=vasc,
                                col_map=vmap, n_cols=mesh.n_vnodes),
                fem.volume_mass(mesh, cunit, elements=vasc,
                                row_map=vmap, col_map=vmap,
                                n_rows=mesh.n_vnodes, n_cols=mesh.n_vnodes))
            self._load_unit = (
                fem.volume_load(mesh, cunit, elements=vasc),
                fem.volume_load(mesh, cunit, elements=vasc,
                                index_map=vmap, n=mesh.n_vnodes))
            self._k_vessel = network_laplacian(large_network) + ratio * b11
            self._g_vl = -ratio * b13
            self._h_lv = -b31
            self._k_ll_base = fem.darcy_stiffness(mesh, p.k_if_over_mu) + b33
            dp = p.oncotic_jump
            self._f_vessel = ratio * dp * np.asarray(b11.sum(axis=1)).ravel()
            self._f_l_base = -dp * np.asarray(b33.sum(axis=1)).ravel()

        b11, b13, b31, b33 = self._line
        vasc = self._vasc_elements
        vmap = mesh.vnode_index
        sv = h.sv_ratio
        self._v_ll = sv * self._v_unit[0]
        self._v_lv = sv * self._v_unit[1]
        self._v_vv = sv * self._v_unit[2]
        self._load_l = sv * self._load_unit[0]
        self._load_v = sv * self._load_unit[1]
        self._k_ll = self._k_ll_base + self._v_ll
        kv = np.asarray(h.kv_over_mu, dtype=float)
        kv_e = kv[vasc] if kv.ndim else kv
        self._k_hom = (fem.darcy_stiffness(mesh, kv_e, elements=vasc,
                                           row_map=vmap, col_map=vmap,
                                           n_rows=mesh.n_vnodes,
                                           n_cols=mesh.n_vnodes)
                       + ratio * self._v_vv)
        self._l_vl = -ratio * self._v_lv.T.tocsr()
        dp = p.oncotic_jump
        self._f_l = self._f_l_base - dp * self._load_l
        self._f_v = ratio * dp * self._load_v

    def variant(self, kv_over_mu, sv_ratio: float) -> "HybridModel":
        """Cheap re-parametrization reusing all geometry-dependent blocks."""
        hp = self.hybrid_params.replace(kv_over_mu=kv_over_mu,
                                        sv_ratio=sv_ratio)
        return HybridModel(self.network, self.mesh, self.params, hp,
                           pv_dirichlet=self.pv_dirichlet, shared=self)

    def system(self, penalty: float) -> HybridSystem:
        """Assemble the block matrix for a given penalty parameter."""
        if penalty < 0:
            raise ConfigError("penalty must be non-negative")
        ops = self.mortar
        kinv = sp.diags(1.0 / np.where(ops.kappa > 0, ops.kappa, 1.0))
        pen_dd = penalty * (ops.D.T @ kinv @ ops.D)
        pen_dm = penalty * (ops.D.T @ kinv @ ops.M)
        pen_md = penalty * (ops.M.T @ kinv @ ops.D)
        pen_mm = penalty * (ops.M.T @ kinv @ ops.M)

        a = sp.bmat([
            [self._k_vessel + pen_dd, self._g_vl, -pen_dm],
            [self._h_lv, self._k_ll, -self._v_lv],
            [-pen_md, self._l_vl, self._k_hom + pen_mm],
        ], format="csr")
        b = np.concatenate([self._f_vessel, self._f_l, self._f_v])

        n1, n3 = self.network.n_nodes, self.mesh.n_nodes
        bc = self.network.pressure_bc()
        idx = [int(i) for i in sorted(bc)]
        val = [bc[i] for i in idx]
        pl_rows = []
        for node in sorted(self.mesh.pl_dirichlet):
            idx.append(n1 + int(node))
            val.append(self.mesh.pl_dirichlet[node])
            pl_rows.append(n1 + int(node))
        for node in sorted(self.pv_dirichlet):
            vi = self.mesh.vnode_index[int(node)]
            if vi < 0:
                raise ConfigError(f"homogenized Dirichlet node {node} is not "
                                  "in the vascular subdomain")
            idx.append(n1 + n3 + int(vi))
            val.append(self.pv_dirichlet[node])
        idx = np.array(idx, dtype=int)
        val = np.array(val, dtype=float)
        a_bc, b_bc = apply_dirichlet(a, b, idx, val)
        blocks = {"pen_dd": pen_dd, "pen_dm": pen_dm, "pen_md": pen_md,
                  "pen_mm": pen_mm, "g_vl": self._g_vl, "h_lv": self._h_lv,
                  "j_lv": -self._v_lv, "l_vl": self._l_vl,
                  "v_ll": self._v_ll, "v_lv": self._v_lv,
                  "load_l_sum": float(self._load_l.sum())}
        return HybridSystem(matrix=a_bc, rhs=b_bc, matrix_raw=a, rhs_raw=b,
                            network=self.network, mesh=self.mesh,
                            segments=self.segments, mortar=ops,
                            params=self.params, hybrid_params=self.hybrid_params,
                            penalty=penalty, pv_dirichlet=self.pv_dirichlet,
                            pl_dirichlet_rows=np.array(pl_rows, dtype=int),
                            blocks=blocks)


def assemble_hybrid_system(large_network: VesselNetwork, mesh: TissueMesh,
                           params: PhysicsParams, hybrid_params: HybridParams,
                           pv_dirichlet: Optional[dict] = None,
                           segments: Optional[List[IntegrationSegment]] = None,
                           penalty: Optional[float] = None) -> HybridSystem:
    """One-shot assembly (see HybridModel for reusable parts)."""
    model = HybridModel(large_network, mesh, params, hybrid_params,
                        pv_dirichlet=pv_dirichlet, segments=segments)
    eps = penalty if penalty is not None else hybrid_params.penalty
    return model.system(eps)


def check_penalty_criterion(solution: HybridSolution, threshold: float = 0.01):
    """(delta, passed): mean relative constraint pressure error vs threshold."""
    return solution.delta, solution.delta < threshold


def _delta(ops: MortarOperators, gap: np.ndarray, p_vessel: np.ndarray) -> float:
    kappa = np.where(ops.kappa > 0, ops.kappa, 1.0)
    scaled = np.abs(gap / kappa)
    pabs = np.abs(p_vessel)
    ok = pabs > 0
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} vessel nodes with zero pressure "
                      "excluded from the penalty criterion")
    if not ok.any():
        return float("inf")
    return float(np.mean(scaled[ok] / pabs[ok]))


def solve_hybrid(system: HybridSystem) -> HybridSolution:
    """Solve the penalty-regularized system and recover multipliers."""
    if not system.penalty > 0:
        raise ConfigError("solving requires a positive penalty")
    t0 = time.perf_counter()
    try:
        x = solve_checked(system.matrix, system.rhs)
    except NumericError as exc:
        raise NumericError(f"{exc}; consider reducing the penalty parameter") from exc
    dt = time.perf_counter() - t0
    n1 = system.n_vessel
    n3 = system.n_if
    p_vessel = x[:n1]
    p_if = x[n1:n1 + n3]
    p_hom = x[n1 + n3:]

    gap = weighted_gap(system.mortar, p_vessel, p_hom)
    lam = recover_multipliers(system.mortar, system.penalty, gap)
    delta = _delta(system.mortar, gap, p_vessel)

    leak = segment_leakage(system.network, system.segments, system.mesh,
                           system.params, p_vessel, p_if)
    hom_total = float((system.blocks["v_lv"] @ p_hom).sum()
                      - (system.blocks["v_ll"] @ p_if).sum()
                      - system.params.oncotic_jump * system.blocks["load_l_sum"])
    reactions = system.matrix_raw @ x - system.rhs_raw
    outflux = -float(reactions[system.pl_dirichlet_rows].sum())
    v2h = float(np.sum(system.mortar.kappa * lam))

    scale = float(np.linalg.norm(system.rhs))
    res = float(np.linalg.norm(system.matrix @ x - system.rhs))
    return HybridSolution(p_vessel=p_vessel, p_if=p_if, p_hom=p_hom, lam=lam,
                          gap=gap, delta=delta, penalty=system.penalty,
                          segment_leakage=leak, homogenized_leak_total=hom_total,
                          vessel_to_hom_flow=v2h, boundary_outflux=outflux,
                          residual_rel=res / scale if scale > 0 else res,
                          solve_seconds=dt)


def solve_hybrid_auto(model: HybridModel, initial_penalty: float = 100.0,
                      threshold: float = 0.01, max_attempts: int = 4,
                      factor: float = 4.0):
    """Solve with the penalty grown by `factor` until the mean relative
    constraint error drops below the threshold (at most max_attempts + 1
    solves). Returns (solution, attempts); raises when no conformant penalty
    is found."""
    eps = initial_penalty
    best = None
    for attempt in range(max_attempts + 1):
        sol = solve_hybrid(model.system(eps))
        if best is None or sol.delta < best.delta:
            best = sol
        if sol.delta < threshold:
            return sol, attempt + 1
        eps *= factor
    raise NumericError(
        f"no penalty reached delta < {threshold:.2%} within {max_attempts} "
        f"adjustments (best delta {best.delta:.3e} at penalty {best.penalty})")
