"""Stochastic boundary-condition assignment on network tips and the
constrained flow optimization completing unknown tip pressures.

Pipeline: high/low pressures on hull tips (5% of all tips, proximity rule
between opposite signs), no-flux on interior tips (33% of all tips), the
remaining tips handed to a quadratic flow optimizer that minimizes pressure
and wall-shear-stress deviation from target values subject to nodal flow
conservation.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from vasoperf.errors import ConfigError, NumericError
from vasoperf.network import (BC_NOFLUX, BC_NONE, BC_PRESSURE, VesselNetwork,
                              network_laplacian, solve_network_poiseuille)


@dataclass
class BcConfig:
    """Targets of the stochastic tip assignment (pressures in Pa)."""

    p_high: float = 5999.4
    p_low: float = 1999.8
    frac_assigned: float = 0.05
    frac_noflux: float = 0.33
    proximity_radius: float = 200.0  # um; opposite signs may not be closer

    def __post_init__(self):
        if not 0 < self.frac_assigned < 1 or not 0 <= self.frac_noflux < 1:
            raise ConfigError("BC fractions must lie in (0, 1)")
        if self.frac_assigned + self.frac_noflux >= 1:
            raise ConfigError("assigned + noflux fractions must stay below 1")


@dataclass
class OptimizerTargets:
    """Targets and weights of the flow optimization."""

    p_target: float = 3100.0   # Pa
    tau_target: float = 1.5    # Pa wall shear stress magnitude
    w_p: float = 1.0
    w_tau: float = 1.0
    max_sign_iterations: int = 5


def assign_boundary_conditions(network: VesselNetwork, seed: int,
                               config: BcConfig = None) -> VesselNetwork:
    """Assign high/low pressure and no-flux BCs on classified tips.

    Exactly ceil(frac_assigned * n_tips) hull tips receive pressure values
    (high and low split as evenly as possible), ceil(frac_noflux * n_tips)
    interior tips become no-flux, and the rest keep bc 'none' for the flow
    optimizer. Opposite-sign pressures never sit closer than the proximity
    radius. Deterministic for a fixed seed.
    """
    config = config or BcConfig()
    if network.tip_class is None:
        raise ConfigError("tips are not classified; call classify_tips first")
    rng = np.random.default_rng(seed)
    tips = network.tips()
    n_tips = tips.size
    if n_tips == 0:
        raise ConfigError("network has no tips to assign")
    n_bc = math.ceil(config.frac_assigned * n_tips)
    n_high = math.ceil(n_bc / 2)
    n_low = n_bc - n_high
    n_noflux = math.ceil(config.frac_noflux * n_tips)

    hull = np.array([t for t in tips if network.tip_class.get(int(t)) == "hull"])
    interior = np.array([t for t in tips if network.tip_class.get(int(t)) != "hull"])
    rng.shuffle(hull)
    rng.shuffle(interior)

    assigned = {}  # node -> pressure
    placed = {config.p_high: [], config.p_low: []}
    need = {config.p_high: n_high, config.p_low: n_low}

    def feasible(pos, value):
        other = config.p_low if value == config.p_high else config.p_high
        for q in placed[other]:
            if np.linalg.norm(pos - q) < config.proximity_radius:
                return False
        return True

    for t in hull:
        if sum(need.values()) == 0:
            break
        pos = network.positions[int(t)]
        total = need[config.p_high] + need[config.p_low]
        first = config.p_high if rng.random() < need[config.p_high] / total \
            else config.p_low
        second = config.p_low if first == config.p_high else config.p_high
        for value in (first, second):
            if need[value] > 0 and feasible(pos, value):
                assigned[int(t)] = value
                placed[value].append(pos)
                need[value] -= 1
                break

    if len(assigned) < n_bc:
        achievable = len(assigned) / n_tips
        raise ConfigError(
            f"could not place {n_bc} pressure BCs on hull tips (placed "
            f"{len(assigned)}; achievable fraction {achievable:.4f}); relax the "
            "proximity radius or provide more hull tips")

    if interior.size < n_noflux:
        raise ConfigError(
            f"need {n_noflux} interior tips for no-flux conditions but only "
            f"{interior.size} exist (achievable fraction "
            f"{interior.size / n_tips:.4f})")
    noflux = interior[:n_noflux]

    bc_type = {int(n.id): n.bc_type for n in network.nodes if n.bc_type != BC_NONE}
    bc_value = {int(n.id): n.bc_value for n in network.nodes if n.bc_type != BC_NONE}
    for t, v in assigned.items():
        bc_type[t] = BC_PRESSURE
        bc_value[t] = v
    for t in noflux:
        bc_type[int(t)] = BC_NOFLUX
    return network.with_bcs(bc_type, bc_value)


def _wss_operator(network: VesselNetwork) -> sp.csr_matrix:
    """Signed wall-shear-stress map tau = B p with tau_e = R (p_a - p_b)/(2 L)."""
    m, n = network.n_segments, network.n_nodes
    coef = network.radii / (2.0 * network.lengths)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([network.seg_nodes[:, 0], network.seg_nodes[:, 1]])
    vals = np.concatenate([coef, -coef])
    return sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsr()


def optimize_unknown_boundaries(network: VesselNetwork,
                                targets: OptimizerTargets = None) -> VesselNetwork:
    """Complete unassigned tip pressures by constrained quadratic optimization.

    Minimizes w_p sum_i (p_i - p_target)^2 + w_tau sum_e (tau_e - tau_target
    sgn_e)^2 over nodal pressures subject to flow conservation at every node
    that is not a pressure tip or an unknown tip. Shear-stress signs come
    from a preliminary solve and are fixed-point updated a few times. The
    optimal pressures become Dirichlet values on the unknown tips; a no-op
    when every tip is already assigned.
    """
    targets = targets or OptimizerTargets()
    tips = set(int(t) for t in network.tips())
    unknown = sorted(t for t in tips
                     if network.nodes[t].bc_type == BC_NONE)
    if not unknown:
        return network

    bc = network.pressure_bc()
    fixed = sorted(bc)
    n = network.n_nodes
    lap = network_laplacian(network).tocsr()
    b_op = _wss_operator(network)

    # conservation holds everywhere except pressure tips and unknown tips
    cons_nodes = np.array(sorted(set(range(n)) - set(fixed) - set(unknown)), dtype=int)

    # preliminary flow state for shear signs: unknown tips at the target value
    pre_bt = {i: BC_PRESSURE for i in fixed}
    pre_bv = dict(bc)
    for t in unknown:
        pre_bt[t] = BC_PRESSURE
        pre_bv[t] = targets.p_target
    pre = solve_network_poiseuille(network.with_bcs(pre_bt, pre_bv))
    signs = np.where(b_op @ pre.pressures >= 0, 1.0, -1.0)

    free = np.array(sorted(set(range(n)) - set(fixed)), dtype=int)
    fixed = np.array(fixed, dtype=int)
    gvals = np.array([bc[int(i)] for i in fixed])

    h = (2.0 * targets.w_p * sp.identity(n, format="csr")
         + 2.0 * targets.w_tau * (b_op.T @ b_op)).tocsr()
    c_rows = lap[cons_nodes]

    p_full = None
    for _ in range(max(1, targets.max_sign_iterations)):
        rhs_lin = (2.0 * targets.w_p * targets.p_target * np.ones(n)
                   + 2.0 * targets.w_tau * (b_op.T @ (targets.tau_target * signs)))
        h_ff = h[np.ix_(free, free)]
        h_fd = h[np.ix_(free, fixed)] if fixed.size else None
        c_f = c_rows[:, free]
        c_d = c_rows[:, fixed] if fixed.size else None
        top = rhs_lin[free] - (h_fd @ gvals if fixed.size else 0.0)
        bot = -(c_d @ gvals) if fixed.size else np.zeros(c_rows.shape[0])
        kkt = sp.bmat([[h_ff, c_f.T], [c_f, None]], format="csc")
        rhs = np.concatenate([top, bot])
        try:
            sol = spla.spsolve(kkt, rhs)
        except Exception as exc:  # singular factorization
            raise NumericError(
                "flow-optimizer KKT system is singular; adjust the pressure/"
                f"shear weights ({exc})") from exc
        if np.any(~np.isfinite(sol)):
            raise NumericError("flow-optimizer KKT system is singular; "
                               "adjust the pressure/shear weights")
        p_full = np.zeros(n)
        p_full[free] = sol[:free.size]
        p_full[fixed] = gvals
        new_signs = np.where(b_op @ p_full >= 0, 1.0, -1.0)
        if np.array_equal(new_signs, signs):
            break
        signs = new_signs

    bt = {int(i.id): i.bc_type for i in network.nodes if i.bc_type != BC_NONE}
    bv = {int(i.id): i.bc_value for i in network.nodes if i.bc_type != BC_NONE}
    for t in unknown:
        bt[t] = BC_PRESSURE
        bv[t] = float(p_full[t])
    return network.with_bcs(bt, bv)
