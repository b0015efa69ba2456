"""Hybrid model: BC transfer, penalty mechanics, conservation and the
all-resolved limit."""

import numpy as np
import pytest

from vasoperf.errors import NumericError
from vasoperf.fullmodel import assemble_full_system, solve_full
from vasoperf.hybrid import (HybridModel, check_penalty_criterion,
                             homogenized_leak, solve_hybrid,
                             solve_hybrid_auto, transfer_boundary_conditions)
from vasoperf.mesh import build_box_mesh
from vasoperf.network import (BC_PRESSURE, LARGE, SMALL, VesselNetwork,
                              VesselNode, VesselSegment)
from vasoperf.params import HybridParams, PhysicsParams


def test_homogenized_leak_values():
    p = PhysicsParams()
    h = HybridParams(sv_ratio=6.4e-3)
    eq = p.oncotic_jump
    assert homogenized_leak(eq, 0.0, p, h) == pytest.approx(0.0)
    val = homogenized_leak(3000.0, 0.0, p, h)
    expect = 2.1e-5 * 6.4e-3 * (3000.0 - eq)
    assert val == pytest.approx(expect, rel=1e-12)
    assert expect == pytest.approx(3.297e-4, rel=1e-3)


# ---------------------------------------------------------------------------
# boundary-condition transfer
# ---------------------------------------------------------------------------

def _transfer_fixture():
    """Two small hull tips with pressure BCs, one interior small tip, one
    large vessel whose end node masks nearby mesh nodes."""
    mesh = build_box_mesh([0, 0, 0], [100, 100, 100], 4, enlargement=1.0)
    pts = [[0.0, 50.0, 50.0], [30.0, 50.0, 50.0],   # small, tip on x=0 face
           [0.0, 25.0, 25.0], [30.0, 25.0, 25.0],   # small, tip on x=0 face
           [50.0, 50.0, 50.0], [45.0, 45.0, 45.0],  # small interior stub
           [70.0, 50.0, 50.0], [99.0, 50.0, 50.0]]  # large vessel, tip at x=99
    nodes = [VesselNode(i, p) for i, p in enumerate(pts)]
    nodes[0].bc_type = BC_PRESSURE; nodes[0].bc_value = 4000.0
    nodes[2].bc_type = BC_PRESSURE; nodes[2].bc_value = 2000.0
    nodes[5].bc_type = BC_PRESSURE; nodes[5].bc_value = 3333.0
    nodes[7].bc_type = BC_PRESSURE; nodes[7].bc_value = 5000.0
    segs = [VesselSegment(0, 0, 1, 5.0), VesselSegment(1, 2, 3, 5.0),
            VesselSegment(2, 4, 5, 5.0), VesselSegment(3, 6, 7, 20.0)]
    net = VesselNetwork(nodes, segs)
    net.tip_class = {0: "hull", 2: "hull", 5: "interior", 7: "hull", 3: "interior",
                     1: "interior", 6: "interior"}
    labels = np.array([SMALL, SMALL, SMALL, LARGE])
    return net.with_partition(labels), mesh


def test_transfer_single_tip_value():
    net, mesh = _transfer_fixture()
    large_net, pvd, onodes, osegs = transfer_boundary_conditions(net, mesh, 20.0)
    # mesh node exactly at the x=0 tip (0, 50, 50) exists and gets 4000
    node = int(np.flatnonzero(np.all(mesh.nodes == [0, 50, 50], axis=1))[0])
    assert pvd[node] == pytest.approx(4000.0)
    # the large vessel keeps its 1D boundary conditions verbatim
    kept = [n for n in large_net.nodes if n.bc_type == BC_PRESSURE]
    assert len(kept) == 1 and kept[0].bc_value == 5000.0


def test_transfer_mean_of_two_tips():
    net, mesh = _transfer_fixture()
    # radius large enough that both x=0-face tips cover the node between them
    large_net, pvd, _, _ = transfer_boundary_conditions(net, mesh, 40.0)
    mid = int(np.flatnonzero(np.all(mesh.nodes == [0, 50, 25], axis=1))[0])
    assert pvd[mid] == pytest.approx(0.5 * (4000.0 + 2000.0))


def test_transfer_interior_tip_dropped():
    net, mesh = _transfer_fixture()
    _, pvd, _, _ = transfer_boundary_conditions(net, mesh, 20.0)
    # no transferred value anywhere near the interior tip's 3333 Pa
    assert not any(abs(v - 3333.0) < 1e-9 for v in pvd.values())


def test_transfer_masked_near_large_tips():
    net, mesh = _transfer_fixture()
    _, pvd, _, _ = transfer_boundary_conditions(net, mesh, 20.0)
    # nodes within 20 um of the large-vessel end node (99, 50, 50) are masked
    lt = np.array([99.0, 50.0, 50.0])
    for node in pvd:
        assert np.linalg.norm(mesh.nodes[node] - lt) >= 20.0


# ---------------------------------------------------------------------------
# assembled system structure
# ---------------------------------------------------------------------------

def _tiny_hybrid(kv=5.0, sv=5e-3, lp=2.1e-5):
    mesh = build_box_mesh([0, 0, 0], [100, 100, 100], 4, enlargement=2.0,
                          grading=1.4)
    nodes = [VesselNode(0, [20, 50, 50], BC_PRESSURE, 3000.0),
             VesselNode(1, [50, 50, 50]),
             VesselNode(2, [80, 50, 50], BC_PRESSURE, 2400.0)]
    segs = [VesselSegment(0, 0, 1, 10.0), VesselSegment(1, 1, 2, 10.0)]
    net = VesselNetwork(nodes, segs)
    params = PhysicsParams(lp_vessel=lp, lp_homogenized=lp)
    hp = HybridParams(kv_over_mu=kv, sv_ratio=sv, penalty=100.0,
                      smearing_radius=20.0)
    model = HybridModel(net, mesh, params, hp, pv_dirichlet={})
    return model, net, mesh


def test_zero_penalty_zero_lp_decouples():
    model, net, mesh = _tiny_hybrid(lp=0.0)
    sys0 = model.system(0.0)
    n1, n3 = sys0.n_vessel, sys0.n_if
    a = sys0.matrix_raw.toarray()
    assert np.abs(a[:n1, n1:]).max() == 0.0          # vessel rows decouple
    assert np.abs(a[n1:n1 + n3, :n1]).max() == 0.0
    assert np.abs(a[n1:n1 + n3, n1 + n3:]).max() == 0.0
    assert np.abs(a[n1 + n3:, :n1 + n3]).max() == 0.0


def test_penalty_block_symmetric_positive_semidefinite():
    model, _, _ = _tiny_hybrid()
    sys1 = model.system(250.0)
    pen = sys1.blocks["pen_dd"].toarray()
    assert np.abs(pen - pen.T).max() < 1e-12 * max(1.0, np.abs(pen).max())
    eig = np.linalg.eigvalsh(pen)
    assert eig.min() > -1e-10 * max(1.0, eig.max())
    # the mixed penalty blocks transpose onto each other
    dm = sys1.blocks["pen_dm"].toarray()
    md = sys1.blocks["pen_md"].toarray()
    assert np.abs(dm - md.T).max() < 1e-12 * max(1.0, np.abs(dm).max())


def test_constant_fields_zero_penalty_residual():
    model, net, mesh = _tiny_hybrid()
    sys1 = model.system(300.0)
    c = 1234.5
    p1 = np.full(net.n_nodes, c)
    pv = np.full(mesh.n_vnodes, c)
    ops = sys1.mortar
    g = ops.D @ p1 - ops.M @ pv
    contrib = 300.0 * (ops.D.T @ (g / ops.kappa))
    scale = 300.0 * c * ops.kappa.max()
    assert np.abs(contrib).max() < 1e-12 * scale


def test_manufactured_matching_fields_small_delta():
    model, net, mesh = _tiny_hybrid()
    a = np.array([3.0, -1.0, 0.5])
    p1 = net.positions @ a + 4000.0
    pv = mesh.nodes[mesh.vnode_ids] @ a + 4000.0
    ops = model.mortar
    g = ops.D @ p1 - ops.M @ pv
    delta = float(np.mean(np.abs(g / ops.kappa) / np.abs(p1)))
    assert delta < 1e-8


def test_solution_invariants(two_scale):
    sol = two_scale.hybrid0
    assert sol.residual_rel < 1e-10
    # multipliers reconstruct exactly from the pressure fields
    ops_model = HybridModel(two_scale.large_net, two_scale.mesh,
                            two_scale.params,
                            HybridParams(kv_over_mu=8.0,
                                         sv_ratio=two_scale.sv_geom,
                                         penalty=sol.penalty,
                                         smearing_radius=50.0),
                            pv_dirichlet=two_scale.pv_dirichlet)
    ops = ops_model.mortar
    g = ops.D @ sol.p_vessel - ops.M @ sol.p_hom
    lam = sol.penalty * g / ops.kappa
    scale = np.abs(sol.lam).max()
    assert np.abs(lam - sol.lam).max() < 1e-12 * max(scale, 1.0)
    # what leaves the vessels through the multipliers enters the 3D field
    assert np.sum(ops.M.T @ sol.lam) == pytest.approx(
        np.sum(ops.kappa * sol.lam), rel=1e-12)
    # global volume balance across all compartments
    assert sol.mass_balance_error < 1e-8
    # Dirichlet exactness
    bc = two_scale.large_net.pressure_bc()
    for node, val in bc.items():
        assert sol.p_vessel[node] == val


def test_delta_criterion_and_doubling(two_scale):
    model = HybridModel(two_scale.large_net, two_scale.mesh, two_scale.params,
                        HybridParams(kv_over_mu=8.0, sv_ratio=two_scale.sv_geom,
                                     penalty=two_scale.penalty,
                                     smearing_radius=50.0),
                        pv_dirichlet=two_scale.pv_dirichlet)
    eps = two_scale.penalty
    sols = {e: solve_hybrid(model.system(e)) for e in (eps, 2 * eps)}
    g1 = np.abs(sols[eps].gap / model.mortar.kappa).max()
    g2 = np.abs(sols[2 * eps].gap / model.mortar.kappa).max()
    assert 0.4 <= g2 / g1 <= 0.6
    delta, ok = check_penalty_criterion(sols[eps])
    assert ok and delta < 0.01


def test_penalty_monotone_over_decade(two_scale):
    model = HybridModel(two_scale.large_net, two_scale.mesh, two_scale.params,
                        HybridParams(kv_over_mu=8.0, sv_ratio=two_scale.sv_geom,
                                     penalty=two_scale.penalty,
                                     smearing_radius=50.0),
                        pv_dirichlet=two_scale.pv_dirichlet)
    norms = []
    for eps in [200.0, 632.0, 2000.0, 6320.0, 20000.0]:
        sol = solve_hybrid(model.system(eps))
        norms.append(np.abs(sol.gap / model.mortar.kappa).max())
    assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))


def test_auto_penalty_reaches_criterion(two_scale):
    assert two_scale.hybrid0.delta < 0.01
    # and the auto loop reported success within the attempt budget
    model = HybridModel(two_scale.large_net, two_scale.mesh, two_scale.params,
                        HybridParams(kv_over_mu=8.0, sv_ratio=two_scale.sv_geom,
                                     penalty=100.0, smearing_radius=50.0),
                        pv_dirichlet=two_scale.pv_dirichlet)
    sol, attempts = solve_hybrid_auto(model, initial_penalty=100.0)
    assert attempts <= 5  # 1 initial + at most 4 adjustments
    assert sol.delta < 0.01


def test_hybrid_equals_full_when_all_resolved():
    # no small vessels at all: the hybrid collapses onto the full model
    mesh = build_box_mesh([0, 0, 0], [200, 200, 200], 5, enlargement=2.0,
                          grading=1.4)
    coords = np.linspace(30, 170, 7)
    nodes = [VesselNode(i, [100.0, 100.0, z]) for i, z in enumerate(coords)]
    nodes[0].bc_type = BC_PRESSURE; nodes[0].bc_value = 4000.0
    nodes[-1].bc_type = BC_PRESSURE; nodes[-1].bc_value = 2500.0
    segs = [VesselSegment(i, i, i + 1, 9.0) for i in range(6)]
    net = VesselNetwork(nodes, segs)
    params = PhysicsParams()
    full = solve_full(assemble_full_system(net, mesh, params))

    pnet = net.with_partition(np.full(net.n_segments, LARGE, dtype="<U5"))
    pnet.tip_class = {0: "hull", 6: "hull"}
    large_net, pvd, onodes, _ = transfer_boundary_conditions(pnet, mesh, 20.0)
    assert not pvd  # no small-vessel values to smear
    hp = HybridParams(kv_over_mu=5.0, sv_ratio=1e-12, penalty=100.0,
                      smearing_radius=20.0)
    model = HybridModel(large_net, mesh, params, hp, pv_dirichlet={})
    sol, _ = solve_hybrid_auto(model, initial_penalty=100.0)
    scale = np.abs(full.p_vessel).max()
    tol = 5 * sol.delta * scale
    assert np.abs(sol.p_vessel - full.p_vessel[onodes]).max() < tol
    assert np.abs(sol.p_if - full.p_if).max() < tol


def test_nonconvergence_suggests_penalty(two_scale):
    model = HybridModel(two_scale.large_net, two_scale.mesh, two_scale.params,
                        HybridParams(kv_over_mu=8.0, sv_ratio=two_scale.sv_geom,
                                     penalty=100.0, smearing_radius=50.0),
                        pv_dirichlet=two_scale.pv_dirichlet)
    with pytest.raises(NumericError, match="delta"):
        solve_hybrid_auto(model, initial_penalty=1e-8, max_attempts=0)
