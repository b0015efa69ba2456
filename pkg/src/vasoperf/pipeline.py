"""End-to-end experiment orchestration: generate a reference case, solve the
fully-resolved model, extract the large-vessel topology, solve and calibrate
the hybrid model, and emit every comparison artifact.

Per-seed runs are independent and reproducible; metric files are
byte-identical across reruns of one config on one platform (wall-clock
timings live in separate timing files).
"""

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from vasoperf import network as net_mod
from vasoperf.boundary import (BcConfig, OptimizerTargets,
                               assign_boundary_conditions,
                               optimize_unknown_boundaries)
from vasoperf.calibration import (CalibrationCase, LMOptions, calibrate,
                                  calibrate_vf_permeability,
                                  flow_volume_fraction_correlation)
from vasoperf.config import ExperimentConfig
from vasoperf.errors import ConfigError, NumericError
from vasoperf.fullmodel import assemble_full_system, solve_full
from vasoperf.generators import generate_synthetic_network
from vasoperf.hybrid import (HybridModel, solve_hybrid, solve_hybrid_auto,
                             transfer_boundary_conditions)
from vasoperf.mesh import build_box_mesh, load_mesh
from vasoperf.metrics import compare_solutions
from vasoperf.network import SMALL, classify_tips, connectivity_stats, \
    partition_by_flow, save_network, save_partition
from vasoperf.params import HybridParams
from vasoperf.rev import (grow_probe_cubes, partition_into_revs,
                          radial_profile, save_rev_stats, select_rev_length)
from vasoperf.vtk_io import write_vtk_mesh, write_vtk_polylines


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def build_network(config: ExperimentConfig, seed: int):
    spec = dict(config["network"])
    if spec.get("kind") == "import":
        net = net_mod.load_network(spec["path"])
        meta = {}
        box = (net.positions.min(axis=0), net.positions.max(axis=0))
    else:
        net, meta = generate_synthetic_network(spec, seed)
        box = (np.zeros(3), np.asarray(spec["box"], dtype=float))
    classify_tips(net, box)
    return net, meta, box


def build_mesh(config: ExperimentConfig, box):
    spec = dict(config["mesh"])
    if "import" in spec or spec.get("kind") == "import":
        return load_mesh(spec.get("import") or spec["path"])
    return build_box_mesh(box[0], box[1], spec["resolution"],
                          enlargement=spec["enlargement"],
                          grading=spec["grading"])


def geometric_sv_ratio(network, box) -> float:
    """Lateral surface of the small vessels per domain volume, 1/um."""
    ids = network.segment_ids(SMALL)
    vol = float(np.prod(np.asarray(box[1]) - np.asarray(box[0])))
    return float(np.sum(2.0 * np.pi * network.radii[ids]
                        * network.lengths[ids]) / vol)


def choose_rev_length(config, curves, box) -> float:
    rev_cfg = config["rev"]
    if rev_cfg["l_rev"] != "auto":
        return float(rev_cfg["l_rev"])
    ext = float((np.asarray(box[1]) - np.asarray(box[0])).max())
    window = rev_cfg["growth_window"]
    window = 0.125 * ext if window == "auto" else float(window)
    l_rev = select_rev_length(curves, window, tol=rev_cfg["stability_tol"])
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    return float(min(l_rev, (hi - lo).min()))


def _write_scatter(path, header, ref, test):
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for a, b in zip(np.asarray(ref), np.asarray(test)):
            f.write(f"{a!r},{b!r}\n")


def run_seed(config: ExperimentConfig, seed: int, outdir: str) -> dict:
    """One full pipeline pass; returns the scalar metrics it wrote."""
    os.makedirs(outdir, exist_ok=True)
    params = config.physics()
    summary = {"seed": seed, "config_hash": config.hash()}
    timing = {}
    import time as _time

    t0 = _time.perf_counter()
    network, meta, box = build_network(config, seed)
    bc_cfg = config["bc"]
    network = assign_boundary_conditions(
        network, seed, BcConfig(p_high=bc_cfg["p_high"], p_low=bc_cfg["p_low"],
                                frac_assigned=bc_cfg["frac_assigned"],
                                frac_noflux=bc_cfg["frac_noflux"],
                                proximity_radius=bc_cfg["proximity_radius"]))
    network = optimize_unknown_boundaries(
        network, OptimizerTargets(p_target=bc_cfg["p_target"],
                                  tau_target=bc_cfg["tau_target"],
                                  w_p=bc_cfg["w_p"], w_tau=bc_cfg["w_tau"]))
    save_network(network, os.path.join(outdir, "network"))
    mesh = build_mesh(config, box)
    timing["setup"] = _time.perf_counter() - t0

    t0 = _time.perf_counter()
    fsys = assemble_full_system(network, mesh, params)
    fsol = solve_full(fsys)
    timing["solve_full"] = _time.perf_counter() - t0
    summary["full"] = {
        "mass_balance_error": fsol.mass_balance_error,
        "residual_rel": fsol.residual_rel,
        "total_leakage": fsol.total_leakage,
    }
    with open(os.path.join(outdir, "flows.csv"), "w", encoding="utf-8") as f:
        f.write("segment,Q,leakage\n")
        for i in range(network.n_segments):
            f.write(f"{i},{fsol.segment_flow[i]!r},{fsol.segment_leakage[i]!r}\n")
    write_vtk_mesh(mesh, os.path.join(outdir, "full_p_if.vtk"),
                   point_data={"p_if": fsol.p_if}, cell_data={"tag": mesh.tag})
    write_vtk_polylines(network.positions, network.seg_nodes,
                        os.path.join(outdir, "full_network.vtk"),
                        point_data={"p_vessel": fsol.p_vessel})

    part_cfg = config["partition"]
    pnet = partition_by_flow(network, fsol, part_cfg["keep_fraction"],
                             part_cfg["min_component_length"])
    save_partition(pnet, os.path.join(outdir, "partition.csv"))
    conn = connectivity_stats(pnet, fsol)
    summary["partition"] = {
        "n_large": int((pnet.partition == "large").sum()),
        "n_small": int((pnet.partition == "small").sum()),
        "phi": conn.phi,
        "cv_diameter": conn.cv_diameter,
        "cv_abs_flow": conn.cv_abs_flow,
    }

    t0 = _time.perf_counter()
    hyb_cfg = config["hybrid"]
    large_net, pvd, orig_nodes, orig_segs = transfer_boundary_conditions(
        pnet, mesh, hyb_cfg["smearing_radius"])
    sv0 = geometric_sv_ratio(pnet, box) if hyb_cfg["sv_ratio"] == "geometric" \
        else float(hyb_cfg["sv_ratio"])
    hp = HybridParams(kv_over_mu=float(hyb_cfg["kv_over_mu"]), sv_ratio=sv0,
                      penalty=float(hyb_cfg["penalty_initial"]),
                      smearing_radius=float(hyb_cfg["smearing_radius"]))
    model = HybridModel(large_net, mesh, params, hp, pv_dirichlet=pvd)
    if hyb_cfg["penalty"] == "auto":
        hsol, attempts = solve_hybrid_auto(
            model, initial_penalty=float(hyb_cfg["penalty_initial"]))
    else:
        hsol = solve_hybrid(model.system(float(hyb_cfg["penalty"])))
        attempts = 1
    timing["solve_hybrid"] = _time.perf_counter() - t0
    summary["hybrid"] = {
        "penalty": hsol.penalty,
        "penalty_attempts": attempts,
        "delta": hsol.delta,
        "mass_balance_error": hsol.mass_balance_error,
        "residual_rel": hsol.residual_rel,
    }
    hom_field = np.zeros(mesh.n_nodes)
    hom_field[mesh.vnode_ids] = hsol.p_hom
    write_vtk_mesh(mesh, os.path.join(outdir, "hybrid_fields.vtk"),
                   point_data={"p_if": hsol.p_if, "p_hom": hom_field},
                   cell_data={"tag": mesh.tag})
    write_vtk_polylines(large_net.positions, large_net.seg_nodes,
                        os.path.join(outdir, "hybrid_network.vtk"),
                        point_data={"p_vessel": hsol.p_vessel,
                                    "lambda": hsol.lam})

    rev_cfg = config["rev"]
    curves = grow_probe_cubes(pnet, box, rev_cfg["n_centers"], seed,
                              max_steps=rev_cfg["max_growth_steps"])
    with open(os.path.join(outdir, "growth_curves.csv"), "w",
              encoding="utf-8") as f:
        f.write("center_id,l,vf_small,sv_small\n")
        for ci, c in enumerate(curves):
            for l, vf, sv in zip(c.lengths, c.vf_small, c.sv_small):
                f.write(f"{ci},{l!r},{vf!r},{sv!r}\n")
    l_rev = choose_rev_length(config, curves, box)
    summary["rev"] = {"l_rev": l_rev}
    revp = partition_into_revs(box, l_rev, pnet)
    save_rev_stats(revp, os.path.join(outdir, "rev_stats.csv"))
    try:
        prof = radial_profile(revp)
        summary["radial_fit_slope_small"] = prof.fit_small.slope
    except NumericError as exc:  # no radial spread in the REV centers
        summary["radial_fit_slope_small"] = None
    with open(os.path.join(outdir, "radial_profile.csv"), "w",
              encoding="utf-8") as f:
        f.write("r_tilde,vf_small,vf_large,vf_total\n")
        for j in range(revp.n_rev):
            f.write(f"{revp.r_tilde[j]!r},{revp.vf_small[j]!r},"
                    f"{revp.vf_large[j]!r},{revp.vf_total[j]!r}\n")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = compare_solutions(fsol, hsol, pnet, large_net, orig_nodes,
                                   mesh, revp, hp.kv_over_mu)
    comparison = report.scalars()
    comparison["config_hash"] = config.hash()
    _dump_json(comparison, os.path.join(outdir, "comparison.json"))
    _write_scatter(os.path.join(outdir, "scatter_large_pressure.csv"),
                   "p_full,p_hybrid", fsol.p_vessel[orig_nodes], hsol.p_vessel)
    _write_scatter(os.path.join(outdir, "scatter_if_pressure.csv"),
                   "p_full,p_hybrid", fsol.p_if, hsol.p_if)
    from vasoperf.metrics import HomogenizedSampler
    small_nodes = pnet.node_set(SMALL)
    sampler = HomogenizedSampler(mesh, pnet.positions[small_nodes])
    _write_scatter(os.path.join(outdir, "scatter_small_pressure.csv"),
                   "p_full,p_hybrid",
                   fsol.p_vessel[small_nodes[sampler.kept]],
                   sampler.sample(hsol.p_hom))
    rp = report.rev_pressures
    with open(os.path.join(outdir, "rev_errors.csv"), "w", encoding="utf-8") as f:
        f.write("rev_id,E_if_abs,E_if_rel,E_blood_abs,E_blood_rel\n")
        for j in range(revp.n_rev):
            f.write(f"{j},{rp.err_if_abs[j]!r},{rp.err_if_rel[j]!r},"
                    f"{rp.err_blood_abs[j]!r},{rp.err_blood_rel[j]!r}\n")

    cal_cfg = config["calibration"]
    result_metrics = dict(comparison)
    if cal_cfg["enabled"]:
        t0 = _time.perf_counter()
        case = CalibrationCase(network=pnet, large_net=large_net,
                               orig_node_ids=orig_nodes, mesh=mesh,
                               pv_dirichlet=pvd, full_solution=fsol,
                               rev_partition=revp, params=params,
                               base_hybrid=hp.replace(penalty=hsol.penalty),
                               weights=tuple(cal_cfg["weights"]))
        opts = LMOptions(max_iterations=cal_cfg["max_iterations"])
        if cal_cfg["mode"] == "scalar":
            res = calibrate(case, kv_init=cal_cfg["kv_init"],
                            sv_init=sv0 if cal_cfg["fix_sv"] is None else None,
                            fix_sv=cal_cfg["fix_sv"], options=opts)
        else:
            res = calibrate_vf_permeability(case, cal_cfg["alpha_init"],
                                            options=opts)
        timing["calibration"] = _time.perf_counter() - t0
        with open(os.path.join(outdir, "calibration_trace.csv"), "w",
                  encoding="utf-8") as f:
            f.write("accepted_step,r2_total\n")
            for i, v in enumerate(res.r2_total_trace):
                f.write(f"{i},{v!r}\n")
        result = {
            "theta": res.theta,
            "r2_total": res.r2_total,
            "components": res.components,
            "n_iterations": res.n_iterations,
            "n_evaluations": res.n_evaluations,
            "converged": res.converged,
            "sv_geometric": sv0,
            "config_hash": config.hash(),
        }
        _dump_json(result, os.path.join(outdir, "result.json"))
        result_metrics.update({f"calibrated_{k}": v
                               for k, v in res.components.items()})
        result_metrics.update({f"theta_{k}": v for k, v in res.theta.items()})

    try:
        corr = flow_volume_fraction_correlation(fsol, pnet, revp)
        summary["flow_fraction_fit"] = {
            "slope": corr.fit_slope, "intercept": corr.fit_intercept,
            "r_squared": corr.fit_r_squared,
        }
        with open(os.path.join(outdir, "flow_vs_fraction.csv"), "w",
                  encoding="utf-8") as f:
            f.write("rev_id,vf_small,abs_Q_x,abs_Q_y,abs_Q_z\n")
            for j in range(revp.n_rev):
                q = corr.abs_flows[j]
                f.write(f"{j},{corr.vf_small[j]!r},{q[0]!r},{q[1]!r},{q[2]!r}\n")
    except NumericError as exc:  # e.g. perfectly uniform volume fractions
        summary["flow_fraction_fit"] = {"undefined": str(exc)}
    _dump_json(summary, os.path.join(outdir, "summary.json"))
    _dump_json(timing, os.path.join(outdir, "timing.json"))
    return result_metrics


def _run_seed_job(args):
    config_data, seed, outdir = args
    return seed, run_seed(ExperimentConfig(config_data), seed, outdir)


def run_pipeline(config: ExperimentConfig, out: Optional[str] = None) -> str:
    """Run every seed and aggregate metric means and standard deviations."""
    out = out or config["run"]["out"]
    os.makedirs(out, exist_ok=True)
    seeds = config["run"]["seeds"]
    jobs = [(config.data, s, os.path.join(out, f"seed_{s}")) for s in seeds]
    workers = min(len(seeds), int(os.environ.get("VASOPERF_THREADS", "1")))
    results = {}
    failures = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, metrics in pool.map(_run_seed_job, jobs):
                results[seed] = metrics
    else:
        for job in jobs:
            try:
                seed, metrics = _run_seed_job(job)
                results[seed] = metrics
            except Exception as exc:  # record, keep the other seeds running
                failures[job[1]] = f"{type(exc).__name__}: {exc}"

    keys = sorted({k for m in results.values() for k in m
                   if isinstance(m[k], (int, float)) and m[k] is not None})
    aggregate = {"config_hash": config.hash(),
                 "n_seeds": len(results),
                 "seeds": sorted(results),
                 "failures": failures,
                 "metrics": {}}
    for k in keys:
        vals = np.array([results[s][k] for s in sorted(results)
                         if isinstance(results[s].get(k), (int, float))])
        if vals.size:
            aggregate["metrics"][k] = {"mean": float(vals.mean()),
                                       "std": float(vals.std())}
    _dump_json(aggregate, os.path.join(out, "aggregate.json"))
    return out


def write_report(experiment_dir: str) -> str:
    """Human-readable summary plus plot-ready scatter CSV files."""
    lines = ["experiment report", "=" * 60]
    agg_path = os.path.join(experiment_dir, "aggregate.json")
    if os.path.exists(agg_path):
        with open(agg_path, encoding="utf-8") as f:
            agg = json.load(f)
        lines.append(f"config hash: {agg['config_hash']}")
        lines.append(f"seeds: {agg['seeds']}  failures: {agg['failures']}")
        for k, v in sorted(agg["metrics"].items()):
            lines.append(f"  {k}: {v['mean']:.6g} +/- {v['std']:.3g}")
    else:
        lines.append("aggregate.json missing: incomplete experiment")

    for name in sorted(os.listdir(experiment_dir)):
        seed_dir = os.path.join(experiment_dir, name)
        if not (name.startswith("seed_") and os.path.isdir(seed_dir)):
            continue
        comp = os.path.join(seed_dir, "comparison.json")
        if not os.path.exists(comp):
            lines.append(f"{name}: INCOMPLETE (no comparison.json)")
            continue
        with open(comp, encoding="utf-8") as f:
            c = json.load(f)
        lines.append(f"{name}: r2_total={c.get('r2_total'):.4f} "
                     f"r2_large={c.get('r2_large'):.4f} "
                     f"r2_if={c.get('r2_if'):.4f}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(experiment_dir, "report.txt"), "w",
              encoding="utf-8") as f:
        f.write(text)
    return text
