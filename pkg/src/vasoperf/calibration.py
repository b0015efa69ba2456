"""Least-squares calibration of the hybrid model against a fully-resolved
reference: Levenberg-Marquardt over log-parameters with forward-difference
gradients, plus the volume-fraction-dependent permeability variant and the
flow/volume-fraction correlation analysis.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from vasoperf.errors import ConfigError, NumericError
from vasoperf.fullmodel import FullSolution
from vasoperf.hybrid import HybridModel, solve_hybrid
from vasoperf.mesh import TAG_VASCULAR, TissueMesh
from vasoperf.metrics import compare_solutions, rev_plane_abs_flows_discrete
from vasoperf.rev import fit_line
from vasoperf.network import SMALL, VesselNetwork
from vasoperf.params import HybridParams, PhysicsParams
from vasoperf.rev import RevPartition

FD_REL_STEP = 1e-4
FD_ABS_FLOOR = 1e-12
DAMPING_INITIAL = 1e-3
DAMPING_UP = 10.0
DAMPING_DOWN = 0.5
TRUST_INITIAL = 0.5  # log-space per-component step bound
TRUST_MIN = 0.05
TRUST_MAX = 1.0


@dataclass
class LMOptions:
    max_iterations: int = 40
    gtol: float = 1e-8
    xtol: float = 1e-7
    ftol: float = 1e-9
    fd_rel_step: float = FD_REL_STEP
    fd_abs_floor: float = FD_ABS_FLOOR


@dataclass
class LMResult:
    theta: np.ndarray
    objective: float
    residuals: np.ndarray
    n_iterations: int
    n_evaluations: int
    evals_per_iteration: List[int]
    accepted_objective_trace: List[float]
    converged: bool


def levenberg_marquardt(residual_fn: Callable[[np.ndarray], np.ndarray],
                        theta0: np.ndarray,
                        options: LMOptions = None) -> LMResult:
    """Damped least squares over strictly positive parameters.

    Parameters are handled in log space so positivity needs no constrained
    machinery; gradients use forward differences whose native-space step is
    fd_rel_step * theta_i floored at fd_abs_floor. Each iteration costs
    exactly n_params + 1 residual evaluations: n forward differences about
    the current point (whose residual is cached) plus one trial point, which
    is accepted when it lowers the objective and rejected otherwise (raising
    the damping). Steps are additionally clipped per component to an adaptive
    trust radius, which keeps one stiff, locally non-quadratic parameter from
    stalling progress along the remaining directions. The accepted-objective
    trace is non-increasing.
    """
    opt = options or LMOptions()
    theta0 = np.asarray(theta0, dtype=float)
    if np.any(theta0 <= 0):
        raise ConfigError("initial parameters must be strictly positive")
    u = np.log(theta0)
    n = u.size

    r = np.asarray(residual_fn(np.exp(u)), dtype=float)
    n_eval = 1
    s = float(r @ r)
    trace = [s]
    lam = DAMPING_INITIAL
    radius = TRUST_INITIAL
    per_iter = []
    converged = False

    for _ in range(opt.max_iterations):
        theta = np.exp(u)
        jac = np.empty((r.size, n))
        for i in range(n):
            h_nat = max(opt.fd_rel_step * theta[i], opt.fd_abs_floor)
            du = math.log1p(h_nat / theta[i])
            up = u.copy()
            up[i] += du
            rp = np.asarray(residual_fn(np.exp(up)), dtype=float)
            jac[:, i] = (rp - r) / du
        grad = jac.T @ r
        a = jac.T @ jac
        diag = np.diag(a).copy()
        diag[diag <= 0] = 1.0
        try:
            step = np.linalg.solve(a + lam * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            step = -grad / diag
        step = np.clip(step, -radius, radius)
        r_trial = np.asarray(residual_fn(np.exp(u + step)), dtype=float)
        s_trial = float(r_trial @ r_trial)
        per_iter.append(n + 1)
        n_eval += n + 1
        ds = 0.0
        if s_trial < s:
            ds = s - s_trial
            u = u + step
            r = r_trial
            s = s_trial
            trace.append(s)
            lam *= DAMPING_DOWN
            radius = min(TRUST_MAX, radius * 2.0)
        else:
            lam *= DAMPING_UP
            radius = max(TRUST_MIN, radius * 0.5)
        if (np.abs(grad).max() < opt.gtol
                or np.abs(step).max() < opt.xtol
                or (ds > 0 and ds < opt.ftol * max(s, 1e-300))):
            converged = True
            break

    return LMResult(theta=np.exp(u), objective=s, residuals=r,
                    n_iterations=len(per_iter), n_evaluations=n_eval,
                    evals_per_iteration=per_iter,
                    accepted_objective_trace=trace, converged=converged)


@dataclass
class CalibrationCase:
    """Frozen reference data a calibration run evaluates against."""

    network: VesselNetwork           # full, partitioned, with BCs
    large_net: VesselNetwork
    orig_node_ids: np.ndarray
    mesh: TissueMesh
    pv_dirichlet: dict
    full_solution: FullSolution
    rev_partition: RevPartition
    params: PhysicsParams
    base_hybrid: HybridParams        # carries penalty and smearing radius
    weights: tuple = (0.25, 0.25, 0.25, 0.25)
    _segments: list = field(default=None, repr=False)
    _caches: object = field(default=None, repr=False)
    _template: object = field(default=None, repr=False)

    def segments(self):
        if self._segments is None:
            from vasoperf.coupling import build_segments
            self._segments = build_segments(self.large_net, self.mesh,
                                            restrict_tag=TAG_VASCULAR)
        return self._segments

    def model(self, kv_over_mu, sv_ratio: float) -> HybridModel:
        """Hybrid model at the given parameters, reusing geometry blocks."""
        if self._template is None:
            self._template = HybridModel(self.large_net, self.mesh, self.params,
                                         self.base_hybrid,
                                         pv_dirichlet=self.pv_dirichlet,
                                         segments=self.segments())
        return self._template.variant(kv_over_mu, sv_ratio)

    def caches(self):
        from vasoperf.metrics import MetricCaches
        if self._caches is None:
            self._caches = MetricCaches.build(self.full_solution, self.network,
                                              self.mesh, self.rev_partition)
        return self._caches

    def element_kv(self, alpha: float) -> np.ndarray:
        """Per-element permeability alpha * vf_small(REV of the element)."""
        vf = self.rev_partition.vf_small
        if np.all(vf == 0):
            raise NumericError("all REVs have zero small-vessel volume "
                               "fraction; the permeability law degenerates")
        floor = 1e-3 * vf.max()
        centroid = 0.5 * (self.mesh.elem_lo + self.mesh.elem_hi)
        rev = self.rev_partition.rev_of_points(centroid)
        kv = np.full(self.mesh.n_elements, alpha * max(vf.max(), floor))
        inside = rev >= 0
        kv[inside] = alpha * np.maximum(vf[rev[inside]], floor)
        return kv

    def evaluate(self, kv_over_mu, sv_ratio: float):
        """One hybrid solve plus the four-component metric suite.

        Returns (residuals, report); residual c is sqrt(w_c (1 - R^2_c)) so
        the squared norm is the weighted complement of the agreement score.
        """
        model = self.model(kv_over_mu, sv_ratio)
        try:
            sol = solve_hybrid(model.system(self.base_hybrid.penalty))
        except NumericError as exc:
            raise NumericError(
                f"hybrid solve failed at kv={kv_over_mu}, sv={sv_ratio}: {exc}"
            ) from exc
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = compare_solutions(
                self.full_solution, sol, self.network, self.large_net,
                self.orig_node_ids, self.mesh, self.rev_partition,
                kv_over_mu, weights=self.weights, with_extras=False,
                caches=self.caches())
        comps = np.array([report.r2_large, report.r2_small, report.r2_if,
                          report.r2_flow_small])
        w = np.asarray(self.weights)
        residuals = np.sqrt(np.maximum(w * (1.0 - comps), 0.0))
        return residuals, report


@dataclass
class CalibrationResult:
    theta: dict
    r2_total: float
    r2_total_trace: List[float]
    components: dict
    n_iterations: int
    n_evaluations: int
    evals_per_iteration: List[int]
    converged: bool


def _result_from_lm(lm: LMResult, names, case: CalibrationCase,
                    theta_to_args) -> CalibrationResult:
    kv, sv = theta_to_args(lm.theta)
    _, report = case.evaluate(kv, sv)
    trace = [1.0 - s for s in lm.accepted_objective_trace]
    return CalibrationResult(
        theta={n: float(v) for n, v in zip(names, lm.theta)},
        r2_total=report.r2_total,
        r2_total_trace=trace,
        components=report.scalars(),
        n_iterations=lm.n_iterations,
        n_evaluations=lm.n_evaluations,
        evals_per_iteration=lm.evals_per_iteration,
        converged=lm.converged)


def objective(case: CalibrationCase, kv_over_mu: float, sv_ratio: float) -> float:
    """Scalar least-squares objective (weighted complement of R^2_tot)."""
    residuals, _ = case.evaluate(kv_over_mu, sv_ratio)
    return float(residuals @ residuals)


def calibrate(case: CalibrationCase, kv_init: float, sv_init: Optional[float] = None,
              fix_sv: Optional[float] = None,
              options: LMOptions = None) -> CalibrationResult:
    """Scalar calibration of [kv_over_mu, sv_ratio] (or kv alone with fix_sv)."""
    if fix_sv is not None:
        names = ["kv_over_mu"]
        theta0 = np.array([kv_init])

        def to_args(th):
            return float(th[0]), float(fix_sv)
    else:
        if sv_init is None:
            raise ConfigError("sv_init required unless fix_sv is given")
        names = ["kv_over_mu", "sv_ratio"]
        theta0 = np.array([kv_init, sv_init])

        def to_args(th):
            return float(th[0]), float(th[1])

    def residual_fn(theta):
        kv, sv = to_args(theta)
        res, _ = case.evaluate(kv, sv)
        return res

    lm = levenberg_marquardt(residual_fn, theta0, options)
    return _result_from_lm(lm, names, case, to_args)


def calibrate_vf_permeability(case: CalibrationCase, alpha_init: float,
                              sv_ratio: Optional[float] = None,
                              options: LMOptions = None) -> CalibrationResult:
    """Calibrate the proportionality constant of the per-REV permeability law
    kv(REV) = alpha * vf_small(REV); the wall area density stays fixed."""
    sv = sv_ratio if sv_ratio is not None else case.base_hybrid.sv_ratio

    def to_args(th):
        return case.element_kv(float(th[0])), float(sv)

    def residual_fn(theta):
        kv, svv = to_args(theta)
        res, _ = case.evaluate(kv, svv)
        return res

    lm = levenberg_marquardt(residual_fn, np.array([alpha_init]), options)
    result = _result_from_lm(lm, ["alpha"], case, to_args)
    return result


@dataclass
class FlowFractionCorrelation:
    vf_small: np.ndarray       # per REV
    abs_flows: np.ndarray      # (n_rev, 3) unsigned plane flows
    fit_slope: float
    fit_intercept: float
    fit_r_squared: float


def flow_volume_fraction_correlation(full: FullSolution, network: VesselNetwork,
                                     partition: RevPartition) -> FlowFractionCorrelation:
    """Correlate unsigned small-vessel REV plane flows with the REV volume
    fraction via a least-squares line."""
    if partition.n_rev < 2:
        raise NumericError("correlation needs at least 2 REVs")
    q = rev_plane_abs_flows_discrete(network, full.segment_flow, partition,
                                     label=SMALL)
    x = np.repeat(partition.vf_small, 3)
    y = q.ravel()
    fit = fit_line(x, y)
    return FlowFractionCorrelation(vf_small=partition.vf_small, abs_flows=q,
                                   fit_slope=fit.slope,
                                   fit_intercept=fit.intercept,
                                   fit_r_squared=fit.r_squared)
