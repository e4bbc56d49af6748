"""The SOLVE -> ESTIMATE -> MARK -> REFINE loop and its diagnostics.

Each iteration solves primal and dual problems, estimates both, marks
the union of two Dorfler sets, and refines by newest-vertex bisection.
Alongside the loop every inequality of the contraction theory is
evaluated as a measured quantity: quasi-error contraction ratios, the
quasi-orthogonality defect, the carried-function estimator-reduction
inequality, the goal-error bound, and the oscillation/estimator
relations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .estimator import data_estimates, estimator_total, indicators, \
    oscillation_total
from .fem import FeSolution, assemble, assemble_dual, build_space, carry, \
    energy_norm_diff, goal_value
from .marking import dorfler_mark, verify_dorfler
from .solver import solve

NAN = float("nan")

# estimator reduction factor for p = 2 in two dimensions
LAMBDA_RED = 1.0 - 2.0 ** -0.5


class SolverFailure(Exception):
    """Raised when a Galerkin solve misses its tolerance; carries the
    partial history gathered so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass
class DriverConfig:
    theta: float = 0.5
    degree: int = 1
    p: int = 2
    gamma_p: float | None = None      # None: balance against eta_0
    gamma_d: float | None = None
    max_iterations: int = 40
    dof_budget: int = 100_000
    solver_tol: float = 1e-10
    solver_max_iter: int = 2000
    solver_method: str = "auto"
    bin_count: int = 32
    strategy: str = "union"           # union | min-cardinality
    norm_quad_degree: int = 8
    track_data_estimates: bool = False
    reference_errors: bool = False
    est_reduction_tol: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if self.strategy not in ("union", "min-cardinality"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        for name in ("gamma_p", "gamma_d"):
            g = getattr(self, name)
            if g is not None and g <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ConvergenceRecord:
    k: int
    N: int
    leaves: int
    eta: float
    zeta: float
    osc_p: float
    osc_d: float
    energy_err_p: float
    energy_err_d: float
    Q_p: float
    Q_d: float
    E_p: float
    E_d: float
    goal_err: float
    goal_bound: float
    dorfler_ratio_p: float
    dorfler_ratio_d: float
    contraction_p: float
    contraction_d: float
    qo_defect: float
    qo_rel_defect: float
    est_reduction_ok: float    # 1/0, NaN when not evaluated
    est_monotone_ok: float
    marked: int
    refined: int
    data_eta_max: float = NAN
    data_osc_max: float = NAN

    @staticmethod
    def columns():
        return [f.name for f in dc_fields(ConvergenceRecord)]

    def row(self):
        return [getattr(self, name) for name in self.columns()]


@dataclass
class ConvergenceHistory:
    case_name: str
    config: DriverConfig
    records: list = field(default_factory=list)
    gamma_p: float = NAN
    gamma_d: float = NAN
    error_provenance: str = "none"    # exact | reference | none
    final: dict | None = None         # mesh/space/solutions of the last pass

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def fit_rate(self, y, x="N", window=0.0):
        return fit_rate(self.column(x), self.column(y), window=window)


def quasi_error(energy_err, estimator, gamma):
    """sqrt(e^2 + gamma * eta^2)."""
    if energy_err < 0 or estimator < 0:
        raise ValueError("inputs must be nonnegative")
    return math.sqrt(energy_err ** 2 + gamma * estimator ** 2)


def total_error(energy_err, osc_total):
    if energy_err < 0 or osc_total < 0:
        raise ValueError("inputs must be nonnegative")
    return math.hypot(energy_err, osc_total)


def fit_rate(xs, ys, window=0.0):
    """Least-squares slope of log y against log x.

    window = 0 fits over the final decade of x; a value in (0, 1] fits
    over that trailing fraction of the samples instead.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = np.isfinite(xs) & np.isfinite(ys) & (xs > 0) & (ys > 0)
    xs, ys = xs[keep], ys[keep]
    if window and window > 0.0:
        n = max(int(math.ceil(len(xs) * window)), 4)
        xs, ys = xs[-n:], ys[-n:]
    else:
        sel = xs >= xs.max() / 10.0
        if sel.sum() >= 4:
            xs, ys = xs[sel], ys[sel]
    if len(xs) < 2:
        raise ValueError("need at least 2 usable points for a rate fit")
    lx, ly = np.log(xs), np.log(ys)
    slope = np.polyfit(lx, ly, 1)[0]
    return float(slope)


def estimator_reduction_check(total2_old, total2_old_marked, total2_new,
                              lam=LAMBDA_RED, tol=1e-10):
    """Carried-function inequality eta2_new <= eta2_old - lam*eta2_marked."""
    return total2_new <= total2_old - lam * total2_old_marked + tol


# ----------------------------------------------------------------------

def _solve_pair(space, data, cfg, history):
    sys_p = assemble(space, data)
    x, rep = solve(sys_p, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
                   method=cfg.solver_method)
    if not rep.converged:
        raise SolverFailure(
            f"primal solve failed at N={space.num_dofs}: {rep}", history)
    u = FeSolution(space, space.expand(x))
    sys_d = assemble_dual(space, data)
    xz, repz = solve(sys_d, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
                     method=cfg.solver_method)
    if not repz.converged:
        raise SolverFailure(
            f"dual solve failed at N={space.num_dofs}: {repz}", history)
    z = FeSolution(space, space.expand(xz))
    return u, z


def _energy_err(space, data, fh, exact, qd):
    if exact is None:
        return NAN
    return energy_norm_diff(space, data, fh, exact, quad_degree=qd)


def run(case, cfg=None, on_iteration=None):
    """Drive the adaptive loop on a manufactured case; returns history.

    ``on_iteration(k, mesh, space, u, z, eta_field, zeta_field)`` is
    called once per iteration after estimation, before marking.
    """
    cfg = cfg or DriverConfig()
    data = case.data
    qd = cfg.norm_quad_degree
    mesh = data.domain.mesh()
    history = ConvergenceHistory(case.name, cfg)
    history.error_provenance = "exact" if case.exact_u is not None else "none"

    dual_d = data.dual()
    exact_goal = case.exact_goal if case.exact_u is not None else NAN

    space = build_space(mesh, cfg.degree)
    prev = None       # dict with previous iterate data
    snapshots = []    # for reference-based errors
    k = 0
    while True:
        u, z = _solve_pair(space, data, cfg, history)
        etaf = indicators(space, data, u, p=cfg.p, side="primal")
        zetaf = indicators(space, data, z, p=cfg.p, side="dual")
        eta_tot = estimator_total(etaf)
        zeta_tot = estimator_total(zetaf)
        osc_p = oscillation_total(etaf)
        osc_d = oscillation_total(zetaf)

        e_p = _energy_err(space, data, u, case.exact_u, qd)
        e_d = _energy_err(space, dual_d, z, case.exact_z, qd)
        if case.exact_u is not None:
            gk = goal_value(space, data.goal_g, u, quad_degree=qd)
            goal_err = abs(exact_goal - gk)
        else:
            goal_err = NAN
        goal_bound = 2.0 * e_p * e_d

        if k == 0:
            history.gamma_p = cfg.gamma_p if cfg.gamma_p is not None else (
                (e_p ** 2 / eta_tot ** 2)
                if math.isfinite(e_p) and eta_tot > 0
                else 1.0 / max(eta_tot, 1e-30) ** 2)
            history.gamma_d = cfg.gamma_d if cfg.gamma_d is not None else (
                (e_d ** 2 / zeta_tot ** 2)
                if math.isfinite(e_d) and zeta_tot > 0
                else 1.0 / max(zeta_tot, 1e-30) ** 2)

        Q_p = quasi_error(e_p, eta_tot, history.gamma_p) \
            if math.isfinite(e_p) else NAN
        Q_d = quasi_error(e_d, zeta_tot, history.gamma_d) \
            if math.isfinite(e_d) else NAN
        E_p = total_error(e_p, osc_p) if math.isfinite(e_p) else NAN
        E_d = total_error(e_d, osc_d) if math.isfinite(e_d) else NAN

        qo_def = qo_rel = NAN
        contr_p = contr_d = NAN
        if prev is not None:
            if case.exact_u is not None:
                up_c = FeSolution(space, carry(prev["space"],
                                               prev["u"].coeffs, space))
                diff = FeSolution(space, u.coeffs - up_c.coeffs)
                e_prev = energy_norm_diff(space, data, up_c, case.exact_u,
                                          quad_degree=qd)
                e_inc = energy_norm_diff(space, data, diff, None,
                                         quad_degree=qd)
                qo_def = e_p ** 2 + e_inc ** 2 - e_prev ** 2
                qo_rel = abs(qo_def) / e_prev ** 2 if e_prev > 0 else NAN
            if math.isfinite(Q_p) and prev["Q_p"] > 0:
                contr_p = Q_p / prev["Q_p"]
            if math.isfinite(Q_d) and prev["Q_d"] > 0:
                contr_d = Q_d / prev["Q_d"]

        rec = ConvergenceRecord(
            k=k, N=space.num_dofs, leaves=space.num_elems,
            eta=eta_tot, zeta=zeta_tot, osc_p=osc_p, osc_d=osc_d,
            energy_err_p=e_p, energy_err_d=e_d,
            Q_p=Q_p, Q_d=Q_d, E_p=E_p, E_d=E_d,
            goal_err=goal_err, goal_bound=goal_bound,
            dorfler_ratio_p=NAN, dorfler_ratio_d=NAN,
            contraction_p=contr_p, contraction_d=contr_d,
            qo_defect=qo_def, qo_rel_defect=qo_rel,
            est_reduction_ok=NAN, est_monotone_ok=NAN,
            marked=0, refined=0)
        if cfg.track_data_estimates:
            de = data_estimates(space, data, p=cfg.p)
            rec.data_eta_max = de.eta_max
            rec.data_osc_max = de.osc_max
        history.records.append(rec)
        if cfg.reference_errors and case.exact_u is None:
            snapshots.append((space, u, z))
        if on_iteration is not None:
            on_iteration(k, mesh, space, u, z, etaf, zetaf)

        stop = (k + 1 >= cfg.max_iterations
                or space.num_dofs >= cfg.dof_budget
                or (eta_tot == 0.0 and zeta_tot == 0.0))
        if stop:
            break

        mp = dorfler_mark(etaf, cfg.theta, bin_count=cfg.bin_count)
        md = dorfler_mark(zetaf, cfg.theta, bin_count=cfg.bin_count)
        if cfg.strategy == "union":
            marked = mp | md
        else:
            marked = mp if len(mp) <= len(md) else md
        _, rp = verify_dorfler(etaf, marked, cfg.theta)
        _, rd = verify_dorfler(zetaf, marked, cfg.theta)
        rec.dorfler_ratio_p = rp
        rec.dorfler_ratio_d = rd
        rec.marked = len(marked)

        report = mesh.refine(marked)
        rec.refined = len(report.refined_set)
        fine_space = build_space(mesh, cfg.degree)

        if cfg.p == 2:
            u_carried = FeSolution(fine_space,
                                   carry(space, u.coeffs, fine_space))
            eta_new = indicators(fine_space, data, u_carried, p=2,
                                 side="primal")
            t2_new = estimator_total(eta_new) ** 2
            t2_old = eta_tot ** 2
            t2_mark = estimator_total(etaf, subset=marked) ** 2
            rec.est_reduction_ok = float(estimator_reduction_check(
                t2_old, t2_mark, t2_new, tol=cfg.est_reduction_tol))
            rec.est_monotone_ok = float(
                math.sqrt(t2_new) <= eta_tot + cfg.est_reduction_tol)

        prev = {"space": space, "u": u, "z": z, "Q_p": Q_p, "Q_d": Q_d}
        space = fine_space
        k += 1

    history.final = {"mesh": mesh, "space": space, "u": u, "z": z,
                     "eta_field": etaf, "zeta_field": zetaf}
    if cfg.reference_errors and case.exact_u is None and snapshots:
        _reference_pass(history, snapshots, mesh, data, dual_d, cfg)
    return history


def _reference_pass(history, snapshots, mesh, data, dual_d, cfg):
    """Recompute energy errors against a twice-refined reference solve."""
    ref_mesh = mesh.clone()
    ref_mesh.refine_uniform(2)
    ref_space = build_space(ref_mesh, cfg.degree)
    u_ref, z_ref = _solve_pair(ref_space, data, cfg, history)
    qd = cfg.norm_quad_degree
    for rec, (space, u, z) in zip(history.records, snapshots):
        uc = carry(space, u.coeffs, ref_space)
        zc = carry(space, z.coeffs, ref_space)
        du = FeSolution(ref_space, u_ref.coeffs - uc)
        dz = FeSolution(ref_space, z_ref.coeffs - zc)
        rec.energy_err_p = energy_norm_diff(ref_space, data, du, None,
                                            quad_degree=qd)
        rec.energy_err_d = energy_norm_diff(ref_space, dual_d, dz, None,
                                            quad_degree=qd)
        rec.goal_bound = 2.0 * rec.energy_err_p * rec.energy_err_d
        g_ref = goal_value(ref_space, data.goal_g, u_ref, quad_degree=qd)
        gk = goal_value(space, data.goal_g, u, quad_degree=qd)
        rec.goal_err = abs(g_ref - gk)
    history.error_provenance = "reference"
    if history.records:
        r0 = history.records[0]
        if r0.eta > 0:
            history.gamma_p = r0.energy_err_p ** 2 / r0.eta ** 2
        if r0.zeta > 0:
            history.gamma_d = r0.energy_err_d ** 2 / r0.zeta ** 2
        prev_q = {}
        for rec in history.records:
            rec.Q_p = quasi_error(rec.energy_err_p, rec.eta, history.gamma_p)
            rec.Q_d = quasi_error(rec.energy_err_d, rec.zeta, history.gamma_d)
            rec.E_p = total_error(rec.energy_err_p, rec.osc_p)
            rec.E_d = total_error(rec.energy_err_d, rec.osc_d)
            if prev_q:
                rec.contraction_p = rec.Q_p / prev_q["p"]
                rec.contraction_d = rec.Q_d / prev_q["d"]
            prev_q = {"p": rec.Q_p, "d": rec.Q_d}


def run_uniform(case, cfg=None, rounds=8, dof_budget=None):
    """Uniform-refinement baseline: solve + errors on nested meshes."""
    cfg = cfg or DriverConfig()
    data = case.data
    dual_d = data.dual()
    qd = cfg.norm_quad_degree
    mesh = data.domain.mesh()
    history = ConvergenceHistory(case.name + "-uniform", cfg)
    history.error_provenance = "exact" if case.exact_u is not None else "none"
    budget = dof_budget or cfg.dof_budget
    exact_goal = case.exact_goal if case.exact_u is not None else NAN
    for k in range(rounds + 1):
        space = build_space(mesh, cfg.degree)
        u, z = _solve_pair(space, data, cfg, history)
        etaf = indicators(space, data, u, p=cfg.p, side="primal")
        zetaf = indicators(space, data, z, p=cfg.p, side="dual")
        e_p = _energy_err(space, data, u, case.exact_u, qd)
        e_d = _energy_err(space, dual_d, z, case.exact_z, qd)
        if case.exact_u is not None:
            gk = goal_value(space, data.goal_g, u, quad_degree=qd)
            goal_err = abs(exact_goal - gk)
        else:
            goal_err = NAN
        rec = ConvergenceRecord(
            k=k, N=space.num_dofs, leaves=space.num_elems,
            eta=estimator_total(etaf), zeta=estimator_total(zetaf),
            osc_p=oscillation_total(etaf), osc_d=oscillation_total(zetaf),
            energy_err_p=e_p, energy_err_d=e_d,
            Q_p=NAN, Q_d=NAN, E_p=NAN, E_d=NAN,
            goal_err=goal_err, goal_bound=2.0 * e_p * e_d,
            dorfler_ratio_p=NAN, dorfler_ratio_d=NAN,
            contraction_p=NAN, contraction_d=NAN,
            qo_defect=NAN, qo_rel_defect=NAN,
            est_reduction_ok=NAN, est_monotone_ok=NAN,
            marked=0, refined=0)
        history.records.append(rec)
        if space.num_dofs >= budget or k == rounds:
            break
        mesh.refine(mesh.leaf_ids())
    return history
