"""Batch front-end: config files, CSV/VTK export, studies.

Configuration files are plain text ``key = value`` lines with dotted
section prefixes (``mark.theta = 0.5``).  Unknown keys are rejected.
Exports are pure functions of the run data; timestamps live only in a
sidecar metadata file so data files stay byte-stable.

Subcommands::

    goafem run <config>       one adaptive run, CSV + optional VTK
    goafem sweep <cfg> [...]  several runs, aligned summary table
    goafem duality <config>   L2/energy ratio study on uniform meshes
"""

from __future__ import annotations

import argparse
import ast
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .driver import ConvergenceRecord, DriverConfig, SolverFailure, \
    fit_rate, run, run_uniform
from .fem import FeSolution, assemble, build_space, energy_norm_diff, \
    l2_norm_diff
from .problem import manufactured, problem_names
from .solver import solve as _solve


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    problem: str = "square-smooth"
    problem_params: dict = field(default_factory=dict)
    driver: DriverConfig = field(default_factory=DriverConfig)
    out_dir: str = "out"
    csv: bool = True
    vtk_every: int = 0          # 0: final state only when > 0 disabled
    mesh_every: int = 0
    seed: int = 0


# key -> (target attribute path, type checker)
_KEYS = {
    "problem": ("problem", str),
    "output.dir": ("out_dir", str),
    "output.csv": ("csv", bool),
    "output.vtk_every": ("vtk_every", int),
    "output.mesh_every": ("mesh_every", int),
    "seed": ("seed", int),
    "mark.theta": ("driver.theta", float),
    "mark.strategy": ("driver.strategy", str),
    "mark.bins": ("driver.bin_count", int),
    "fem.degree": ("driver.degree", int),
    "estimator.p": ("driver.p", int),
    "driver.max_iterations": ("driver.max_iterations", int),
    "driver.dof_budget": ("driver.dof_budget", int),
    "driver.gamma_p": ("driver.gamma_p", float),
    "driver.gamma_d": ("driver.gamma_d", float),
    "driver.norm_quad_degree": ("driver.norm_quad_degree", int),
    "driver.track_data_estimates": ("driver.track_data_estimates", bool),
    "driver.reference_errors": ("driver.reference_errors", bool),
    "solver.tol": ("driver.solver_tol", float),
    "solver.max_iter": ("driver.solver_max_iter", int),
    "solver.method": ("driver.solver_method", str),
}


def _parse_value(text, lineno):
    low = text.strip()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return ast.literal_eval(low)
    except (ValueError, SyntaxError):
        raise ConfigError(f"line {lineno}: cannot parse value {text!r}")


def parse_config_text(text):
    cfg = RunConfig()
    driver_kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        value = _parse_value(val, lineno)
        if key.startswith("problem."):
            cfg.problem_params[key[len("problem."):]] = value
            continue
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        path, typ = _KEYS[key]
        if typ is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, typ):
            raise ConfigError(
                f"line {lineno}: key {key!r} expects {typ.__name__}")
        if path.startswith("driver."):
            driver_kwargs[path[len("driver."):]] = value
        else:
            setattr(cfg, path, value)
    try:
        cfg.driver = replace(DriverConfig(), **driver_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc))
    if not (0.0 < cfg.driver.theta <= 1.0):
        raise ConfigError("mark.theta must lie in (0, 1]")
    return cfg


def parse_config(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config_text(p.read_text())


def serialize_config(cfg):
    """Render a RunConfig back to config-file text (round-trips)."""
    lines = [f'problem = "{cfg.problem}"']
    for k, v in sorted(cfg.problem_params.items()):
        lines.append(f"problem.{k} = {v!r}")
    defaults = RunConfig()
    for key, (path, _typ) in sorted(_KEYS.items()):
        if key == "problem":
            continue
        if path.startswith("driver."):
            cur = getattr(cfg.driver, path[len("driver."):])
            base = getattr(defaults.driver, path[len("driver."):])
        else:
            cur = getattr(cfg, path)
            base = getattr(defaults, path)
        if cur == base:
            continue
        if isinstance(cur, bool):
            lines.append(f"{key} = {'true' if cur else 'false'}")
        elif isinstance(cur, str):
            lines.append(f'{key} = "{cur}"')
        else:
            lines.append(f"{key} = {cur!r}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# exports

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def emit_csv(history, path):
    if not history.records:
        raise ValueError("empty history")
    with open(path, "w") as fh:
        fh.write(",".join(ConvergenceRecord.columns()) + "\n")
        for rec in history.records:
            fh.write(",".join(_fmt(v) for v in rec.row()) + "\n")


def emit_vtk(state, path):
    """Legacy ASCII unstructured-grid export of one mesh generation.

    ``state`` is the dict stored on ``history.final`` (mesh, space,
    u, z, eta_field, zeta_field).
    """
    space = state["space"]
    mesh = state["mesh"]
    u = state["u"]
    z = state["z"]
    etaf = state["eta_field"]
    zetaf = state["zeta_field"]
    nv = len(space.x)
    m = space.num_elems
    gens = np.array([mesh.gen[t] for t in space.elem_ids], dtype=float)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("goafem state\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for i in range(nv):
            fh.write(f"{space.x[i]:.17g} {space.y[i]:.17g} 0\n")
        fh.write(f"CELLS {m} {4 * m}\n")
        for tri in space.tri:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {m}\n")
        fh.write("\n".join(["5"] * m) + "\n")
        fh.write(f"POINT_DATA {nv}\n")
        for name, coeffs in (("u", u.coeffs), ("z", z.coeffs)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for i in range(nv):
                fh.write(f"{coeffs[i]:.17g}\n")
        fh.write(f"CELL_DATA {m}\n")
        for name, vals in (("eta", etaf.eta), ("zeta", zetaf.eta),
                           ("osc_p", etaf.osc), ("osc_d", zetaf.osc),
                           ("generation", gens)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in vals:
                fh.write(f"{v:.17g}\n")


def emit_gnuplot(history, csv_name, path):
    cols = ConvergenceRecord.columns()
    n_col = cols.index("N") + 1
    pairs = [("eta", "estimator"), ("energy_err_p", "energy error"),
             ("goal_err", "goal error")]
    with open(path, "w") as fh:
        fh.write("set logscale xy\nset datafile separator ','\n")
        fh.write("set xlabel 'N'\nset key left bottom\n")
        parts = []
        for name, label in pairs:
            c = cols.index(name) + 1
            parts.append(f"'{csv_name}' using {n_col}:{c} "
                         f"with linespoints title '{label}'")
        fh.write("plot " + ", \\\n     ".join(parts) + "\n")


# ----------------------------------------------------------------------
# studies

@dataclass
class DualityReport:
    problem: str
    h: list
    ratio: list
    s_fitted: float


def duality_study(problem, rounds=8, degree=1, norm_quad_degree=8,
                  **params):
    """Tabulate ||u-u_k||_L2 / |||u-u_k||| on uniform meshes; fit h^s.

    The exponent is fitted over the finer (trailing) half of the mesh
    sequence, where the ratio is in its asymptotic regime.
    """
    case = problem if not isinstance(problem, str) \
        else manufactured(problem, **params)
    if case.exact_u is None:
        raise ValueError("duality study needs an exact solution")
    data = case.data
    mesh = data.domain.mesh()
    hs, ratios = [], []
    for _ in range(rounds + 1):
        space = build_space(mesh, degree)
        sysm = assemble(space, data)
        x, rep = _solve(sysm)
        if not rep.converged:
            raise SolverFailure(f"solve failed at N={space.num_dofs}")
        u = FeSolution(space, space.expand(x))
        e2 = l2_norm_diff(space, u, case.exact_u,
                          quad_degree=norm_quad_degree)
        ee = energy_norm_diff(space, data, u, case.exact_u,
                              quad_degree=norm_quad_degree)
        hs.append(float(space.h.max()))
        ratios.append(e2 / ee)
        mesh.refine(mesh.leaf_ids())
    s = fit_rate(hs, ratios, window=0.5)
    return DualityReport(case.name, hs, ratios, s)


def compare_runs(configs):
    """Run several configs; summarize fitted goal rate and final N."""
    if not configs:
        raise ValueError("need at least one config")
    rows = []
    for cfg in configs:
        case = manufactured(cfg.problem, **cfg.problem_params)
        history = run(case, cfg.driver)
        try:
            rate = history.fit_rate("goal_err")
        except ValueError:
            rate = float("nan")
        rows.append({
            "problem": cfg.problem,
            "theta": cfg.driver.theta,
            "strategy": cfg.driver.strategy,
            "iterations": len(history.records),
            "final_N": history.records[-1].N,
            "goal_rate": rate,
            "history": history,
        })
    return rows


def format_table(rows):
    head = f"{'problem':<16}{'theta':>7}{'strategy':>17}{'iters':>7}" \
           f"{'final_N':>9}{'goal_rate':>11}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['problem']:<16}{r['theta']:>7.3g}"
                     f"{r['strategy']:>17}{r['iterations']:>7}"
                     f"{r['final_N']:>9}{r['goal_rate']:>11.3f}")
    return "\n".join(lines)


# ----------------------------------------------------------------------
# theory verdicts for --strict-theory

def theory_violations(history):
    out = []
    for rec in history.records:
        if rec.est_reduction_ok == 0.0:
            out.append(f"k={rec.k}: estimator reduction inequality failed")
        if rec.est_monotone_ok == 0.0:
            out.append(f"k={rec.k}: carried-estimator monotonicity failed")
        theta2 = history.config.theta ** 2
        for nm, ratio in (("primal", rec.dorfler_ratio_p),
                          ("dual", rec.dorfler_ratio_d)):
            if np.isfinite(ratio) and history.config.strategy == "union" \
                    and ratio < theta2 * (1 - 1e-12):
                out.append(f"k={rec.k}: {nm} Dorfler bulk missed")
    return out


# ----------------------------------------------------------------------
# entry point

def _cmd_run(args):
    cfg = parse_config(args.config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    case = manufactured(cfg.problem, **cfg.problem_params)

    callbacks = []

    def on_iter(k, mesh, space, u, z, etaf, zetaf):
        state = {"mesh": mesh, "space": space, "u": u, "z": z,
                 "eta_field": etaf, "zeta_field": zetaf}
        if cfg.vtk_every > 0 and k % cfg.vtk_every == 0:
            emit_vtk(state, out / f"state_{k:04d}.vtk")
        if cfg.mesh_every > 0 and k % cfg.mesh_every == 0:
            mesh.write(out / f"mesh_{k:04d}.txt")

    if cfg.vtk_every > 0 or cfg.mesh_every > 0:
        callbacks.append(on_iter)

    history = run(case, cfg.driver,
                  on_iteration=callbacks[0] if callbacks else None)
    if cfg.csv:
        emit_csv(history, out / "convergence.csv")
        emit_gnuplot(history, "convergence.csv", out / "convergence.gp")
    emit_vtk(history.final, out / "final.vtk")
    (out / "config.txt").write_text(serialize_config(cfg))
    (out / "metadata.txt").write_text(
        f"written {time.strftime('%Y-%m-%dT%H:%M:%S')}\n"
        f"problem {cfg.problem}\n"
        f"gamma_p {history.gamma_p:.17g}\ngamma_d {history.gamma_d:.17g}\n"
        f"error_provenance {history.error_provenance}\n")
    rec = history.records[-1]
    print(f"{cfg.problem}: {len(history.records)} iterations, "
          f"final N={rec.N}, eta={rec.eta:.3e}, zeta={rec.zeta:.3e}")
    if args.strict_theory:
        bad = theory_violations(history)
        if bad:
            for msg in bad:
                print("theory violation:", msg, file=sys.stderr)
            return 4
    return 0


def _cmd_sweep(args):
    cfgs = [parse_config(p) for p in args.configs]
    rows = compare_runs(cfgs)
    print(format_table(rows))
    if args.strict_theory:
        for r in rows:
            if theory_violations(r["history"]):
                return 4
    return 0


def _cmd_duality(args):
    cfg = parse_config(args.config)
    rep = duality_study(cfg.problem, degree=cfg.driver.degree,
                        norm_quad_degree=cfg.driver.norm_quad_degree,
                        **cfg.problem_params)
    print(f"{rep.problem}: fitted regularity exponent s = {rep.s_fitted:.4f}")
    for h, r in zip(rep.h, rep.ratio):
        print(f"  h={h:.6g}  L2/energy={r:.6g}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="goafem",
        description="Goal-oriented adaptive FEM batch runner. Built-in "
                    f"problems: {', '.join(problem_names())}. Config "
                    "defaults: mark.theta=0.5, fem.degree=1, "
                    "estimator.p=2, driver.dof_budget=100000.")
    parser.add_argument("--strict-theory", action="store_true",
                        help="exit 4 if a theory diagnostic fails")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="one adaptive run from a config file")
    p_run.add_argument("config")
    p_sweep = sub.add_parser("sweep", help="compare several configs")
    p_sweep.add_argument("configs", nargs="+")
    p_dual = sub.add_parser("duality", help="uniform-mesh duality study")
    p_dual.add_argument("config")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "duality":
            return _cmd_duality(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
