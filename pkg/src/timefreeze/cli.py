"""Command-line scenario runner.

    timefreeze simulate|aux-check|converge|ocp CONFIG [--out DIR] [--verbose]
    timefreeze list

CONFIG is a TOML or JSON file or the name of a shipped scenario. Exit status
is 0 on success, 2 for invalid configurations and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, kernels
from .config import (
    ConfigError,
    augmented_y0,
    build_system,
    builtin_scenarios,
    load_config,
    pseudo_horizon,
)
from .dynamics import Assumption1Error, DomainError, NonOrthogonalConstraintsError, verify_assumption1
from .nlp import NlpSolverError
from .ocp import (
    HomotopyError,
    HomotopySchedule,
    OcpDefinition,
    complementarity_residual,
    extract_solution,
    initial_guess,
    objective_terms,
    solve_homotopy,
    transcribe,
)
from .simulate import (
    RK4,
    IntegrationError,
    ZenoError,
    analytic_bouncing_ball,
    convergence_study,
    detect_jumps,
    integrate,
    recover_physical,
    terminal_state,
)

__all__ = ["main", "run"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
log = logging.getLogger("timefreeze")


def _ball_oracle(cfg, sys, y0):
    if sys.base.name != "bouncing-ball":
        raise ConfigError("run.oracle: the bouncing-ball oracle needs system.builtin = 'bouncing-ball'")
    g = cfg["system"].get("g", 9.81)
    return lambda t: np.array(analytic_bouncing_ball(y0[0], y0[1], sys.base.gamma, g, t))


def _controls(cfg, sys):
    u = cfg.get("run", {}).get("u")
    if u is None:
        return None
    u = np.asarray(u, dtype=float)
    if u.shape != (sys.n_u,):
        raise ConfigError(f"run.u: expected {sys.n_u} entries, got {u.size}")
    return u


def _jump_record(j, sys):
    rec = {"t": j.t, "constraints": list(j.constraints), "pre_index": j.pre_index,
           "post_index": j.post_index}
    if j.complete and j.constraints:
        m = sys.n_x // 2
        ratios = {}
        for i in j.constraints:
            n = sys.constraints[i].normal
            vn_pre = float(n @ j.pre_state[m:])
            vn_post = float(n @ j.post_state[m:])
            ratios[str(i)] = {"pre": vn_pre, "post": vn_post,
                              "ratio": vn_post / vn_pre if vn_pre else float("nan")}
        rec["normal_velocity"] = ratios
    return rec


def run_simulate(cfg, out: Path, formats) -> tuple:
    sys = build_system(cfg)
    run = cfg["run"]
    y0 = augmented_y0(sys, run["y0"])
    tau_f = pseudo_horizon(cfg, sys)
    h = float(run.get("h", 1e-3))
    scheme = run.get("scheme", RK4)
    t0 = time.perf_counter()
    traj = integrate(sys, y0, _controls(cfg, sys), tau_f, h, scheme)
    elapsed = time.perf_counter() - t0
    phys = recover_physical(traj)
    jumps = detect_jumps(traj, sys)
    summary = {
        "kind": "simulate", "name": cfg["name"], "system": sys.base.name, "scheme": traj.scheme,
        "h": traj.h, "tau_f": tau_f, "n_steps": traj.n_steps, "backend": kernels.BACKEND,
        "runtime_s": elapsed, "n_jumps": len(jumps),
        "jumps": [_jump_record(j, sys) for j in jumps],
        "final_clock": float(traj.clock[-1]),
    }
    line = f"simulate {cfg['name']}: {len(jumps)} jumps, t(tau_f) = {traj.clock[-1]:.6g}"
    t_f = run.get("t_f")
    if t_f is not None:
        x_tf = terminal_state(phys, t_f)
        summary["t_f"] = t_f
        summary["x_tf"] = x_tf
        if run.get("oracle", "bouncing-ball" if sys.base.name == "bouncing-ball" else "none") != "none":
            exact = _ball_oracle(cfg, sys, y0)(t_f)
            err = float(np.linalg.norm(exact - x_tf))
            summary["x_exact"] = exact
            summary["terminal_error"] = err
            line += f", E({t_f:g}) = {err:.3e}"
    if "csv" in formats:
        io.write_trajectory_csv(out / "trajectory.csv", traj)
        io.write_physical_csv(out / "physical.csv", phys)
    return summary, line


def run_aux_check(cfg, out: Path, formats) -> tuple:
    sys = build_system(cfg)
    aux = cfg.get("aux", {})
    idx = int(aux.get("constraint", 0))
    if idx >= sys.n_c:
        raise ConfigError(f"aux.constraint: system has only {sys.n_c} constraints")
    if "x0" in aux:
        x0 = np.asarray(aux["x0"], dtype=float)
        if x0.size != sys.n_x:
            raise ConfigError(f"aux.x0: expected {sys.n_x} entries")
    else:  # unit approach speed on the boundary
        con = sys.constraints[idx]
        x0 = np.concatenate([-con.offset * con.normal, -con.normal])
    fine_dt = float(aux.get("fine_dt", 1e-6))
    ks = aux.get("k_values") or [sys.aux_params[idx].k]
    checks = []
    for k in ks:
        sys_k = sys if k == sys.aux_params[idx].k else _with_k(cfg, k)
        rep = verify_assumption1(sys_k.fields[idx], x0, fine_dt)
        checks.append({
            "k": k, "c": sys_k.aux_params[idx].c, "tau_jump": rep.tau_jump,
            "tau_return": rep.tau_return, "restitution_ratio": rep.restitution_ratio,
            "stayed_in_Vminus": rep.stayed_in_Vminus, "x_return": rep.x_return,
            "returned_to_Splus": rep.returned_to_Splus,
        })
    gamma = sys.base.gamma
    worst = max(abs(c["restitution_ratio"] - gamma) for c in checks)
    summary = {"kind": "aux-check", "name": cfg["name"], "constraint": idx, "x0": x0,
               "fine_dt": fine_dt, "gamma": gamma, "checks": checks, "max_ratio_error": worst,
               "backend": kernels.BACKEND}
    line = (f"aux-check {cfg['name']}: {len(checks)} stiffness value(s), "
            f"tau_return = {checks[0]['tau_return']:.6g}, max |ratio - gamma| = {worst:.2e}")
    return summary, line


def _with_k(cfg, k):
    cfg2 = {**cfg, "system": {**cfg["system"], "k": k}}
    return build_system(cfg2)


def run_converge(cfg, out: Path, formats) -> tuple:
    sys = build_system(cfg)
    run = cfg["run"]
    conv = cfg["converge"]
    y0 = augmented_y0(sys, run.get("y0", [0.5, 0.0]))
    tau_f = pseudo_horizon(cfg, sys)
    t_f = float(run["t_f"])
    schemes = conv.get("schemes", ["explicit-euler", "rk4"])
    oracle = _ball_oracle(cfg, sys, y0)
    t0 = time.perf_counter()
    table = convergence_study(sys, y0, oracle, tau_f, t_f, schemes, conv["M"],
                              threads=conv.get("threads"))
    elapsed = time.perf_counter() - t0
    summary = {"kind": "converge", "name": cfg["name"], "tau_f": tau_f, "t_f": t_f,
               "orders": table.orders,
               "inversions": {s: table.inversions(s) for s in table.orders},
               "rows": [{"scheme": s, "M": M, "h": h, "E": E} for s, M, h, E in table.rows],
               "runtime_s": elapsed, "backend": kernels.BACKEND}
    if "csv" in formats:
        io.write_convergence_csv(out / "convergence.csv", table)
    orders = ", ".join(f"{s} p = {p:.3f}" for s, p in table.orders.items())
    return summary, f"converge {cfg['name']}: {orders}"


def run_ocp(cfg, out: Path, formats) -> tuple:
    sys = build_system(cfg)
    oc = cfg["ocp"]
    run = cfg.get("run", {})
    y0 = augmented_y0(sys, run.get("y0", [4.0, 4.0, 1.0, -3.0, -3.5, 0.0]))
    mass = cfg["system"].get("mass", 1.0)
    g = cfg["system"].get("g", 9.81)
    ub = oc.get("u_upper", mass * g)
    lb = oc.get("u_lower", -np.asarray(ub, dtype=float))
    try:
        ocp = OcpDefinition(sys, y0, oc.get("target"), oc.get("rho", 100.0),
                            lb if sys.n_u else None, ub if sys.n_u else None,
                            oc.get("w_max", 20.0), oc.get("N", 50), oc.get("N_ctrl"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ocp: {exc}") from None
    nlp = transcribe(ocp)
    hs = oc.get("homotopy", {})
    schedule = HomotopySchedule(hs.get("mu0", 1e-3), hs.get("factor", 10.0), hs.get("count", 7))
    guess = oc.get("state_guess", "line" if ocp.q_target is not None else "hold")
    x0 = initial_guess(nlp, states=guess)
    t0 = time.perf_counter()
    res = solve_homotopy(nlp, schedule, x0, tol=oc.get("tol", 1e-8),
                         max_iter=oc.get("max_iter", 500),
                         log=lambda rec: log.info("stage %(stage)d mu=%(mu)g iterations=%(iterations)d "
                                                  "t_final=%(t_final).6f comp=%(comp_residual).2e", rec))
    elapsed = time.perf_counter() - t0
    sol = extract_solution(nlp, res.x)
    terms = objective_terms(nlp, res.x, res.mu)
    qN = sol.nodes["Y"][-1, : (0 if ocp.q_target is None else ocp.q_target.size)]
    summary = {
        "kind": "ocp", "name": cfg["name"], "t_final": sol.t_final, "w": sol.w,
        "objective": terms["objective"], "terminal_penalty": terms["terminal_penalty"],
        "comp_residual": complementarity_residual(nlp, res.x),
        "max_violation": res.max_violation, "stages": res.stages, "n_stages": len(res.stages),
        "q_final": qN, "target": ocp.q_target,
        "terminal_distance": None if ocp.q_target is None else float(np.linalg.norm(qN - ocp.q_target)),
        "state_guess": guess, "runtime_s": elapsed, "layout": nlp.metadata(),
    }
    if "csv" in formats:
        io.write_ocp_csv(out / "ocp_solution.csv", nlp, res.x)
        io.write_physical_csv(out / "physical.csv", sol.physical)
    line = (f"ocp {cfg['name']}: t(1) = {sol.t_final:.4f}, w = {sol.w:.4f}, "
            f"{len(res.stages)} homotopy stages, comp = {summary['comp_residual']:.1e}")
    return summary, line


RUNNERS = {"simulate": run_simulate, "aux-check": run_aux_check, "converge": run_converge,
           "ocp": run_ocp}


def run(kind: str, config, out: Optional[str] = None) -> tuple:
    """Run one scenario; returns (exit status, summary dict or None, message)."""
    try:
        cfg = load_config(config)
        if cfg["kind"] != kind:
            raise ConfigError(f"kind: file describes {cfg['kind']!r}, but {kind!r} was requested")
        output = cfg.get("output", {})
        directory = Path(out or output.get("directory") or Path("timefreeze-out") / cfg["name"])
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output.directory: cannot create {directory} ({exc})") from None
        formats = output.get("formats", ["csv", "json"])
        summary, line = RUNNERS[kind](cfg, directory, formats)
        if "json" in formats:
            io.write_json(directory / "summary.json", summary)
        return EXIT_OK, summary, line
    except (ConfigError, DomainError, NonOrthogonalConstraintsError) as exc:
        return EXIT_CONFIG, None, f"config error: {exc}"
    except (IntegrationError, ZenoError, Assumption1Error, HomotopyError, NlpSolverError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        return EXIT_NUMERICAL, None, f"numerical failure: {exc}"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timefreeze", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for kind in RUNNERS:
        sp = sub.add_parser(kind, help=f"run the {kind} scenario kind")
        sp.add_argument("config", help="TOML/JSON file or shipped scenario name")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub.add_parser("list", help="list shipped scenarios")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name in builtin_scenarios():
            print(name)
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    status, _, message = run(args.command, args.config, args.out)
    print(message, file=sys.stdout if status == EXIT_OK else sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
