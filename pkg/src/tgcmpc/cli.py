"""Command-line front end: offline synthesis, online tube solve, closed-loop
simulation, feasibility sweeps, and the self-check suite.

All commands are deterministic for a fixed seed, print machine-parsable
key=value summaries, and write their artifacts under --out.  Exit codes:
0 success, 1 check failure, 2 infeasible, 3 I/O or configuration error.
"""

import argparse
import csv
import os
import sys as _sys

import numpy as np

from . import model, synthesis, tube, sim
from .conic import SolveSettings

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3


def _settings_from_env():
    tol = os.environ.get("TGCMPC_SOLVER_TOL")
    if tol is None:
        return SolveSettings()
    return SolveSettings(feas_tol=float(tol))


def _load(args):
    path = args.problem
    if path is None:
        from . import bundled_problem_path
        path = str(bundled_problem_path())
    return model.load_problem(path)


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    if isinstance(v, np.ndarray):
        return "[" + ",".join(f"{x:.10g}" for x in np.ravel(v)) + "]"
    return str(v)


def _emit(**kv):
    for k, v in kv.items():
        print(f"{k}={_fmt(v)}")


def _offline(problem, args, settings):
    """GCC + RPI pipeline; loads cached JSON from --out when present."""
    gcc_path = os.path.join(args.out, "gcc.json")
    rpi_path = os.path.join(args.out, "rpi.json")
    if getattr(args, "reuse", False) and os.path.exists(gcc_path) and os.path.exists(rpi_path):
        return synthesis.GccSolution.load(gcc_path), synthesis.RpiSolution.load(rpi_path)
    gcc = synthesis.synthesize_gcc(problem.system, problem.cost, settings)
    if args.a_alpha is not None:
        rpi = synthesis.synthesize_mrpi(problem.system, gcc.K, args.a_alpha,
                                        objective="logdet")
    else:
        rpi = synthesis.line_search_a_alpha(problem.system, synthesis.synthesize_mrpi,
                                            objective="logdet", K_R=gcc.K)
    return gcc, rpi


def cmd_synthesize(args):
    problem = _load(args)
    settings = _settings_from_env()
    out = _outdir(args)
    gcc, rpi = _offline(problem, args, settings)
    gcc.save(os.path.join(out, "gcc.json"))
    rpi.save(os.path.join(out, "rpi.json"))
    _emit(trace_P=gcc.trace_P, a_alpha=rpi.a_alpha, a_sigma=rpi.a_sigma,
          gcc_path=os.path.join(out, "gcc.json"), rpi_path=os.path.join(out, "rpi.json"))
    return EXIT_OK


def cmd_tube(args):
    problem = _load(args)
    settings = _settings_from_env()
    out = _outdir(args)
    gcc, rpi = _offline(problem, args, settings)
    N = args.horizon or problem.horizon
    terminal = None
    if args.terminal:
        terminal = tube.terminal_shape_from_rpi(rpi, problem.constraints)
    consts = tube.precompute_tube_constants(problem.system, problem.constraints,
                                            gcc, rpi, terminal=terminal)
    tp = tube.TubeProblem(sys=problem.system, cost=problem.cost,
                          constraints=problem.constraints, gcc=gcc, rpi=rpi,
                          consts=consts, N=N, x0=problem.x0,
                          use_terminal=args.terminal)
    sol = tube.solve_tube(tp, settings)
    _emit(status=sol.status, horizon=N)
    if not sol.optimal:
        return EXIT_INFEASIBLE
    tube.export_csv(sol, os.path.join(out, "tube.csv"))
    _plot_tube(sol, rpi, os.path.join(out, "tube.svg"))
    _emit(objective=sol.objective, alpha_max=float(np.max(sol.alpha)),
          alpha_final=float(sol.alpha[-1]), csv=os.path.join(out, "tube.csv"))
    return EXIT_OK


def cmd_simulate(args):
    problem = _load(args)
    settings = _settings_from_env()
    out = _outdir(args)
    gcc, rpi = _offline(problem, args, settings)
    N = args.horizon or problem.horizon
    dist = sim.DisturbanceModel(_DIST_KINDS[args.disturbance], seed=args.seed)
    if args.controller == "gcc":
        controller = sim.GccOnlyController(gcc)
        bound = float(problem.x0 @ gcc.P @ problem.x0)
    else:
        controller = sim.TubeMpcController(problem.system, problem.cost,
                                           problem.constraints, gcc, rpi, N,
                                           settings=settings)
        first = controller.solve_from(problem.x0)
        if not first.optimal:
            _emit(status="infeasible")
            return EXIT_INFEASIBLE
        bound = tube.cost_bound(first, gcc)
    trace = sim.run_closed_loop(problem.system, problem.cost, problem.constraints,
                                controller, problem.x0, args.steps, dist)
    sim.export_trace_csv(trace, os.path.join(out, "trace.csv"))
    _plot_trace(trace, problem.constraints, os.path.join(out, "trace.svg"))
    realized = sim.realized_cost(trace, gcc) if trace.steps else 0.0
    _emit(status=trace.status, steps=trace.steps, realized_cost=realized,
          cost_bound=bound, violations=int(trace.violated.sum()),
          x_final_inf=float(np.max(np.abs(trace.x[-1]))),
          csv=os.path.join(out, "trace.csv"))
    return EXIT_OK if trace.status == "completed" else EXIT_INFEASIBLE


def cmd_sweep(args):
    problem = _load(args)
    settings = _settings_from_env()
    out = _outdir(args)
    gcc, rpi = _offline(problem, args, settings)
    N = args.horizon or problem.horizon
    direction = problem.x0 if np.any(problem.x0) else np.ones(problem.system.n_x)
    direction = direction / np.max(np.abs(direction))
    consts = tube.precompute_tube_constants(problem.system, problem.constraints, gcc, rpi)
    rows = []
    for lam in np.linspace(0.0, args.lambda_max, 41):
        tp = tube.TubeProblem(sys=problem.system, cost=problem.cost,
                              constraints=problem.constraints, gcc=gcc, rpi=rpi,
                              consts=consts, N=N, x0=lam * direction)
        try:
            s = tube.solve_tube(tp, settings)
        except RuntimeError:
            s = tube.TubeSolution(status="numerical_failure")
        rows.append((lam, int(s.optimal), s.objective if s.optimal else ""))
    lam_star = sim.feasibility_sweep(problem.system, problem.cost,
                                     problem.constraints, gcc, rpi, direction,
                                     N, args.lambda_max, args.tol, settings)
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "feasible", "objective"])
        for lam, feas, obj in rows:
            writer.writerow([repr(float(lam)), feas,
                             repr(float(obj)) if obj != "" else ""])
    _emit(lambda_star=lam_star, csv=path)
    return EXIT_OK


def cmd_check(args):
    from . import acceptance
    problem = _load(args)
    settings = _settings_from_env()
    gcc = rpi = None
    if args.gcc:
        gcc = synthesis.GccSolution.load(args.gcc)
    if args.rpi:
        rpi = synthesis.RpiSolution.load(args.rpi)
    suite = acceptance.AcceptanceSuite(problem, settings=settings,
                                       closed_loop_runs=args.runs,
                                       rollout_runs=2 * args.runs,
                                       gcc=gcc, rpi=rpi)
    results = suite.run_all()
    width = max(len(name) for _, name, _ in results)
    failures = 0
    for num, name, (ok, detail) in results:
        tag = "PASS" if ok else "FAIL"
        print(f"[{tag}] {num:>2} {name:<{width}} {detail}")
        failures += 0 if ok else 1
    _emit(criteria=len(results), failures=failures)
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


_DIST_KINDS = {"zero": "zero", "ball": "random_ball", "boundary": "boundary"}


# -- SVG emission (text-only, no plotting dependency) ---------------------------


def _svg_polyline(points, color, width=1.5, dash=None):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    d = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{d} '
            f'points="{pts}"/>')


def _svg_chart(path, title, series, y_extra=()):
    """series: list of (label, xs, ys, color, dash); writes a 640x360 chart."""
    W, H, ML, MR, MT, MB = 640, 360, 55, 15, 30, 35
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    y_parts = [np.asarray(s[2], dtype=float) for s in series]
    if len(y_extra):
        y_parts.append(np.asarray(y_extra, dtype=float))
    ys_all = np.concatenate(y_parts)
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def tx(x):
        return ML + (x - x0) / (x1 - x0) * (W - ML - MR)

    def ty(y):
        return H - MB - (y - y0) / (y1 - y0) * (H - MT - MB)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W/2:.0f}" y="18" text-anchor="middle" '
             f'font-family="sans-serif" font-size="13">{title}</text>']
    parts.append(_svg_polyline([(ML, ty(0.0)), (W - MR, ty(0.0))], "#999", 0.8)
                 if y0 < 0 < y1 else "")
    parts.append(f'<rect x="{ML}" y="{MT}" width="{W-ML-MR}" height="{H-MT-MB}" '
                 f'fill="none" stroke="#333" stroke-width="1"/>')
    for lab, x, y in [(f"{x0:.3g}", ML, H - MB + 14), (f"{x1:.3g}", W - MR, H - MB + 14)]:
        parts.append(f'<text x="{x}" y="{y}" font-family="sans-serif" '
                     f'font-size="11" text-anchor="middle">{lab}</text>')
    for lab, y in [(f"{y0:.3g}", H - MB), (f"{y1:.3g}", MT + 4)]:
        parts.append(f'<text x="{ML-5}" y="{y}" font-family="sans-serif" '
                     f'font-size="11" text-anchor="end">{lab}</text>')
    legend_y = MT + 14
    for label, xs, ys, color, dash in series:
        pts = [(tx(float(a)), ty(float(b))) for a, b in zip(xs, ys)]
        parts.append(_svg_polyline(pts, color, dash=dash))
        if label:
            parts.append(f'<text x="{W-MR-5}" y="{legend_y}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="11" '
                         f'fill="{color}">{label}</text>')
            legend_y += 14
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(p for p in parts if p) + "\n")


def _plot_tube(sol, rpi, path):
    N = sol.nu.shape[0]
    ks = np.arange(N + 1)
    E_inv = np.linalg.inv(rpi.E_R)
    colors = ["#1f77b4", "#2ca02c", "#9467bd"]
    series = []
    extra = []
    for i in range(sol.z.shape[1]):
        half = sol.alpha * np.sqrt(E_inv[i, i])
        series.append((f"z{i+1}", ks, sol.z[:, i], colors[i % 3], None))
        series.append(("", ks, sol.z[:, i] + half, "#d62728", "4,3"))
        series.append(("", ks, sol.z[:, i] - half, "#d62728", "4,3"))
        extra.extend([float(np.max(sol.z[:, i] + half)), float(np.min(sol.z[:, i] - half))])
    series.append(("alpha", ks, sol.alpha, "#ff7f0e", None))
    _svg_chart(path, "nominal trajectory and tube cross-section", series, extra)


def _plot_trace(trace, constraints, path):
    ks = np.arange(trace.x.shape[0])
    colors = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b"]
    series = [(f"x{i+1}", ks, trace.x[:, i], colors[i % 4], None)
              for i in range(trace.x.shape[1])]
    for j in range(trace.u.shape[1]):
        series.append((f"u{j+1}", ks[:-1] if trace.steps else ks,
                       trace.u[:, j] if trace.steps else np.zeros_like(ks),
                       "#ff7f0e", "6,2"))
    _svg_chart(path, "closed-loop states and inputs", series, (1.0, -1.0))


# -- argument parsing ------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tgcmpc",
        description="Tube-based guaranteed-cost MPC toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", help="problem JSON (default: bundled example)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--a-alpha", dest="a_alpha", type=float, default=None,
                       help="skip the line search and use this contraction rate")
        p.add_argument("--reuse", action="store_true",
                       help="reuse gcc.json/rpi.json from --out if present")

    p = sub.add_parser("synthesize", help="offline GCC + RPI synthesis")
    common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("tube", help="one tube solve from the problem's x0")
    common(p)
    p.add_argument("--terminal", action="store_true",
                   help="add the terminal-set constraint")
    p.set_defaults(func=cmd_tube)

    p = sub.add_parser("simulate", help="closed-loop simulation")
    common(p)
    p.add_argument("--disturbance", choices=sorted(_DIST_KINDS), default="boundary")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--controller", choices=["tube", "gcc"], default="tube")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="feasibility sweep along the x0 ray")
    common(p)
    p.add_argument("--lambda-max", dest="lambda_max", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=5e-3)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the acceptance criteria")
    common(p)
    p.add_argument("--runs", type=int, default=100,
                   help="closed-loop Monte Carlo runs (rollouts use 2x)")
    p.add_argument("--gcc", help="use this gcc.json instead of synthesizing")
    p.add_argument("--rpi", help="use this rpi.json instead of synthesizing")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except synthesis.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
