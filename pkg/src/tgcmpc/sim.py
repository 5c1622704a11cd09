"""Closed-loop simulation under sampled admissible uncertainties, realized
cost accounting, and feasibility sweeps along state-space rays.

Sampling is stateless: the draw at step k depends only on (seed, k), so
identical seeds reproduce bit-identical traces regardless of call order.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import model, tube
from .tube import TubeProblem, precompute_tube_constants, solve_tube

VIOLATION_TOL = 1e-6  # numeric slack when flagging H x + H u <= g


@dataclass(frozen=True)
class DisturbanceModel:
    """Law for sampling admissible block-diagonal uncertainties.

    kind: zero | random_ball (dense in the unit-norm ball) | boundary
    (spectral norm exactly one) | fixed_sequence (user-given deltas).
    """

    kind: str
    seed: int = 0
    sequence: tuple = None

    def __post_init__(self):
        if self.kind not in ("zero", "random_ball", "boundary", "fixed_sequence"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "fixed_sequence":
            if not self.sequence:
                raise ValueError("fixed_sequence requires a sequence of deltas")
            object.__setattr__(self, "sequence",
                               tuple(np.asarray(d, dtype=float) for d in self.sequence))


def sample_delta(structure, dist, k):
    """Admissible uncertainty for step k; deterministic given (seed, k)."""
    if dist.kind == "zero":
        return np.zeros((structure.n_p, structure.n_q))
    if dist.kind == "fixed_sequence":
        if k >= len(dist.sequence):
            raise IndexError(f"fixed disturbance sequence exhausted at step {k}")
        delta = dist.sequence[k]
        model.admissible_blocks(structure, delta)
        return delta
    rng = np.random.default_rng([int(dist.seed), int(k)])
    blocks = []
    for n_pi, n_qi in structure.blocks:
        G = rng.standard_normal((n_pi, n_qi))
        norm = np.linalg.norm(G, 2)
        if norm == 0.0:
            G = np.eye(n_pi, n_qi)
            norm = 1.0
        B = G / norm
        if dist.kind == "random_ball":
            u = rng.uniform()
            B = B * u ** (1.0 / (n_pi * n_qi))
        blocks.append(B)
    return model.build_delta(structure, blocks)


@dataclass
class SimTrace:
    """Realized closed-loop data; lengths are M+1 states and M of the rest."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    y: np.ndarray
    stage_costs: np.ndarray
    violated: np.ndarray          # bool per applied step
    violation: np.ndarray         # max over rows of Hx x + Hu u - g
    z_ref: np.ndarray = None      # controller nominal states, when available
    status: str = "completed"

    @property
    def steps(self):
        return self.u.shape[0]


def stage_cost(cost, x, u):
    return float(x @ cost.Q @ x + u @ cost.R @ u + 2.0 * x @ cost.N @ u)


class GccOnlyController:
    """Pure guaranteed-cost feedback u = -K x."""

    def __init__(self, gcc):
        self.gcc = gcc

    def control(self, x):
        return -self.gcc.K @ x, None


class TubeMpcController:
    """Receding-horizon tube controller: re-solves from the measured state.

    Each step plans with z_0 = x and alpha_0 = 0, which resets the tube and
    keeps the planned error zero at solve time; infeasibility raises so the
    harness can truncate the trace.
    """

    class Infeasible(RuntimeError):
        pass

    def __init__(self, sys, cost, constraints, gcc, rpi, N, settings=None,
                 use_terminal=False, terminal=None):
        self.sys, self.cost, self.constraints = sys, cost, constraints
        self.gcc, self.rpi, self.N = gcc, rpi, N
        self.settings = settings
        self.use_terminal = use_terminal
        self.consts = precompute_tube_constants(sys, constraints, gcc, rpi,
                                                terminal=terminal)
        self.last_solution = None

    def solve_from(self, x, alpha0=0.0):
        problem = TubeProblem(sys=self.sys, cost=self.cost,
                              constraints=self.constraints, gcc=self.gcc,
                              rpi=self.rpi, consts=self.consts, N=self.N,
                              x0=x, alpha0=alpha0, use_terminal=self.use_terminal)
        return solve_tube(problem, self.settings)

    def control(self, x):
        sol = self.solve_from(x)
        if not sol.optimal:
            raise TubeMpcController.Infeasible("tube program infeasible")
        self.last_solution = sol
        return tube.control_input(sol, self.gcc, self.rpi, x), sol.z[0]


def run_closed_loop(sys, cost, constraints, controller, x0, steps, dist):
    """Simulate the uncertain loop for ``steps`` steps under a disturbance law.

    Mid-run controller infeasibility truncates the trace with an explanatory
    status instead of raising.
    """
    x = np.asarray(x0, dtype=float).ravel()
    xs, us, ws, ys, costs, zref = [x.copy()], [], [], [], [], []
    violated, violation = [], []
    status = "completed"
    for k in range(steps):
        try:
            u, z0 = controller.control(x)
        except TubeMpcController.Infeasible:
            status = f"infeasible at step {k}"
            break
        delta = sample_delta(sys.structure, dist, k)
        w, x_next = model.evaluate_uncertainty(sys, delta, x, u)
        lhs = constraints.Hx @ x + constraints.Hu @ u - constraints.g
        worst = float(np.max(lhs, initial=-np.inf))
        us.append(u)
        ws.append(w)
        ys.append(sys.Cy @ x + sys.Dyu @ u)
        costs.append(stage_cost(cost, x, u))
        violated.append(worst > VIOLATION_TOL)
        violation.append(worst)
        zref.append(z0 if z0 is not None else np.full(sys.n_x, np.nan))
        x = x_next
        xs.append(x.copy())
    return SimTrace(x=np.vstack(xs),
                    u=np.vstack(us) if us else np.zeros((0, sys.n_u)),
                    w=np.vstack(ws) if ws else np.zeros((0, sys.structure.n_p)),
                    y=np.vstack(ys) if ys else np.zeros((0, sys.structure.n_q)),
                    stage_costs=np.asarray(costs),
                    violated=np.asarray(violated, dtype=bool),
                    violation=np.asarray(violation),
                    z_ref=np.vstack(zref) if zref else None,
                    status=status)


def rollout_open_loop(sys, cost, constraints, gcc, rpi, sol, dist, steps=None):
    """Apply one tube solution open loop: u_k = -K x_k + nu_k - (K_R - K) e_k.

    The trace's z_ref holds the planned nominal states, so e_k = x_k - z_k
    can be checked against the planned tube alpha_k.
    """
    if not sol.optimal:
        raise ValueError("rollout requires an optimal tube solution")
    N = sol.nu.shape[0]
    steps = N if steps is None else min(steps, N)
    x = sol.z[0].copy()
    xs, us, ws, ys, costs = [x.copy()], [], [], [], []
    violated, violation = [], []
    for k in range(steps):
        e = x - sol.z[k]
        u = -gcc.K @ x + sol.nu[k] - (rpi.K_R - gcc.K) @ e
        delta = sample_delta(sys.structure, dist, k)
        w, x_next = model.evaluate_uncertainty(sys, delta, x, u)
        lhs = constraints.Hx @ x + constraints.Hu @ u - constraints.g
        worst = float(np.max(lhs, initial=-np.inf))
        us.append(u)
        ws.append(w)
        ys.append(sys.Cy @ x + sys.Dyu @ u)
        costs.append(stage_cost(cost, x, u))
        violated.append(worst > VIOLATION_TOL)
        violation.append(worst)
        x = x_next
        xs.append(x.copy())
    return SimTrace(x=np.vstack(xs), u=np.vstack(us), w=np.vstack(ws),
                    y=np.vstack(ys), stage_costs=np.asarray(costs),
                    violated=np.asarray(violated, dtype=bool),
                    violation=np.asarray(violation),
                    z_ref=sol.z[:steps + 1].copy(), status="completed")


def realized_cost(trace, gcc, M=None):
    """Realized cost over M steps plus the terminal certificate x_M' P x_M."""
    M = trace.steps if M is None else M
    if trace.x.shape[0] < M + 1:
        raise ValueError(f"trace too short for M={M}")
    xM = trace.x[M]
    return float(np.sum(trace.stage_costs[:M]) + xM @ gcc.P @ xM)


def feasibility_sweep(sys, cost, constraints, gcc, rpi, direction, N,
                      lambda_max_probe, tol, settings=None, prescan=5):
    """Largest feasible lambda with x0 = lambda * direction via bisection.

    Feasibility is monotone along the ray (scaling a feasible solution stays
    feasible because the origin is strictly interior); a coarse pre-scan
    verifies the pattern and raises on a non-monotone anomaly.
    """
    direction = np.asarray(direction, dtype=float).ravel()
    if not np.any(direction):
        raise ValueError("direction must be nonzero")
    if tol <= 0 or lambda_max_probe <= 0:
        raise ValueError("tol and lambda_max_probe must be positive")
    consts = precompute_tube_constants(sys, constraints, gcc, rpi)

    def feasible(lam):
        problem = TubeProblem(sys=sys, cost=cost, constraints=constraints,
                              gcc=gcc, rpi=rpi, consts=consts, N=N,
                              x0=lam * direction, alpha0=0.0, use_terminal=False)
        try:
            return solve_tube(problem, settings).optimal
        except RuntimeError:
            # the boundary is exactly where the solver may fail to certify
            return False

    if not feasible(0.0):
        raise ValueError("the origin is infeasible; check the problem constraints")
    scan = np.linspace(0.0, lambda_max_probe, prescan + 1)[1:]
    flags = [feasible(lam) for lam in scan]
    if any(a < b for a, b in zip(flags, flags[1:])):  # became feasible again
        raise RuntimeError(f"non-monotone feasibility pattern along the ray: {flags}")
    if all(flags):
        return float(lambda_max_probe)
    first_bad = int(np.argmin(flags))  # first False
    lo = 0.0 if first_bad == 0 else float(scan[first_bad - 1])
    hi = float(scan[first_bad])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def export_trace_csv(trace, path):
    """Write the realized trajectory: k, x, u, w, stage_cost, violated."""
    n_x = trace.x.shape[1]
    n_u = trace.u.shape[1]
    n_p = trace.w.shape[1]
    header = (["k"] + [f"x{i+1}" for i in range(n_x)]
              + [f"u{i+1}" for i in range(n_u)]
              + [f"w{i+1}" for i in range(n_p)] + ["stage_cost", "violated"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(trace.x.shape[0]):
            row = [k] + [repr(float(v)) for v in trace.x[k]]
            if k < trace.steps:
                row += [repr(float(v)) for v in trace.u[k]]
                row += [repr(float(v)) for v in trace.w[k]]
                row += [repr(float(trace.stage_costs[k])), int(trace.violated[k])]
            else:
                row += [""] * (n_u + n_p) + ["", ""]
            writer.writerow(row)
