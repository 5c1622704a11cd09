"""Online tube controller: a second-order cone program planning a nominal
trajectory plus a homothetically scaled invariant tube around it.

The state splits as x = z + e with nominal z driven by the feedforward nu
around the guaranteed-cost law, and the error e confined to the RPI
ellipsoid scaled by alpha_k.  Each step carries s + 2 cones (one per
uncertainty block, the tube recursion, and the weighted feedforward bound)
plus one epigraph cone overall, so the program scales linearly with the
horizon.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import conic, linalg
from .conic import ConeProgram, SolveSettings, stack


@dataclass(frozen=True)
class TubeConstants:
    """Matrices and norms precomputed once per (system, GCC, RPI) triple."""

    Abar: np.ndarray            # A - Bu K
    Cbar: np.ndarray            # Cy - Dyu K
    cy_alpha_norms: np.ndarray  # per block: ||(Cy - Dyu K_R)_i E_R^(-1/2)||
    Rbar_sqrt: np.ndarray
    kappa: float                # ||Rbar^(1/2) (K_R - K) E_R^(-1/2)||
    Hbar: np.ndarray            # Hx - Hu K
    hbar_r_alpha_norms: np.ndarray  # per row: ||(Hx - Hu K_R)_i E_R^(-1/2)||
    E_N: np.ndarray = None
    E_N_sqrt: np.ndarray = None
    en_er_norm: float = 0.0     # ||E_N^(1/2) E_R^(-1/2)||


def precompute_tube_constants(sys, constraints, gcc, rpi, terminal=None):
    """Derive the closed-loop matrices and support norms used by the program."""
    if gcc.K.shape != (sys.n_u, sys.n_x) or rpi.K_R.shape != (sys.n_u, sys.n_x):
        raise ValueError("gain dimensions do not match the system")
    if constraints.Hx.shape[1] != sys.n_x or constraints.Hu.shape[1] != sys.n_u:
        raise ValueError("constraint dimensions do not match the system")
    F = rpi.E_R_inv_sqrt
    Abar = sys.A - sys.Bu @ gcc.K
    Cbar = sys.Cy - sys.Dyu @ gcc.K
    Cbar_R = sys.Cy - sys.Dyu @ rpi.K_R
    cy_norms = np.array([linalg.spectral_norm(Cbar_R[sl, :] @ F)
                         for sl in sys.structure.q_slices()])
    Rbar_sqrt = linalg.sym_sqrt(gcc.Rbar)
    kappa = linalg.spectral_norm(Rbar_sqrt @ (rpi.K_R - gcc.K) @ F)
    Hbar = constraints.Hx - constraints.Hu @ gcc.K
    Hbar_R = constraints.Hx - constraints.Hu @ rpi.K_R
    h_norms = np.array([linalg.spectral_norm(Hbar_R[i, :] @ F)
                        for i in range(constraints.n_g)])
    E_N = E_N_sqrt = None
    en_er_norm = 0.0
    if terminal is not None:
        E_N = linalg.symmetrize(np.asarray(terminal, dtype=float))
        E_N_sqrt = linalg.sym_sqrt(E_N)
        en_er_norm = linalg.spectral_norm(E_N_sqrt @ F)
    return TubeConstants(Abar=Abar, Cbar=Cbar, cy_alpha_norms=cy_norms,
                         Rbar_sqrt=Rbar_sqrt, kappa=kappa, Hbar=Hbar,
                         hbar_r_alpha_norms=h_norms, E_N=E_N, E_N_sqrt=E_N_sqrt,
                         en_er_norm=en_er_norm)


def terminal_shape_from_rpi(rpi, constraints):
    """Terminal ellipsoid {x'E_N x <= 1}: the largest scaled copy of the RPI
    cross-section whose states and tube-gain inputs stay feasible."""
    F = rpi.E_R_inv_sqrt
    Hbar_R = constraints.Hx - constraints.Hu @ rpi.K_R
    norms = np.array([linalg.spectral_norm(Hbar_R[i, :] @ F)
                      for i in range(constraints.n_g)])
    active = norms > 0
    if not np.any(active):
        raise ValueError("terminal scaling is unbounded for these constraints")
    r = float(np.min(constraints.g[active] / norms[active]))
    return rpi.E_R / r ** 2


@dataclass(frozen=True)
class TubeProblem:
    sys: object
    cost: object
    constraints: object
    gcc: object
    rpi: object
    consts: TubeConstants
    N: int
    x0: np.ndarray
    alpha0: float = 0.0
    use_terminal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be nonnegative")
        if self.x0.shape != (self.sys.n_x,) or not np.all(np.isfinite(self.x0)):
            raise ValueError("x0 must be a finite state vector")
        if self.use_terminal and self.consts.E_N is None:
            raise ValueError("use_terminal requires terminal shape E_N in the constants")


@dataclass
class TubeSolution:
    """Planned nominal trajectory, feedforward, and tube scalings."""

    status: str
    z: np.ndarray = None        # (N+1, n_x)
    nu: np.ndarray = None       # (N, n_u)
    alpha: np.ndarray = None    # (N+1,)
    sigma: np.ndarray = None    # (N, s)
    gamma: np.ndarray = None    # (N,)
    objective: float = float("nan")
    solver_tolerance: float = float("nan")

    @property
    def optimal(self):
        return self.status == "optimal"


def build_tube_socp(p):
    """Assemble the cone program of the tube controller.

    Per step k: nominal dynamics equality, the tube recursion cone
    alpha_{k+1} >= ||(sqrt(a_alpha) alpha_k, sqrt(a_sigma_i) sigma_ki ...)||,
    one cone per block bounding sigma_ki by the nominal uncertainty output
    plus its tube support, one cone bounding gamma_k by the weighted
    feedforward plus the tube cost coupling, and the robustified linear
    constraint rows.  Objective: x0'P x0 plus the epigraph of sum gamma^2.
    """
    sys, c = p.sys, p.consts
    N, s = p.N, sys.structure.s
    sqrt_aa = np.sqrt(p.rpi.a_alpha)
    sqrt_as = np.sqrt(p.rpi.a_sigma)

    prog = ConeProgram()
    z = [prog.vector(f"z{k}", sys.n_x) for k in range(N + 1)]
    nu = [prog.vector(f"nu{k}", sys.n_u) for k in range(N)]
    alpha = prog.vector("alpha", N + 1)
    sigma = [prog.vector(f"sigma{k}", s) for k in range(N)]
    gamma = prog.vector("gamma", N)

    prog.add_linear_eq(z[0] - p.x0)
    prog.add_linear_eq(alpha[0] - p.alpha0)
    for k in range(N):
        prog.add_linear_eq(z[k + 1] - c.Abar @ z[k] - sys.Bu @ nu[k])
        prog.add_soc(alpha[k + 1],
                     stack([sqrt_aa * alpha[k]]
                           + [sqrt_as[i] * sigma[k][i] for i in range(s)]))
        for i, sl in enumerate(sys.structure.q_slices()):
            prog.add_soc(sigma[k][i] - c.cy_alpha_norms[i] * alpha[k],
                         c.Cbar[sl, :] @ z[k] + sys.Dyu[sl, :] @ nu[k])
        prog.add_soc(gamma[k] - c.kappa * alpha[k], c.Rbar_sqrt @ nu[k])
        if p.constraints.n_g:
            rows = c.Hbar @ z[k] + p.constraints.Hu @ nu[k] \
                + conic.smul(alpha[k], c.hbar_r_alpha_norms) - p.constraints.g
            prog.add_linear_ineq(rows)
    if p.use_terminal:
        prog.add_soc(1.0 - c.en_er_norm * alpha[N], c.E_N_sqrt @ z[N])

    t = prog.add_epigraph_sum_of_squares([gamma[k] for k in range(N)])
    prog.set_objective(t + float(p.x0 @ p.gcc.P @ p.x0))
    return prog


def count_soc_cones(prog):
    return sum(1 for con in prog.constraints if con.kind == "soc")


def solve_tube(p, settings=None):
    """Solve the tube program; infeasibility is a status, not an error.

    The returned nominal states and tube profile are canonicalized: z is
    rolled forward exactly from x0 under the solved feedforward, sigma takes
    its active value and alpha follows the tightest recursion from alpha0.
    This keeps the reported tube deterministic (interior-point solvers float
    anywhere inside the unpenalized feasible band) while every program
    constraint still holds and the objective is unchanged.
    """
    settings = settings or SolveSettings()
    prog = build_tube_socp(p)
    sol = conic.solve(prog, settings)
    if sol.status == "infeasible":
        return TubeSolution(status="infeasible")
    if sol.status != "optimal":
        raise RuntimeError(
            f"tube solve failed: {sol.status} ({sol.message});"
            f" program dump:\n{prog.dump()[:2000]}")

    sys, c = p.sys, p.consts
    N, s = p.N, sys.structure.s
    nu = np.vstack([sol.values[f"nu{k}"] for k in range(N)])
    gamma = np.asarray(sol.values["gamma"], dtype=float)

    z = np.zeros((N + 1, sys.n_x))
    z[0] = p.x0
    for k in range(N):
        z[k + 1] = c.Abar @ z[k] + sys.Bu @ nu[k]
    alpha = np.zeros(N + 1)
    alpha[0] = p.alpha0
    sigma = np.zeros((N, s))
    for k in range(N):
        for i, sl in enumerate(sys.structure.q_slices()):
            nominal = np.linalg.norm(c.Cbar[sl, :] @ z[k] + sys.Dyu[sl, :] @ nu[k])
            sigma[k, i] = nominal + c.cy_alpha_norms[i] * alpha[k]
        alpha[k + 1] = np.sqrt(p.rpi.a_alpha * alpha[k] ** 2
                               + np.sum(p.rpi.a_sigma * sigma[k] ** 2))
    objective = float(p.x0 @ p.gcc.P @ p.x0 + np.sum(gamma ** 2))
    return TubeSolution(status="optimal", z=z, nu=nu, alpha=alpha, sigma=sigma,
                        gamma=gamma, objective=objective,
                        solver_tolerance=sol.solver_tolerance)


def control_input(sol, gcc, rpi, x_measured):
    """Applied input -K x + nu_0 - (K_R - K)(x - z_0) for the measured state."""
    if not sol.optimal:
        raise ValueError("control_input requires an optimal tube solution")
    x = np.asarray(x_measured, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("measured state must be finite")
    e = x - sol.z[0]
    return -gcc.K @ x + sol.nu[0] - (rpi.K_R - gcc.K) @ e


def cost_bound(sol, gcc):
    """Certified upper bound x0'P x0 + sum gamma^2 on the closed-loop cost."""
    if not sol.optimal:
        raise ValueError("cost_bound requires an optimal tube solution")
    return float(sol.z[0] @ gcc.P @ sol.z[0] + np.sum(sol.gamma ** 2))


def export_csv(sol, path):
    """Write the planned trajectory: k, z, nu, alpha, sigma, gamma."""
    if not sol.optimal:
        raise ValueError("nothing to export for a non-optimal solution")
    N, n_x = sol.nu.shape[0], sol.z.shape[1]
    n_u, s = sol.nu.shape[1], sol.sigma.shape[1]
    header = (["k"] + [f"z{i+1}" for i in range(n_x)]
              + [f"nu{i+1}" for i in range(n_u)] + ["alpha"]
              + [f"sigma{i+1}" for i in range(s)] + ["gamma"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(N + 1):
            row = [k] + [repr(float(v)) for v in sol.z[k]]
            if k < N:
                row += [repr(float(v)) for v in sol.nu[k]]
                row += [repr(float(sol.alpha[k]))]
                row += [repr(float(v)) for v in sol.sigma[k]]
                row += [repr(float(sol.gamma[k]))]
            else:
                row += [""] * n_u + [repr(float(sol.alpha[k]))] + [""] * s + [""]
            writer.writerow(row)
