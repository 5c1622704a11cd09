"""Acceptance criteria for the bundled three-state benchmark system.

Each criterion returns (passed, detail) so the CLI self-check and the test
suite report identical verdicts.  Reference values are the figures reported
for this benchmark; criteria that compare against them are kept verbatim
even where our (independently cross-checked) synthesis lands elsewhere, so
a failure is an honest measurement rather than a loosened test.
"""

import itertools
from functools import cached_property

import numpy as np

from . import linalg, model, synthesis, tube, sim
from .conic import SolveSettings

# Reference figures reported for the bundled benchmark.
REF_K = np.array([[0.05, -0.27, 0.46], [1.89, -0.55, -0.43]])
REF_P = np.array([[19.18, -5.98, -9.57], [-5.98, 4.42, 2.47], [-9.57, 2.47, 7.21]])
REF_RBAR = np.array([[10.92, 10.80], [10.80, 22.85]])
REF_ER_INV = np.array([[1.06, 1.44, 1.21], [1.44, 2.52, 1.68], [1.21, 1.68, 1.67]])
REF_A_ALPHA = 0.48
REF_A_SIGMA = np.array([0.34, 0.17])
REF_TRACE_P = 30.81

X0_CLOSED = np.array([0.7, -0.7, 0.7])   # criterion 5 operating point (fixed)
X0_ROLLOUT = np.array([0.6, -0.6, 0.6])  # criteria 6/7/9 operating point
SWEEP_DIRECTION = np.array([1.0, -1.0, 1.0])


class AcceptanceSuite:
    """Lazily synthesizes the offline artifacts once and runs all criteria."""

    def __init__(self, problem=None, settings=None, closed_loop_runs=100,
                 rollout_runs=200, gcc=None, rpi=None):
        from . import load_bundled_problem
        self.problem = problem or load_bundled_problem()
        self.settings = settings or SolveSettings()
        self.closed_loop_runs = closed_loop_runs
        self.rollout_runs = rollout_runs
        self._gcc = gcc
        self._rpi = rpi

    @cached_property
    def gcc(self):
        if self._gcc is not None:
            return self._gcc
        return synthesis.synthesize_gcc(self.problem.system, self.problem.cost,
                                        self.settings)

    @cached_property
    def rpi(self):
        if self._rpi is not None:
            return self._rpi
        return synthesis.line_search_a_alpha(self.problem.system,
                                             synthesis.synthesize_mrpi,
                                             objective="logdet", K_R=self.gcc.K)

    @cached_property
    def consts(self):
        return tube.precompute_tube_constants(self.problem.system,
                                              self.problem.constraints,
                                              self.gcc, self.rpi)

    def _tube_problem(self, x0, N):
        return tube.TubeProblem(sys=self.problem.system, cost=self.problem.cost,
                                constraints=self.problem.constraints,
                                gcc=self.gcc, rpi=self.rpi, consts=self.consts,
                                N=N, x0=x0)

    def _solve(self, x0, N):
        return tube.solve_tube(self._tube_problem(x0, N), self.settings)

    @cached_property
    def rollout_solution(self):
        return self._solve(X0_ROLLOUT, N=5)

    # -- criteria ---------------------------------------------------------------

    def c01_gcc_certificate(self):
        vertices = [np.diag([s1, s2]).astype(float)
                    for s1, s2 in itertools.product([1.0, -1.0], repeat=2)]
        worst_ref = max(
            synthesis.gcc_lyapunov_residual(self.problem.system,
                                            self.problem.cost, REF_K, REF_P, d)
            for d in vertices)
        worst_own = max(
            synthesis.gcc_lyapunov_residual(self.problem.system,
                                            self.problem.cost, self.gcc.K,
                                            self.gcc.P, d)
            for d in vertices)
        own_tol = 1e-6 * (1.0 + float(np.max(np.abs(self.gcc.P))))
        cert_ok = worst_ref <= 1e-4
        trace_ok = self.gcc.trace_P <= REF_TRACE_P * 1.01
        own_ok = worst_own <= own_tol
        detail = (f"reference-pair vertex residual {worst_ref:.3e} (need <= 1e-4); "
                  f"our tr(P) {self.gcc.trace_P:.4f} (need <= {REF_TRACE_P * 1.01:.4f}); "
                  f"own-pair residual {worst_own:.3e} (need <= {own_tol:.1e})")
        return cert_ok and trace_ok and own_ok, detail

    def c02_rbar_reproduction(self):
        rel = np.max(np.abs(self.gcc.Rbar - REF_RBAR) / np.abs(REF_RBAR))
        return rel <= 0.02, f"max elementwise error {rel:.3%} (need <= 2%)"

    def c03_mrpi_reproduction(self):
        rpi = self.rpi
        da = abs(rpi.a_alpha - REF_A_ALPHA)
        ds = np.max(np.abs(rpi.a_sigma - REF_A_SIGMA))
        er_inv = np.linalg.inv(rpi.E_R)
        der = np.max(np.abs(er_inv - REF_ER_INV) / np.abs(REF_ER_INV))
        res = synthesis.rpi_residuals(self.problem.system, rpi)
        scale = 1.0 + float(np.max(np.abs(rpi.E_R)))
        res_tol = 10.0 * max(self.settings.feas_tol, 1e-8) * scale
        res_ok = (res["contraction"] <= res_tol
                  and res["admissibility"] <= res_tol
                  and res["budget"] <= res_tol)
        ok = da <= 0.05 and ds <= 0.05 and der <= 0.10 and res_ok
        detail = (f"|a_alpha-{REF_A_ALPHA}|={da:.3f}, |a_sigma-ref|={ds:.3f} "
                  f"(need <= 0.05); E_R^-1 error {der:.1%} (need <= 10%); "
                  f"residuals {res['contraction']:.2e}/{res['admissibility']:.2e}"
                  f" (tol {res_tol:.1e})")
        return ok, detail

    def c04_feasibility_boundary(self):
        lam_star = sim.feasibility_sweep(
            self.problem.system, self.problem.cost, self.problem.constraints,
            self.gcc, self.rpi, SWEEP_DIRECTION, N=5, lambda_max_probe=1.0,
            tol=5e-3, settings=self.settings)
        f046 = self._solve(0.46 * SWEEP_DIRECTION, 5).optimal
        f070 = self._solve(0.70 * SWEEP_DIRECTION, 5).optimal
        f090 = self._solve(0.90 * SWEEP_DIRECTION, 5).optimal
        ok = 0.75 <= lam_star <= 0.80 and f046 and f070 and not f090
        detail = (f"lambda*={lam_star:.4f} (need in [0.75, 0.80]); "
                  f"feasible at 0.46/0.70: {f046}/{f070} (need True); "
                  f"at 0.90: {f090} (need False)")
        return ok, detail

    def c05_closed_loop_robustness(self):
        controller = sim.TubeMpcController(
            self.problem.system, self.problem.cost, self.problem.constraints,
            self.gcc, self.rpi, N=5, settings=self.settings)
        runs = self.closed_loop_runs
        violations = 0
        settled = 0
        completed = 0
        for seed in range(runs):
            trace = sim.run_closed_loop(
                self.problem.system, self.problem.cost, self.problem.constraints,
                controller, X0_CLOSED, 30,
                sim.DisturbanceModel("boundary", seed=seed))
            violations += int(trace.violated.sum())
            if trace.status == "completed":
                completed += 1
                if np.max(np.abs(trace.x[30])) < 0.05:
                    settled += 1
        ok = violations == 0 and settled >= int(np.ceil(0.95 * runs))
        detail = (f"{completed}/{runs} runs completed, {violations} violations "
                  f"(need 0), settled {settled}/{runs} (need >= {int(np.ceil(0.95 * runs))})")
        return ok, detail

    def _rollouts(self):
        sol = self.rollout_solution
        if not sol.optimal:
            return None
        per_kind = max(1, self.rollout_runs // 2)
        for kind in ("random_ball", "boundary"):
            for seed in range(per_kind):
                yield sim.rollout_open_loop(
                    self.problem.system, self.problem.cost,
                    self.problem.constraints, self.gcc, self.rpi, sol,
                    sim.DisturbanceModel(kind, seed=seed))

    def c06_cost_bound(self):
        sol = self.rollout_solution
        if not sol.optimal:
            return False, "rollout tube program infeasible"
        bound = tube.cost_bound(sol, self.gcc)
        worst = -np.inf
        n = 0
        for trace in self._rollouts():
            realized = sim.realized_cost(trace, self.gcc, M=5)
            worst = max(worst, realized - (bound + 1e-4 * (1.0 + bound)))
            n += 1
        return worst <= 0, (f"{n} rollouts, worst bound excess {worst:.3e} "
                            f"(need <= 0; bound {bound:.4f})")

    def c07_tube_containment(self):
        sol = self.rollout_solution
        if not sol.optimal:
            return False, "rollout tube program infeasible"
        worst = -np.inf
        for trace in self._rollouts():
            e = trace.x - trace.z_ref
            quad = np.einsum("ki,ij,kj->k", e, self.rpi.E_R, e)
            worst = max(worst, float(np.max(quad - sol.alpha ** 2)))
        return worst <= 1e-6, f"worst e'E_Re - alpha^2 = {worst:.3e} (need <= 1e-6)"

    def c08_cone_count(self):
        s = self.problem.system.structure.s
        counts = {}
        for N in (1, 5, 20):
            prog = tube.build_tube_socp(self._tube_problem(X0_ROLLOUT, N))
            counts[N] = tube.count_soc_cones(prog)
        ok = all(counts[N] == N * (s + 2) + 1 for N in counts)
        return ok, f"soc cones {counts} (need N*(s+2)+1)"

    def c09_alpha_decay(self):
        sol = self._solve(X0_ROLLOUT, N=20)
        if not sol.optimal:
            return False, "N=20 tube program infeasible"
        ratio = float(sol.alpha[20] / np.max(sol.alpha))
        return ratio < 0.1, (f"alpha_20/max alpha = {ratio:.4f} (need < 0.1; "
                             f"max {np.max(sol.alpha):.4f})")

    def c10_property_suites(self):
        checks = [
            ("rpi-invariance", check_rpi_invariance(self.problem.system, self.rpi)),
            ("rpi-step-fixed-point", check_rpi_step_fixed_point(self.rpi)),
            ("contraction", check_contraction(self.problem.system, self.rpi)),
            ("uncertainty-equivalence", check_uncertainty_equivalence(self.problem.system)),
            ("linalg-oracles", check_linalg_oracles()),
        ]
        bad = [name for name, (ok, _) in checks if not ok]
        detail = "; ".join(f"{name}: {'ok' if ok else msg}" for name, (ok, msg) in checks)
        return not bad, detail

    CRITERIA = (
        (1, "gcc-certificate", "c01_gcc_certificate"),
        (2, "rbar-reproduction", "c02_rbar_reproduction"),
        (3, "mrpi-reproduction", "c03_mrpi_reproduction"),
        (4, "feasibility-boundary", "c04_feasibility_boundary"),
        (5, "closed-loop-robustness", "c05_closed_loop_robustness"),
        (6, "cost-bound", "c06_cost_bound"),
        (7, "tube-containment", "c07_tube_containment"),
        (8, "cone-count-scaling", "c08_cone_count"),
        (9, "alpha-decay", "c09_alpha_decay"),
        (10, "property-suites", "c10_property_suites"),
    )

    def run_all(self):
        out = []
        for num, name, meth in self.CRITERIA:
            try:
                result = getattr(self, meth)()
            except Exception as exc:  # a broken artifact is a failed check, not a crash
                result = (False, f"criterion raised {type(exc).__name__}: {exc}")
            out.append((num, name, result))
        return out


# -- standalone property checks (criterion 10; also used by the unit tests) ------


def check_rpi_invariance(sys, rpi, samples=1000, seed=1234):
    """Monte-Carlo invariance: boundary states plus admissible per-block
    disturbances always land inside the stepped level-set."""
    rng = np.random.default_rng(seed)
    Abar = sys.A - sys.Bu @ rpi.K_R
    Cbar = sys.Cy - sys.Dyu @ rpi.K_R
    F = rpi.E_R_inv_sqrt
    worst = -np.inf
    for _ in range(samples):
        alpha = float(rng.uniform(0.1, 2.0))
        u = rng.standard_normal(sys.n_x)
        x = F @ (u / np.linalg.norm(u)) * alpha  # x' E_R x = alpha^2 exactly
        sigma = np.array([np.linalg.norm(Cbar[sl, :] @ x)
                          for sl in sys.structure.q_slices()])
        w = np.zeros(sys.structure.n_p)
        for i, ps in enumerate(sys.structure.p_slices()):
            d = rng.standard_normal(ps.stop - ps.start)
            n = np.linalg.norm(d)
            if n > 0:
                w[ps] = d / n * sigma[i] * rng.uniform()
        x_next = Abar @ x + sys.Bw @ w
        level = synthesis.rpi_step(rpi, alpha, sigma)
        worst = max(worst, float(x_next @ rpi.E_R @ x_next) - level ** 2)
    return worst <= 1e-6, f"worst membership excess {worst:.3e}"


def check_rpi_step_fixed_point(rpi, sigma_bar=0.7, iters=300):
    """With constant disturbance level the scaling converges to
    sqrt(sum a_sigma sigma^2 / (1 - a_alpha)), never above ||sigma||."""
    sigma = np.full(rpi.a_sigma.shape, sigma_bar)
    alpha = 5.0
    for _ in range(iters):
        alpha = synthesis.rpi_step(rpi, alpha, sigma)
    expected = np.sqrt(np.sum(rpi.a_sigma * sigma ** 2) / (1.0 - rpi.a_alpha))
    ok = abs(alpha - expected) <= 1e-9 and alpha <= np.linalg.norm(sigma) + 1e-9
    return ok, f"limit {alpha:.6f} vs expected {expected:.6f}"


def check_contraction(sys, rpi, iters=200):
    """Autonomous tube contraction: with per-block disturbance levels at their
    admissibility bounds eps_i the scaling decays whenever
    a_alpha + sum a_sigma_i eps_i^2 < 1, and iterating drives it to zero."""
    Cbar = sys.Cy - sys.Dyu @ rpi.K_R
    eps = np.array([linalg.spectral_norm(Cbar[sl, :] @ rpi.E_R_inv_sqrt)
                    for sl in sys.structure.q_slices()])
    rate = np.sqrt(rpi.a_alpha + np.sum(rpi.a_sigma * eps ** 2))
    if rate >= 1.0:
        return False, f"contraction rate {rate:.4f} >= 1"
    alpha = 1.0
    for _ in range(iters):
        nxt = synthesis.rpi_step(rpi, alpha, eps * alpha)
        if nxt > rate * alpha + 1e-12:
            return False, "step exceeded the predicted rate"
        alpha = nxt
    return alpha < 1e-6, f"rate {rate:.4f}, alpha after {iters} iters {alpha:.2e}"


def check_uncertainty_equivalence(sys, samples=100, seed=99):
    """Multiplicative and disturbance-feedback forms agree to 1e-12."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(samples):
        delta = sim.sample_delta(sys.structure, sim.DisturbanceModel("random_ball", seed=seed), k)
        x = rng.standard_normal(sys.n_x)
        u = rng.standard_normal(sys.n_u)
        w, x_next = model.evaluate_uncertainty(sys, delta, x, u)
        direct = ((sys.A + sys.Bw @ delta @ sys.Cy) @ x
                  + (sys.Bu + sys.Bw @ delta @ sys.Dyu) @ u)
        worst = max(worst, float(np.max(np.abs(x_next - direct))))
        y = sys.Cy @ x + sys.Dyu @ u
        for ps, qs in zip(sys.structure.p_slices(), sys.structure.q_slices()):
            if np.linalg.norm(w[ps]) > np.linalg.norm(y[qs]) + 1e-12:
                return False, "disturbance norm exceeded output norm"
    return worst <= 1e-12, f"worst form mismatch {worst:.2e}"


def check_linalg_oracles(seed=7):
    """sym_sqrt reconstruction and logdet against a cofactor expansion."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((5, 5))
    M = G @ G.T
    S = linalg.sym_sqrt(M)
    rec = np.linalg.norm(S @ S - M) / np.linalg.norm(M)
    if rec > 1e-8:
        return False, f"sym_sqrt reconstruction error {rec:.2e}"
    A = rng.standard_normal((3, 3))
    M3 = A @ A.T + 0.5 * np.eye(3)
    det = (M3[0, 0] * (M3[1, 1] * M3[2, 2] - M3[1, 2] * M3[2, 1])
           - M3[0, 1] * (M3[1, 0] * M3[2, 2] - M3[1, 2] * M3[2, 0])
           + M3[0, 2] * (M3[1, 0] * M3[2, 1] - M3[1, 1] * M3[2, 0]))
    err = abs(linalg.logdet(M3) - np.log(det))
    return err <= 1e-9, f"logdet vs cofactor error {err:.2e}"
