"""Offline syntheses: guaranteed-cost state feedback, deviation weight, and
minimal robust positive invariant (RPI) ellipsoid level-sets.

The guaranteed-cost controller (GCC) u = -K x comes with a matrix P > 0 such
that x'Px upper-bounds the infinite-horizon cost for every admissible
uncertainty; it is found by minimizing tr(P) through an LMI in the inverse
variables X = P^-1, Y = K X with S-procedure scalings for the uncertainty
blocks.  The RPI level-sets R(sigma) = {x | x'E_R x <= sigma^2} support the
online tube: their cross-section contraction coefficients (a_alpha, a_sigma)
satisfy a second LMI family, solved either directly in E_R for a fixed tube
gain or in the inverse variables with the gain free.  The coupling between
a_alpha and the shape matrix is bilinear, so a_alpha is fixed per solve and
optimized by an outer line search.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import conic, linalg
from .conic import Affine, ConeProgram, SolveSettings, block, smul, trace

UPSILON_FLOOR = 1e-9  # keeps the scalings invertible for the deviation weight
X_FLOOR = 1e-8
# interior margin on a_alpha + sum(a_sigma) <= 1 so the returned coefficients
# satisfy the budget strictly even at solver feasibility tolerance
BUDGET_MARGIN = 1e-7


class InfeasibleError(RuntimeError):
    """The synthesis program has no solution at the requested operating point."""


class SolverFailure(RuntimeError):
    """The conic backend failed numerically."""


def _solved(prog, settings, what):
    sol = conic.solve(prog, settings)
    if sol.status == "infeasible":
        raise InfeasibleError(what)
    if sol.status != "optimal":
        raise SolverFailure(f"{what}: solver returned {sol.status} ({sol.message})")
    return sol


def _block_diag_selectors(structure, side):
    """Constant matrices S_i with diag(v) = sum_i v_i S_i over p- or q-blocks."""
    n = structure.n_p if side == "p" else structure.n_q
    slices = structure.p_slices() if side == "p" else structure.q_slices()
    out = []
    for sl in slices:
        S = np.zeros((n, n))
        S[sl, sl] = np.eye(sl.stop - sl.start)
        out.append(S)
    return out


@dataclass
class GccSolution:
    """Guaranteed-cost feedback u = -K x with certified cost matrix P."""

    K: np.ndarray
    P: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    upsilon: np.ndarray
    trace_P: float
    Rbar: np.ndarray
    P_N: np.ndarray

    def to_obj(self):
        return {"K": self.K.tolist(), "P": self.P.tolist(), "X": self.X.tolist(),
                "Y": self.Y.tolist(), "upsilon": self.upsilon.tolist(),
                "trace_P": self.trace_P, "Rbar": self.Rbar.tolist(),
                "P_N": self.P_N.tolist()}

    @staticmethod
    def from_obj(obj):
        return GccSolution(K=np.asarray(obj["K"], dtype=float),
                           P=np.asarray(obj["P"], dtype=float),
                           X=np.asarray(obj["X"], dtype=float),
                           Y=np.asarray(obj["Y"], dtype=float),
                           upsilon=np.asarray(obj["upsilon"], dtype=float),
                           trace_P=float(obj["trace_P"]),
                           Rbar=np.asarray(obj["Rbar"], dtype=float),
                           P_N=np.asarray(obj["P_N"], dtype=float))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_obj(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            return GccSolution.from_obj(json.load(fh))


@dataclass
class RpiSolution:
    """Ellipsoid shape E_R, tube gain K_R and contraction coefficients."""

    E_R: np.ndarray
    K_R: np.ndarray
    a_alpha: float
    a_sigma: np.ndarray
    E_R_inv_sqrt: np.ndarray

    def to_obj(self):
        return {"E_R": self.E_R.tolist(), "K_R": self.K_R.tolist(),
                "a_alpha": self.a_alpha, "a_sigma": self.a_sigma.tolist()}

    @staticmethod
    def from_obj(obj):
        E_R = linalg.symmetrize(np.asarray(obj["E_R"], dtype=float))
        return RpiSolution(E_R=E_R,
                           K_R=np.asarray(obj["K_R"], dtype=float),
                           a_alpha=float(obj["a_alpha"]),
                           a_sigma=np.asarray(obj["a_sigma"], dtype=float),
                           E_R_inv_sqrt=linalg.inv_sqrt(E_R))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_obj(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            return RpiSolution.from_obj(json.load(fh))


# -- guaranteed cost controller -------------------------------------------------


def build_gcc_lmi(sys, cost):
    """Cone program for the optimal guaranteed-cost feedback.

    Variables X (sym), Y, upsilon >= 0 and relaxation Z (sym); minimizes
    tr(Z) subject to the robust-performance block LMI and the Schur coupling
    [[-Z, I], [I, -X]] <= 0 that makes tr(Z) an upper bound on tr(X^-1).
    """
    if cost.Cc is None or cost.Dcu is None:
        raise ValueError("cost factorization missing; build the cost with make_cost")
    n_x, n_u = sys.n_x, sys.n_u
    n_q, n_c = sys.structure.n_q, cost.Cc.shape[0]
    prog = ConeProgram()
    X = prog.symmetric("X", n_x)
    Y = prog.matrix("Y", n_u, n_x)
    v = prog.vector("v", sys.structure.s)
    Z = prog.symmetric("Z", n_x)

    Sq = _block_diag_selectors(sys.structure, "q")
    upsilon_q = Affine((n_q, n_q))
    for i, S in enumerate(Sq):
        upsilon_q = upsilon_q + smul(v[i], S)
    bw_up_bw = Affine((n_x, n_x))
    for i, sl in enumerate(sys.structure.p_slices()):
        Bwi = sys.Bw[:, sl]
        bw_up_bw = bw_up_bw + smul(v[i], Bwi @ Bwi.T)

    B14 = sys.Cy @ X - sys.Dyu @ Y
    B24 = cost.Cc @ X - cost.Dcu @ Y
    B34 = sys.A @ X - sys.Bu @ Y
    Zq_c = np.zeros((n_q, n_c))
    Zq_x = np.zeros((n_q, n_x))
    Zc_x = np.zeros((n_c, n_x))
    M = block([
        [-1.0 * upsilon_q, Zq_c, Zq_x, B14],
        [Zq_c.T, -np.eye(n_c), Zc_x, B24],
        [Zq_x.T, Zc_x.T, bw_up_bw - X, B34],
        [B14.T, B24.T, B34.T, -1.0 * X],
    ])
    prog.add_psd(-1.0 * M)
    prog.add_psd(block([[Z, -np.eye(n_x)], [-np.eye(n_x), X]]))
    prog.add_psd(X - X_FLOOR * np.eye(n_x))
    prog.add_linear_ineq(UPSILON_FLOOR - v)
    prog.set_objective(trace(Z))
    return prog


def synthesize_gcc(sys, cost, settings=None):
    """Solve for the trace-optimal guaranteed-cost controller."""
    settings = settings or SolveSettings()
    prog = build_gcc_lmi(sys, cost)
    sol = _solved(prog, settings,
                  "no guaranteed cost controller exists at this uncertainty level")
    X = linalg.symmetrize(sol.values["X"])
    Y = sol.values["Y"].reshape(sys.n_u, sys.n_x)
    upsilon = np.asarray(sol.values["v"], dtype=float)
    P = linalg.symmetrize(np.linalg.inv(X))
    if linalg.min_eig(P) <= 0:
        raise SolverFailure("returned cost matrix is not positive definite")
    K = Y @ P
    Rbar = compute_rbar(sys, cost, P, upsilon)
    return GccSolution(K=K, P=P, X=X, Y=Y, upsilon=upsilon,
                       trace_P=float(np.trace(P)), Rbar=Rbar, P_N=P)


def compute_rbar(sys, cost, P, upsilon):
    """Deviation weight for feedforward around the guaranteed-cost law.

    For u = -K x + v the certified bound degrades by at most v'Rbar v per
    step, with Rbar = R + Dyu' Uq^-1 Dyu + Bu' (P^-1 - Bw Up Bw')^-1 Bu,
    where Uq, Up are the block scalings of the synthesis LMI.
    """
    upsilon = np.asarray(upsilon, dtype=float).ravel()
    if upsilon.shape != (sys.structure.s,) or np.any(upsilon < UPSILON_FLOOR / 2):
        raise ValueError("upsilon must hold one positive scaling per block")
    X = linalg.symmetrize(np.linalg.inv(linalg.symmetrize(P)))
    lam_q_inv = np.concatenate([np.full(q, 1.0 / upsilon[i])
                                for i, (_, q) in enumerate(sys.structure.blocks)])
    inner = X.copy()
    for i, sl in enumerate(sys.structure.p_slices()):
        Bwi = sys.Bw[:, sl]
        inner -= upsilon[i] * (Bwi @ Bwi.T)
    if linalg.min_eig(inner) <= 0:
        raise ValueError("inconsistent GCC: P^-1 - Bw Up Bw' is not positive definite")
    Rbar = cost.R + sys.Dyu.T @ (lam_q_inv[:, None] * sys.Dyu) \
        + sys.Bu.T @ np.linalg.solve(inner, sys.Bu)
    Rbar = linalg.symmetrize(Rbar)
    if linalg.min_eig(Rbar) <= 0:
        raise ValueError("deviation weight is not positive definite")
    return Rbar


def gcc_lyapunov_residual(sys, cost, K, P, delta):
    """Largest eigenvalue of the closed-loop Lyapunov defect at one uncertainty.

    Nonpositive (up to tolerance) for every admissible delta certifies that
    x'Px bounds the cost of u = -K x.  The stage-cost quadratic under the
    feedback is Q - NK - K'N' + K'RK.
    """
    dA = sys.Bw @ delta @ sys.Cy
    dB = sys.Bw @ delta @ sys.Dyu
    A_cl = sys.A + dA - (sys.Bu + dB) @ K
    Q_cl = cost.Q - cost.N @ K - K.T @ cost.N.T + K.T @ cost.R @ K
    return linalg.min_eig(-(A_cl.T @ P @ A_cl - P + Q_cl)) * -1.0


# -- RPI level-sets --------------------------------------------------------------


def rpi_step(rpi, alpha, sigma):
    """Next tube scaling: sqrt(a_alpha alpha^2 + sum_i a_sigma_i sigma_i^2)."""
    alpha = float(alpha)
    sigma = np.asarray(sigma, dtype=float).ravel()
    if alpha < 0 or np.any(sigma < 0):
        raise ValueError("alpha and sigma must be nonnegative")
    if sigma.shape != rpi.a_sigma.shape:
        raise ValueError("sigma must hold one level per uncertainty block")
    return float(np.sqrt(rpi.a_alpha * alpha ** 2 + np.sum(rpi.a_sigma * sigma ** 2)))


def _rpi_common(prog, structure, a_alpha, a_sig):
    # budget a_alpha + sum a_sigma <= 1 and nonnegativity
    prog.add_linear_ineq(a_sig.sum() + (a_alpha - 1.0 + BUDGET_MARGIN))
    prog.add_linear_ineq(-1.0 * a_sig)


def _a_sigma_diag(structure, a_sig):
    n_p = structure.n_p
    out = Affine((n_p, n_p))
    for i, S in enumerate(_block_diag_selectors(structure, "p")):
        out = out + smul(a_sig[i], S)
    return out


def synthesize_mrpi(sys, K_R, a_alpha, settings=None, objective="logdet"):
    """Minimal RPI ellipsoid for a fixed tube gain at a fixed contraction rate.

    Solves, over E_R > 0 and a_sigma >= 0: the three-block invariance LMI for
    the closed loop A - Bu K_R, the budget a_alpha + sum a_sigma <= 1, and the
    per-block admissibility condition Cbar_i' Cbar_i <= E_R (the level-sets of
    the uncertainty outputs must contain the ellipsoid).  objective="logdet"
    maximizes det(E_R) through a root-det hypograph; "trace" minimizes
    tr(E_R^-1) through a Schur relaxation, matching the inverse-variable
    synthesis.
    """
    if not 0.0 < a_alpha < 1.0:
        raise ValueError("a_alpha must lie strictly inside (0, 1)")
    settings = settings or SolveSettings(feas_tol=1e-8, rel_gap=1e-6)
    K_R = np.asarray(K_R, dtype=float)
    n_x, s = sys.n_x, sys.structure.s
    Abar = sys.A - sys.Bu @ K_R
    Cbar = sys.Cy - sys.Dyu @ K_R

    prog = ConeProgram()
    E = prog.symmetric("E_R", n_x)
    a_sig = prog.vector("a_sig", s)
    EA = E @ Abar
    EB = E @ sys.Bw
    n_p = sys.structure.n_p
    M = block([
        [-1.0 * E, EA, EB],
        [EA.T, -a_alpha * E, np.zeros((n_x, n_p))],
        [EB.T, np.zeros((n_p, n_x)), -1.0 * _a_sigma_diag(sys.structure, a_sig)],
    ])
    prog.add_psd(-1.0 * M)
    _rpi_common(prog, sys.structure, a_alpha, a_sig)
    for sl in sys.structure.q_slices():
        Ci = Cbar[sl, :]
        prog.add_psd(E - Ci.T @ Ci)
    prog.add_psd(E - X_FLOOR * np.eye(n_x))

    if objective == "logdet":
        t = prog.add_rootdet_hypograph(E)
        prog.set_objective(-1.0 * t)
    elif objective == "trace":
        Z2 = prog.symmetric("Z2", n_x)
        prog.add_psd(block([[Z2, np.eye(n_x)], [np.eye(n_x), E]]))
        prog.set_objective(trace(Z2))
    else:
        raise ValueError("objective must be 'logdet' or 'trace'")

    sol = _solved(prog, settings, f"no RPI level-set at a_alpha={a_alpha:.4g}")
    E_R = linalg.symmetrize(sol.values["E_R"])
    a_sigma = np.clip(np.asarray(sol.values["a_sig"], dtype=float), 0.0, None)
    return RpiSolution(E_R=E_R, K_R=K_R, a_alpha=float(a_alpha), a_sigma=a_sigma,
                       E_R_inv_sqrt=linalg.inv_sqrt(E_R))


def synthesize_approx_mrpi(sys, a_alpha, settings=None, K_R=None):
    """Approximate minimal RPI in inverse variables, optionally with a free gain.

    Solves min tr(X) over X = E_R^-1, the gain variable Y = K_R X (eliminated
    when K_R is given) and a_sigma, under the congruence-transformed
    invariance LMI and per-block admissibility in Schur form.  Trace of X is
    the convex stand-in for the (concave-to-minimize) log-volume.
    """
    if not 0.0 < a_alpha < 1.0:
        raise ValueError("a_alpha must lie strictly inside (0, 1)")
    settings = settings or SolveSettings()
    n_x, n_u, s = sys.n_x, sys.n_u, sys.structure.s
    n_p = sys.structure.n_p

    prog = ConeProgram()
    X = prog.symmetric("X", n_x)
    a_sig = prog.vector("a_sig", s)
    if K_R is None:
        Y = prog.matrix("Y", n_u, n_x)
    else:
        Y = np.asarray(K_R, dtype=float) @ X
    AX_BY = sys.A @ X - sys.Bu @ Y
    M = block([
        [-1.0 * X, AX_BY, sys.Bw],
        [AX_BY.T, -a_alpha * X, np.zeros((n_x, n_p))],
        [sys.Bw.T, np.zeros((n_p, n_x)), -1.0 * _a_sigma_diag(sys.structure, a_sig)],
    ])
    prog.add_psd(-1.0 * M)
    for sl in sys.structure.q_slices():
        n_qi = sl.stop - sl.start
        CX_DY = sys.Cy[sl, :] @ X - sys.Dyu[sl, :] @ Y
        prog.add_psd(block([[np.eye(n_qi), CX_DY], [CX_DY.T, X]]))
    _rpi_common(prog, sys.structure, a_alpha, a_sig)
    prog.add_psd(X - X_FLOOR * np.eye(n_x))
    prog.set_objective(trace(X))

    sol = _solved(prog, settings, f"no RPI level-set at a_alpha={a_alpha:.4g}")
    Xv = linalg.symmetrize(sol.values["X"])
    E_R = linalg.symmetrize(np.linalg.inv(Xv))
    if K_R is None:
        K_R = sol.values["Y"].reshape(n_u, n_x) @ E_R
    a_sigma = np.clip(np.asarray(sol.values["a_sig"], dtype=float), 0.0, None)
    return RpiSolution(E_R=E_R, K_R=np.asarray(K_R, dtype=float),
                       a_alpha=float(a_alpha), a_sigma=a_sigma,
                       E_R_inv_sqrt=linalg.inv_sqrt(E_R))


def _rpi_score(rpi, objective):
    if objective == "logdet":
        return -linalg.logdet(rpi.E_R)
    return float(np.trace(np.linalg.inv(rpi.E_R)))


def line_search_a_alpha(sys, synth, grid=(0.05, 0.95, 17), objective="logdet",
                        settings=None, **synth_kwargs):
    """Grid search over the contraction rate; returns the best feasible RPI.

    ``synth`` is one of the two syntheses; extra keyword arguments (e.g. the
    fixed gain ``K_R``) are forwarded.  Ties break toward the smallest
    a_alpha; all-infeasible grids raise InfeasibleError listing the grid.
    """
    lo, hi, steps = grid
    if not (0.0 < lo < hi < 1.0) or steps < 1:
        raise ValueError("grid must satisfy 0 < lo < hi < 1 with steps >= 1")
    points = np.linspace(lo, hi, int(steps))
    if synth is synthesize_mrpi:
        synth_kwargs.setdefault("objective", objective)
    elif objective == "logdet" and synth is synthesize_approx_mrpi:
        raise ValueError("the inverse-variable synthesis only supports the trace objective")
    best, best_score = None, np.inf
    for a in points:
        try:
            cand = synth(sys, a_alpha=float(a), settings=settings, **synth_kwargs)
        except (InfeasibleError, SolverFailure):
            # near the feasibility boundary the solver may fail to certify
            # either way; such grid points are unusable but not fatal
            continue
        score = _rpi_score(cand, objective)
        if score < best_score:
            best, best_score = cand, score
    if best is None:
        raise InfeasibleError(
            f"no RPI level-set found on the a_alpha grid {points.tolist()}")
    return best


def rpi_residuals(sys, rpi):
    """Certificate residuals of an RPI solution (all <= 0 when exact).

    Returns the worst eigenvalue of the four-block contraction LMI, the worst
    per-block admissibility eigenvalue, and the budget slack violation.
    """
    Abar = sys.A - sys.Bu @ rpi.K_R
    Cbar = sys.Cy - sys.Dyu @ rpi.K_R
    E = rpi.E_R
    n_x, n_p = sys.n_x, sys.structure.n_p
    a_diag = np.concatenate([np.full(p, rpi.a_sigma[i])
                             for i, (p, _) in enumerate(sys.structure.blocks)])
    budget = rpi.a_alpha + float(np.sum(rpi.a_sigma)) - 1.0
    M = np.block([
        [-E, E @ Abar, E @ sys.Bw, np.zeros((n_x, 1))],
        [(E @ Abar).T, -rpi.a_alpha * E, np.zeros((n_x, n_p)), np.zeros((n_x, 1))],
        [(E @ sys.Bw).T, np.zeros((n_p, n_x)), -np.diag(a_diag), np.zeros((n_p, 1))],
        [np.zeros((1, n_x)), np.zeros((1, n_x)), np.zeros((1, n_p)),
         np.array([[budget]])],
    ])
    contraction = -linalg.min_eig(-M)
    admissibility = max(
        -linalg.min_eig(E - Cbar[sl, :].T @ Cbar[sl, :])
        for sl in sys.structure.q_slices())
    return {"contraction": contraction, "admissibility": admissibility,
            "budget": budget}
