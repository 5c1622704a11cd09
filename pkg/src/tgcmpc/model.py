"""Problem definition: uncertain system, cost, constraints, and a JSON file format.

The plant is x+ = (A + dA)x + (Bu + dBu)u with multiplicative uncertainty
[dA dBu] = Bw @ Delta @ [Cy Dyu] and Delta block-diagonal, each block with
spectral norm at most one.  The equivalent disturbance-feedback form

    x+ = A x + Bu u + Bw w,   y = Cy x + Dyu u,   w = Delta y

is what :func:`evaluate_uncertainty` computes; both forms agree exactly.
All types are frozen dataclasses validated eagerly, so downstream modules
may assume consistency.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import linalg

ADMISSIBILITY_TOL = 1e-9


def _mat(value, name):
    M = np.asarray(value, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={M.ndim}")
    return M


@dataclass(frozen=True)
class UncertaintyStructure:
    """Block sizes (n_p_i, n_q_i) of the diagonal contraction set."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple((int(p), int(q)) for p, q in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if len(blocks) < 1 or any(p < 1 or q < 1 for p, q in blocks):
            raise ValueError("structure needs at least one block with positive sizes")

    @property
    def s(self):
        return len(self.blocks)

    @property
    def n_p(self):
        return sum(p for p, _ in self.blocks)

    @property
    def n_q(self):
        return sum(q for _, q in self.blocks)

    def p_slices(self):
        out, off = [], 0
        for p, _ in self.blocks:
            out.append(slice(off, off + p))
            off += p
        return out

    def q_slices(self):
        out, off = [], 0
        for _, q in self.blocks:
            out.append(slice(off, off + q))
            off += q
        return out


@dataclass(frozen=True)
class UncertainSystem:
    A: np.ndarray
    Bu: np.ndarray
    Bw: np.ndarray
    Cy: np.ndarray
    Dyu: np.ndarray
    structure: UncertaintyStructure

    def __post_init__(self):
        for name in ("A", "Bu", "Bw", "Cy", "Dyu"):
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        problems = validate_system(self)
        if problems:
            raise ValueError("invalid system: " + "; ".join(problems))

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.Bu.shape[1]


def validate_system(sys):
    """Return a list of violation descriptions; empty means valid."""
    problems = []
    n_x = sys.A.shape[0]
    if sys.A.shape != (n_x, n_x):
        problems.append(f"A must be square, got {sys.A.shape}")
    if sys.Bu.shape[0] != n_x:
        problems.append(f"Bu has {sys.Bu.shape[0]} rows, expected {n_x}")
    n_p, n_q = sys.structure.n_p, sys.structure.n_q
    if sys.Bw.shape != (n_x, n_p):
        problems.append(f"Bw shape {sys.Bw.shape} does not match (n_x={n_x}, n_p={n_p})")
    if sys.Cy.shape != (n_q, n_x):
        problems.append(f"Cy shape {sys.Cy.shape} does not match (n_q={n_q}, n_x={n_x})")
    if sys.Dyu.shape != (n_q, sys.Bu.shape[1]):
        problems.append(f"Dyu shape {sys.Dyu.shape} does not match (n_q={n_q}, n_u={sys.Bu.shape[1]})")
    for name in ("A", "Bu", "Bw", "Cy", "Dyu"):
        if not np.all(np.isfinite(getattr(sys, name))):
            problems.append(f"{name} contains non-finite entries")
    return problems


@dataclass(frozen=True)
class CostSpec:
    """Quadratic stage cost x'Qx + u'Ru + 2x'Nu with factor [Cc Dcu]."""

    Q: np.ndarray
    R: np.ndarray
    N: np.ndarray
    Cc: np.ndarray = None
    Dcu: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "Q", linalg.symmetrize(self.Q))
        object.__setattr__(self, "R", linalg.symmetrize(self.R))
        object.__setattr__(self, "N", _mat(self.N, "N"))
        n_x, n_u = self.Q.shape[0], self.R.shape[0]
        if self.N.shape != (n_x, n_u):
            raise ValueError(f"N shape {self.N.shape} does not match (n_x={n_x}, n_u={n_u})")
        if not linalg.is_psd(self.stacked()):
            raise ValueError("[[Q, N], [N', R]] must be positive semidefinite")
        if linalg.min_eig(self.R) <= 0:
            raise ValueError("R must be positive definite")

    def stacked(self):
        return np.block([[self.Q, self.N], [self.N.T, self.R]])

    @property
    def n_x(self):
        return self.Q.shape[0]

    @property
    def n_u(self):
        return self.R.shape[0]


def factorize_cost(Q, R, N):
    """Factor [[Q, N], [N', R]] = [Cc Dcu]'[Cc Dcu] with rank many rows.

    Eigendecomposition is used (not a triangular factorization) so that the
    PSD-but-singular case Q >= 0 is handled.  The factor is unique only up
    to a left-orthogonal transform; the contract is reconstruction.
    """
    Q, R = linalg.symmetrize(Q), linalg.symmetrize(R)
    N = _mat(N, "N")
    n_x, n_u = Q.shape[0], R.shape[0]
    stacked = np.block([[Q, N], [N.T, R]])
    w, V = np.linalg.eigh(stacked)
    tol = linalg.default_psd_tol(stacked)
    if w[0] < -tol:
        raise ValueError(f"stacked cost matrix is indefinite: eigenvalue {w[0]:.3e}")
    keep = w > tol
    F = (V[:, keep] * np.sqrt(w[keep])).T  # rank x (n_x + n_u), F'F = stacked
    if F.shape[0] == 0:
        F = np.zeros((1, n_x + n_u))
    return F[:, :n_x], F[:, n_x:]


def make_cost(Q, R, N=None):
    """Build a CostSpec with its factorization populated."""
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if N is None:
        N = np.zeros((Q.shape[0], R.shape[0]))
    Cc, Dcu = factorize_cost(Q, R, N)
    return CostSpec(Q=Q, R=R, N=N, Cc=Cc, Dcu=Dcu)


@dataclass(frozen=True)
class PolytopeConstraints:
    """Joint state-input polytope Hx x + Hu u <= g with strictly interior origin."""

    Hx: np.ndarray
    Hu: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Hx", _mat(self.Hx, "Hx"))
        object.__setattr__(self, "Hu", _mat(self.Hu, "Hu"))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).ravel())
        if self.Hx.shape[0] != self.Hu.shape[0] or self.Hx.shape[0] != self.g.shape[0]:
            raise ValueError("Hx, Hu and g must have matching row counts")
        if self.n_g and np.min(self.g) <= 0:
            raise ValueError("the origin must be strictly feasible (g > 0)")

    @property
    def n_g(self):
        return self.g.shape[0]


def admissible_blocks(structure, delta, tol=ADMISSIBILITY_TOL):
    """Split delta into blocks, checking shape, zero off-block fill and norms."""
    delta = _mat(delta, "delta")
    if delta.shape != (structure.n_p, structure.n_q):
        raise ValueError(f"delta shape {delta.shape} does not match "
                         f"({structure.n_p}, {structure.n_q})")
    mask = np.ones_like(delta, dtype=bool)
    blocks = []
    for ps, qs in zip(structure.p_slices(), structure.q_slices()):
        blocks.append(delta[ps, qs])
        mask[ps, qs] = False
    if np.any(delta[mask] != 0.0):
        raise ValueError("delta has nonzero entries outside its diagonal blocks")
    for i, blk in enumerate(blocks):
        norm = linalg.spectral_norm(blk)
        if norm > 1.0 + tol:
            raise ValueError(f"uncertainty block {i} has spectral norm {norm:.6g} > 1")
    return blocks


def build_delta(structure, blocks):
    """Assemble a full block-diagonal delta matrix from per-block arrays."""
    delta = np.zeros((structure.n_p, structure.n_q))
    for blk, ps, qs in zip(blocks, structure.p_slices(), structure.q_slices()):
        delta[ps, qs] = np.asarray(blk, dtype=float)
    return delta


def evaluate_uncertainty(sys, delta, x, u):
    """One exact step of the disturbance-feedback dynamics.

    Returns (w, x_next) with y = Cy x + Dyu u, w = delta y and
    x_next = A x + Bu u + Bw w, identical to evaluating the multiplicative
    form (A + Bw delta Cy) x + (Bu + Bw delta Dyu) u.
    """
    admissible_blocks(sys.structure, delta)
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.shape != (sys.n_x,) or u.shape != (sys.n_u,):
        raise ValueError("state or input dimension mismatch")
    y = sys.Cy @ x + sys.Dyu @ u
    w = np.asarray(delta, dtype=float) @ y
    x_next = sys.A @ x + sys.Bu @ u + sys.Bw @ w
    return w, x_next


@dataclass(frozen=True)
class Problem:
    system: UncertainSystem
    cost: CostSpec
    constraints: PolytopeConstraints
    horizon: int
    x0: np.ndarray


_TOP_KEYS = ("system", "cost", "constraints", "horizon", "x0")
_SYSTEM_KEYS = ("A", "Bu", "Bw", "Cy", "Dyu", "blocks")
_COST_KEYS = ("Q", "R", "N")
_CON_KEYS = ("Hx", "Hu", "g")


def _check_keys(d, allowed, where):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {where} keys {unknown}; accepted keys are {list(allowed)}")


def parse_problem(doc):
    """Validate and build a Problem from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise ValueError("problem document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "top-level")
    for key in _TOP_KEYS:
        if key not in doc:
            raise ValueError(f"missing required key {key!r}")
    _check_keys(doc["system"], _SYSTEM_KEYS, "system")
    _check_keys(doc["cost"], _COST_KEYS, "cost")
    _check_keys(doc["constraints"], _CON_KEYS, "constraints")
    sd = doc["system"]
    structure = UncertaintyStructure(tuple(tuple(b) for b in sd["blocks"]))
    system = UncertainSystem(A=sd["A"], Bu=sd["Bu"], Bw=sd["Bw"], Cy=sd["Cy"],
                             Dyu=sd["Dyu"], structure=structure)
    cd = doc["cost"]
    cost = make_cost(cd["Q"], cd["R"], cd.get("N"))
    if cost.n_x != system.n_x or cost.n_u != system.n_u:
        raise ValueError("cost dimensions do not match the system")
    kd = doc["constraints"]
    constraints = PolytopeConstraints(Hx=kd["Hx"], Hu=kd["Hu"], g=kd["g"])
    if constraints.Hx.shape[1] != system.n_x or constraints.Hu.shape[1] != system.n_u:
        raise ValueError("constraint dimensions do not match the system")
    horizon = int(doc["horizon"])
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    x0 = np.asarray(doc["x0"], dtype=float).ravel()
    if x0.shape != (system.n_x,):
        raise ValueError(f"x0 has length {x0.shape[0]}, expected {system.n_x}")
    return Problem(system=system, cost=cost, constraints=constraints,
                   horizon=horizon, x0=x0)


def load_problem(path):
    """Load and validate a problem JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_problem(doc)
