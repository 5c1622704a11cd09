"""Solver-agnostic cone-program representation and a Clarabel backend.

The representation keeps every constraint as an affine expression over the
declared variables in one of four kinds (componentwise equality and
inequality, second-order cone, positive semidefinite), so the optimization
backend stays isolated from the control-theoretic modules.  Programs dump
to a deterministic text form (one constraint per line) that re-parses to a
structurally identical program, and an independent residual checker
verifies solutions without trusting the solver.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

VAR_KINDS = ("scalar", "vector", "symmetric")


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # scalar | vector | symmetric
    dim: int  # 1 for scalar, n for vector(n) and symmetric(n)

    @property
    def flat_dim(self):
        if self.kind == "symmetric":
            return self.dim * (self.dim + 1) // 2
        return self.dim


def _tri_index(i, j, n):
    # row-major upper-triangle flat index of entry (i, j), i <= j
    return i * n - i * (i - 1) // 2 + (j - i)


class Affine:
    """Affine expression c + sum_v coeffs[v] . flat(v), of scalar/vector/matrix shape."""

    __slots__ = ("shape", "coeffs", "const")
    __array_ufunc__ = None  # make ndarray defer to the reflected operators

    def __init__(self, shape, coeffs=None, const=None):
        self.shape = tuple(shape)
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, dtype=float)
        assert self.const.shape == self.shape
        self.coeffs = {}
        for name, c in (coeffs or {}).items():
            c = np.asarray(c, dtype=float)
            if np.any(c):
                self.coeffs[name] = c

    @staticmethod
    def constant(value):
        value = np.asarray(value, dtype=float)
        return Affine(value.shape, {}, value)

    def _broadcast_to(self, shape):
        if self.shape == shape:
            return self
        if self.shape != ():
            raise ValueError(f"cannot broadcast shape {self.shape} to {shape}")
        coeffs = {k: np.broadcast_to(c, shape + c.shape).copy()
                  for k, c in self.coeffs.items()}
        return Affine(shape, coeffs, np.broadcast_to(self.const, shape).copy())

    def _binary(self, other, sign):
        other = other if isinstance(other, Affine) else Affine.constant(other)
        if other.shape != self.shape:
            if other.shape == ():
                other = other._broadcast_to(self.shape)
            elif self.shape == ():
                return self._broadcast_to(other.shape)._binary(other, sign)
            else:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        coeffs = dict(self.coeffs)
        for name, c in other.coeffs.items():
            coeffs[name] = coeffs.get(name, 0.0) + sign * c
        return Affine(self.shape, coeffs, self.const + sign * other.const)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __radd__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __rsub__(self, other):
        return (-self)._binary(other, 1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        scalar = float(scalar)
        return Affine(self.shape, {k: scalar * c for k, c in self.coeffs.items()},
                      scalar * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __matmul__(self, B):
        # affine @ constant
        B = np.asarray(B, dtype=float)
        const = self.const @ B
        coeffs = {}
        for name, c in self.coeffs.items():
            # c has shape self.shape + (d,): contract the last expression axis with B
            coeffs[name] = np.einsum("...jd,jk->...kd", c, B) if self.const.ndim == 2 \
                else np.einsum("jd,jk->kd", c, B)
        return Affine(const.shape, coeffs, const)

    def __rmatmul__(self, A):
        # constant @ affine
        A = np.asarray(A, dtype=float)
        const = A @ self.const
        coeffs = {name: np.einsum("ij,j...d->i...d", A, c) for name, c in self.coeffs.items()}
        return Affine(const.shape, coeffs, const)

    @property
    def T(self):
        if len(self.shape) != 2:
            raise ValueError("transpose requires a matrix expression")
        return Affine(self.shape[::-1],
                      {k: np.swapaxes(c, 0, 1) for k, c in self.coeffs.items()},
                      self.const.T)

    def __getitem__(self, idx):
        const = self.const[idx]
        coeffs = {k: c[idx] for k, c in self.coeffs.items()}
        return Affine(const.shape, coeffs, const)

    def sum(self):
        axes = tuple(range(len(self.shape)))
        return Affine((), {k: c.sum(axis=axes) for k, c in self.coeffs.items()},
                      self.const.sum())

    def ravel(self):
        n = int(np.prod(self.shape)) if self.shape else 1
        return Affine((n,), {k: c.reshape(n, -1) for k, c in self.coeffs.items()},
                      self.const.reshape(n))

    def __eq__(self, other):
        if not isinstance(other, Affine):
            return NotImplemented
        if self.shape != other.shape or not np.array_equal(self.const, other.const):
            return False
        if set(self.coeffs) != set(other.coeffs):
            return False
        return all(np.array_equal(self.coeffs[k], other.coeffs[k]) for k in self.coeffs)

    def to_obj(self):
        return {"shape": list(self.shape),
                "const": self.const.tolist(),
                "coeffs": {k: c.tolist() for k, c in sorted(self.coeffs.items())}}

    @staticmethod
    def from_obj(obj):
        return Affine(tuple(obj["shape"]),
                      {k: np.asarray(c) for k, c in obj["coeffs"].items()},
                      np.asarray(obj["const"]).reshape(tuple(obj["shape"])))


def smul(scalar_aff, M):
    """Product of a scalar affine expression with a constant array."""
    M = np.asarray(M, dtype=float)
    if scalar_aff.shape != ():
        raise ValueError("smul expects a scalar expression")
    coeffs = {k: M[..., None] * c for k, c in scalar_aff.coeffs.items()}
    return Affine(M.shape, coeffs, float(scalar_aff.const) * M)


def stack(exprs):
    """Stack scalar affine expressions into a vector expression."""
    exprs = [e if isinstance(e, Affine) else Affine.constant(e) for e in exprs]
    parts = []
    for e in exprs:
        if e.shape == ():
            parts.append(e.ravel())
        elif len(e.shape) == 1:
            parts.append(e)
        else:
            raise ValueError("stack expects scalars or vectors")
    m = sum(p.shape[0] for p in parts)
    const = np.concatenate([p.const for p in parts]) if parts else np.zeros(0)
    coeffs = {}
    names = {k for p in parts for k in p.coeffs}
    for name in names:
        d = next(p.coeffs[name].shape[-1] for p in parts if name in p.coeffs)
        full = np.zeros((m, d))
        off = 0
        for p in parts:
            if name in p.coeffs:
                full[off:off + p.shape[0]] = p.coeffs[name]
            off += p.shape[0]
        coeffs[name] = full
    return Affine((m,), coeffs, const)


def block(rows):
    """Assemble a matrix expression from a 2-D grid of blocks (Affine or constant)."""
    grid = [[b if isinstance(b, Affine) else Affine.constant(np.atleast_2d(np.asarray(b, dtype=float)))
             for b in row] for row in rows]
    row_h = [r[0].shape[0] for r in grid]
    col_w = [b.shape[1] for b in grid[0]]
    for r in grid:
        for j, b in enumerate(r):
            if b.shape != (r[0].shape[0], col_w[j]):
                raise ValueError("inconsistent block shapes")
    m, n = sum(row_h), sum(col_w)
    const = np.zeros((m, n))
    names = {k for r in grid for b in r for k in b.coeffs}
    dims = {}
    for r in grid:
        for b in r:
            for k, c in b.coeffs.items():
                dims[k] = c.shape[-1]
    coeffs = {k: np.zeros((m, n, dims[k])) for k in names}
    i0 = 0
    for r, h in zip(grid, row_h):
        j0 = 0
        for b, w in zip(r, col_w):
            const[i0:i0 + h, j0:j0 + w] = b.const
            for k, c in b.coeffs.items():
                coeffs[k][i0:i0 + h, j0:j0 + w, :] = c
            j0 += w
        i0 += h
    return Affine((m, n), coeffs, const)


def trace(expr):
    if len(expr.shape) != 2 or expr.shape[0] != expr.shape[1]:
        raise ValueError("trace requires a square matrix expression")
    n = expr.shape[0]
    idx = np.arange(n)
    coeffs = {k: c[idx, idx].sum(axis=0) for k, c in expr.coeffs.items()}
    return Affine((), coeffs, float(np.trace(expr.const)))


def zeros(m, n):
    return Affine.constant(np.zeros((m, n)))


@dataclass
class Constraint:
    kind: str  # linear_eq | linear_ineq | soc | psd
    exprs: tuple  # (expr,) for linear/psd; (t, v) for soc

    def __eq__(self, other):
        return isinstance(other, Constraint) and self.kind == other.kind \
            and self.exprs == other.exprs


@dataclass
class SolveSettings:
    max_iters: int = 200
    feas_tol: float = 1e-8
    rel_gap: float = 1e-8
    verbose: bool = False


@dataclass
class Solution:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    solver_tolerance: float = float("nan")
    message: str = ""


class ConeProgram:
    """Minimization of an affine objective subject to cone constraints.

    Quadratic objectives must be pre-rewritten through
    :meth:`add_epigraph_sum_of_squares`; volume objectives through
    :meth:`add_rootdet_hypograph`.
    """

    def __init__(self):
        self.variables = []  # ordered Variable declarations
        self._by_name = {}
        self.constraints = []
        self.objective = Affine(())
        self._aux = 0

    # -- variable declaration -------------------------------------------------

    def _declare(self, name, kind, dim):
        if name in self._by_name:
            raise ValueError(f"variable {name!r} already declared")
        if kind not in VAR_KINDS:
            raise ValueError(f"unknown variable kind {kind!r}")
        var = Variable(name, kind, dim)
        self.variables.append(var)
        self._by_name[name] = var
        return var

    def scalar(self, name):
        self._declare(name, "scalar", 1)
        return Affine((), {name: np.ones((1,))}, 0.0)

    def vector(self, name, n):
        self._declare(name, "vector", n)
        return Affine((n,), {name: np.eye(n)}, np.zeros(n))

    def symmetric(self, name, n):
        var = self._declare(name, "symmetric", n)
        d = var.flat_dim
        coeff = np.zeros((n, n, d))
        for i in range(n):
            for j in range(i, n):
                k = _tri_index(i, j, n)
                coeff[i, j, k] = 1.0
                coeff[j, i, k] = 1.0
        return Affine((n, n), {name: coeff}, np.zeros((n, n)))

    def matrix(self, name, m, n):
        """General m-by-n matrix variable, stored as vector(m*n) row-major."""
        self._declare(name, "vector", m * n)
        coeff = np.eye(m * n).reshape(m, n, m * n)
        return Affine((m, n), {name: coeff}, np.zeros((m, n)))

    def _aux_scalar(self, tag):
        name = f"_{tag}{self._aux}"
        self._aux += 1
        return self.scalar(name)

    # -- constraints ----------------------------------------------------------

    def _check_vars(self, *exprs):
        for e in exprs:
            for name, c in e.coeffs.items():
                var = self._by_name.get(name)
                if var is None:
                    raise ValueError(f"constraint references undeclared variable {name!r}")
                if c.shape[-1] != var.flat_dim:
                    raise ValueError(f"coefficient of {name!r} has wrong flat dimension")

    def add_linear_eq(self, expr):
        """expr == 0 componentwise."""
        expr = expr.ravel() if expr.shape != () else expr
        self._check_vars(expr)
        self.constraints.append(Constraint("linear_eq", (expr,)))

    def add_linear_ineq(self, expr):
        """expr <= 0 componentwise."""
        expr = expr.ravel() if expr.shape != () else expr
        self._check_vars(expr)
        self.constraints.append(Constraint("linear_ineq", (expr,)))

    def add_soc(self, t, v):
        """||v||_2 <= t with scalar affine t and vector affine v."""
        if t.shape != ():
            raise ValueError("soc bound t must be scalar")
        v = v.ravel() if len(v.shape) != 1 else v
        self._check_vars(t, v)
        self.constraints.append(Constraint("soc", (t, v)))

    def add_psd(self, M, sym_tol=1e-9):
        """M >= 0 (PSD) for a symmetric affine matrix expression."""
        if len(M.shape) != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("psd constraint requires a square matrix expression")
        scale = 1.0 + max(float(np.max(np.abs(M.const), initial=0.0)),
                          max((float(np.max(np.abs(c))) for c in M.coeffs.values()), default=0.0))
        asym = max(float(np.max(np.abs(M.const - M.const.T), initial=0.0)),
                   max((float(np.max(np.abs(c - np.swapaxes(c, 0, 1)))) for c in M.coeffs.values()),
                       default=0.0))
        if asym > sym_tol * scale:
            raise ValueError("psd constraint payload is not symmetric")
        M = Affine(M.shape, {k: 0.5 * (c + np.swapaxes(c, 0, 1)) for k, c in M.coeffs.items()},
                   0.5 * (M.const + M.const.T))
        self._check_vars(M)
        self.constraints.append(Constraint("psd", (M,)))

    def set_objective(self, expr):
        if expr.shape != ():
            raise ValueError("objective must be a scalar affine expression")
        self._check_vars(expr)
        self.objective = expr

    # -- derived constructions ------------------------------------------------

    def add_epigraph_sum_of_squares(self, terms):
        """Add t with sum(term^2) <= t; minimizing t minimizes the sum of squares.

        Uses the rotated-cone rewrite ||(terms, (t-1)/2)|| <= (t+1)/2.
        """
        t = self._aux_scalar("epi")
        v = stack(list(terms) + [(t - 1.0) * 0.5])
        self.add_soc((t + 1.0) * 0.5, v)
        return t

    def _geomean_pair(self, a, b):
        # u^2 <= a*b (and a, b >= 0) as ||(2u, a-b)|| <= a+b
        u = self._aux_scalar("gm")
        self.add_soc(a + b, stack([2.0 * u, a - b]))
        return u

    def add_geomean_hypograph(self, terms):
        """Add t with t <= (prod terms)^(1/len(terms)), terms forced nonnegative."""
        terms = list(terms)
        if not terms:
            raise ValueError("geomean of an empty list")
        t = self._aux_scalar("geo")
        depth = 1
        while depth < len(terms):
            depth *= 2
        level = terms + [t] * (depth - len(terms))
        while len(level) > 1:
            level = [self._geomean_pair(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        self.add_linear_ineq(t - level[0])
        self.add_linear_ineq(-t)
        return t

    def add_rootdet_hypograph(self, X):
        """Add t with t <= det(X)^(1/n) for a symmetric PSD matrix expression X.

        Maximizing t maximizes log det X (same maximizer, monotone transform),
        which keeps the objective affine.  Uses the lower-triangular factor
        bound det(X) >= prod(diag(Z)) from [[X, Z], [Z^T, diag(Z)]] >= 0.
        """
        n = X.shape[0]
        name = f"_rdZ{self._aux}"
        self._aux += 1
        self._declare(name, "vector", n * (n + 1) // 2)
        coeff = np.zeros((n, n, n * (n + 1) // 2))
        for i in range(n):
            for j in range(i + 1):
                coeff[i, j, _tri_index(j, i, n)] = 1.0  # lower triangular fill
        Z = Affine((n, n), {name: coeff}, np.zeros((n, n)))
        diag = [Z[i, i] for i in range(n)]
        Dm = Affine((n, n))  # diag(Z) as a matrix expression
        for i in range(n):
            Dm = Dm + smul(diag[i], _unit(n, i))
        self.add_psd(block([[X, Z], [Z.T, Dm]]))
        return self.add_geomean_hypograph(diag)

    # -- serialization ----------------------------------------------------------

    def dump(self):
        """Deterministic text form: one declaration or constraint per line."""
        lines = []
        for var in self.variables:
            lines.append(f"var {var.name} {var.kind} {var.dim}")
        lines.append("objective " + json.dumps(self.objective.to_obj(), sort_keys=True))
        for con in self.constraints:
            payload = {"exprs": [e.to_obj() for e in con.exprs]}
            lines.append(f"{con.kind} " + json.dumps(payload, sort_keys=True))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text):
        prog = ConeProgram()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            head, _, rest = line.partition(" ")
            if head == "var":
                name, kind, dim = rest.split()
                prog._declare(name, kind, int(dim))
            elif head == "objective":
                prog.objective = Affine.from_obj(json.loads(rest))
            elif head in ("linear_eq", "linear_ineq", "soc", "psd"):
                obj = json.loads(rest)
                exprs = tuple(Affine.from_obj(e) for e in obj["exprs"])
                prog.constraints.append(Constraint(head, exprs))
            else:
                raise ValueError(f"unrecognized line: {line!r}")
        return prog

    def __eq__(self, other):
        return isinstance(other, ConeProgram) \
            and self.variables == other.variables \
            and self.objective == other.objective \
            and self.constraints == other.constraints


def _unit(n, i):
    E = np.zeros((n, n))
    E[i, i] = 1.0
    return E


# -- residual checking ---------------------------------------------------------


def max_violation(prog, values, relative=False):
    """Worst constraint violation at ``values``; independent of any solver.

    With ``relative=True`` violations are normalized at the scale of the
    entries they involve: per row for linear constraints, by the cone vector
    magnitude for second-order cones, and by a diagonal (Jacobi) rescaling
    for semidefinite blocks so that huge well-satisfied entries cannot mask a
    violation in a small sub-block.
    """
    worst = 0.0
    flats = {var.name: _value_to_flat(var, values[var.name]) for var in prog.variables}

    def val(expr):
        out = np.asarray(expr.const, dtype=float).copy()
        for name, c in expr.coeffs.items():
            out = out + c @ flats[name]
        return out

    def row_scale(expr):
        if not relative:
            return 1.0
        total = np.abs(np.atleast_1d(np.asarray(expr.const, dtype=float)))
        for name, c in expr.coeffs.items():
            total = total + np.abs(np.atleast_1d(c @ flats[name]))
        return 1.0 + total

    for con in prog.constraints:
        if con.kind == "linear_eq":
            r = np.abs(np.atleast_1d(val(con.exprs[0]))) / row_scale(con.exprs[0])
            v = float(np.max(r, initial=0.0))
        elif con.kind == "linear_ineq":
            r = np.atleast_1d(val(con.exprs[0])) / row_scale(con.exprs[0])
            v = float(np.max(r, initial=0.0))
        elif con.kind == "soc":
            t, vec = con.exprs
            tv, vv = float(val(t)), val(vec)
            v = float(np.linalg.norm(vv) - tv)
            if relative:
                v /= 1.0 + abs(tv) + float(np.linalg.norm(vv))
        else:  # psd
            M = val(con.exprs[0])
            M = 0.5 * (M + M.T)
            if relative:
                d = 1.0 / np.sqrt(1.0 + np.abs(np.diag(M)))
                M = M * np.outer(d, d)
            v = -float(np.linalg.eigvalsh(M)[0])
        worst = max(worst, v)
    return worst


def _value_to_flat(var, value):
    if var.kind == "scalar":
        return np.array([float(value)])
    if var.kind == "vector":
        return np.asarray(value, dtype=float).ravel()
    n = var.dim
    M = np.asarray(value, dtype=float)
    return np.array([M[i, j] for i in range(n) for j in range(i, n)])


def _flat_to_value(var, flat):
    if var.kind == "scalar":
        return float(flat[0])
    if var.kind == "vector":
        return np.asarray(flat, dtype=float)
    n = var.dim
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = M[j, i] = flat[_tri_index(i, j, n)]
    return M


# -- Clarabel backend ----------------------------------------------------------

_SQRT2 = np.sqrt(2.0)


def _svec_matrix(n):
    """Rows mapping a full symmetric n*n (row-major flattened) to Clarabel svec."""
    m = n * (n + 1) // 2
    S = np.zeros((m, n * n))
    k = 0
    for j in range(n):  # upper triangle, column-major
        for i in range(j + 1):
            if i == j:
                S[k, i * n + j] = 1.0
            else:
                S[k, i * n + j] = _SQRT2 / 2.0
                S[k, j * n + i] = _SQRT2 / 2.0
            k += 1
    return S


def compile_standard_form(prog):
    """Flatten a ConeProgram into (q, obj_const, A, b, cones, offsets)."""
    offsets, off = {}, 0
    for var in prog.variables:
        offsets[var.name] = off
        off += var.flat_dim
    n_tot = off

    q = np.zeros(n_tot)
    for name, c in prog.objective.coeffs.items():
        q[offsets[name]:offsets[name] + c.shape[-1]] += c
    obj_const = float(prog.objective.const)

    rows_A, b_parts, cones = [], [], []

    def expr_rows(expr, sign):
        # rows of sign * coeffs, stacked into dense (m, n_tot)
        m = expr.shape[0] if expr.shape else 1
        const = np.atleast_1d(expr.const).astype(float)
        R = np.zeros((m, n_tot))
        for name, c in expr.coeffs.items():
            c = c.reshape(m, -1)
            R[:, offsets[name]:offsets[name] + c.shape[1]] += sign * c
        return R, const

    eq_rows, eq_b = [], []
    ineq_rows, ineq_b = [], []
    soc_blocks, psd_blocks = [], []
    for con in prog.constraints:
        if con.kind == "linear_eq":
            R, c = expr_rows(con.exprs[0], 1.0)
            eq_rows.append(R)
            eq_b.append(-c)
        elif con.kind == "linear_ineq":
            R, c = expr_rows(con.exprs[0], 1.0)
            ineq_rows.append(R)
            ineq_b.append(-c)
        elif con.kind == "soc":
            t, v = con.exprs
            Rt, ct = expr_rows(t, -1.0)
            Rv, cv = expr_rows(v, -1.0)
            soc_blocks.append((np.vstack([Rt, Rv]), np.concatenate([ct, cv])))
        else:  # psd
            M = con.exprs[0]
            n = M.shape[0]
            S = _svec_matrix(n)
            const = S @ M.const.reshape(n * n)
            R = np.zeros((S.shape[0], n_tot))
            for name, c in M.coeffs.items():
                R[:, offsets[name]:offsets[name] + c.shape[-1]] += \
                    -(S @ c.reshape(n * n, -1))
            psd_blocks.append((R, const, n))

    if eq_rows:
        rows_A.append(np.vstack(eq_rows))
        b_parts.append(np.concatenate(eq_b))
        cones.append(clarabel.ZeroConeT(rows_A[-1].shape[0]))
    if ineq_rows:
        rows_A.append(np.vstack(ineq_rows))
        b_parts.append(np.concatenate(ineq_b))
        cones.append(clarabel.NonnegativeConeT(rows_A[-1].shape[0]))
    for R, c in soc_blocks:
        rows_A.append(R)
        b_parts.append(c)
        cones.append(clarabel.SecondOrderConeT(R.shape[0]))
    for R, c, n in psd_blocks:
        rows_A.append(R)
        b_parts.append(c)
        cones.append(clarabel.PSDTriangleConeT(n))

    A = np.vstack(rows_A) if rows_A else np.zeros((0, n_tot))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    return q, obj_const, A, b, cones, offsets


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve(prog, settings=None):
    """Solve a ConeProgram with Clarabel; failures become statuses, not crashes."""
    settings = settings or SolveSettings()
    q, obj_const, A, b, cones, offsets = compile_standard_form(prog)
    n_tot = q.shape[0]

    cl = clarabel.DefaultSettings()
    cl.verbose = settings.verbose
    cl.max_iter = settings.max_iters
    cl.tol_feas = settings.feas_tol
    cl.tol_gap_rel = settings.rel_gap
    cl.tol_gap_abs = settings.rel_gap
    try:
        solver = clarabel.DefaultSolver(
            sparse.csc_matrix((n_tot, n_tot)), q,
            sparse.csc_matrix(A), b, cones, cl)
        raw = solver.solve()
    except BaseException as exc:  # the backend must never crash the caller
        return Solution("numerical_failure", message=f"backend error: {exc}")

    name = str(raw.status)
    status = _STATUS_MAP.get(name, "numerical_failure")
    if status != "optimal":
        return Solution(status, message=name)

    x = np.asarray(raw.x, dtype=float)
    values = {}
    for var in prog.variables:
        flat = x[offsets[var.name]:offsets[var.name] + var.flat_dim]
        values[var.name] = _flat_to_value(var, flat)
    achieved = settings.feas_tol if name == "Solved" else 1e-4
    # never trust the solver's own feasibility claim (equilibration can hide
    # large absolute violations on badly scaled or marginal problems)
    residual = max_violation(prog, values, relative=True)
    if residual > 10.0 * achieved:
        return Solution("numerical_failure",
                        message=f"{name}, but solution violates constraints "
                                f"(scaled residual {residual:.2e})")
    return Solution("optimal", values=values,
                    objective=float(q @ x) + obj_const,
                    solver_tolerance=achieved, message=name)
