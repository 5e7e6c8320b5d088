"""Dense two-phase simplex with a Bland's-rule guard against cycling.

Works on float64 tableaus (tolerance 1e-9) or on object arrays of Fractions
(exact, tolerance 0). After the final pivot the basis is re-solved from the
original data, which both polishes the float solution and yields dual
prices for a duality-gap certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

FLOAT_TOL = 1e-9
GAP_TOL = 1e-7


@dataclass
class LinearProgram:
    """maximize (or minimize) c.x subject to rows A x (<=, =, >=) b and lb <= x <= ub."""

    c: Sequence
    A: Sequence
    b: Sequence
    senses: Sequence[str] | None = None
    lb: Sequence | None = None
    ub: Sequence | None = None
    maximize: bool = True
    tol: float = FLOAT_TOL

    def __post_init__(self):
        n = len(self.c)
        m = len(self.b)
        if m and any(len(row) != n for row in self.A):
            raise ValueError("constraint matrix rows must match the objective length")
        if len(self.A) != m:
            raise ValueError("constraint matrix and right-hand side disagree on row count")
        if self.senses is None:
            self.senses = ["<="] * m
        if len(self.senses) != m or any(s not in ("<=", "=", ">=") for s in self.senses):
            raise ValueError("senses must be one of '<=', '=', '>=' per row")
        if self.lb is None:
            self.lb = [0] * n
        if self.ub is None:
            self.ub = [float("inf")] * n
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bounds must match the number of variables")

    @property
    def n(self) -> int:
        return len(self.c)


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    objective: float | Fraction | None = None
    iterations: int = 0
    gap: float | None = None
    dual_infeasibility: float | None = None
    primal_residual: float | None = None
    certified: bool = False
    message: str = ""
    basis: list = field(default_factory=list)


def _neg_inf(v) -> bool:
    return isinstance(v, float) and v == float("-inf")


def _pos_inf(v) -> bool:
    return isinstance(v, float) and v == float("inf")


class _Standard:
    """maximize c.y s.t. A y = b, y >= 0, with b >= 0, built from a LinearProgram."""

    def __init__(self, lp: LinearProgram, exact: bool):
        conv = Fraction if exact else float
        self.exact = exact
        n = lp.n
        cols = []  # (original index, sign, shift)
        for j in range(n):
            lo = lp.lb[j]
            if _neg_inf(lo):
                cols.append((j, 1))
                cols.append((j, -1))
            else:
                cols.append((j, 1))
        self.cols = cols
        sign = 1 if lp.maximize else -1
        lo = [conv(0) if _neg_inf(v) else conv(v) for v in lp.lb]
        self.shift = lo

        rows, rhs, senses = [], [], []
        for r in range(len(lp.b)):
            rows.append([conv(lp.A[r][j]) for j in range(n)])
            rhs.append(conv(lp.b[r]))
            senses.append(lp.senses[r])
        for j in range(n):
            u = lp.ub[j]
            if not _pos_inf(u):
                row = [conv(0)] * n
                row[j] = conv(1)
                rows.append(row)
                rhs.append(conv(u))
                senses.append("<=")

        m = len(rows)
        nv = len(cols)
        dtype = object if exact else float
        Ay = np.zeros((m, nv), dtype=dtype)
        if exact:
            Ay[...] = Fraction(0)
        b = np.empty(m, dtype=dtype)
        for r in range(m):
            # substitute x_j = lo_j + sign * y
            shift = sum((rows[r][j] * lo[j] for j in range(n)), conv(0))
            b[r] = rhs[r] - shift
            for col, (j, s) in enumerate(cols):
                Ay[r, col] = rows[r][j] * s
        c = np.array([conv(lp.c[j]) * s * sign for (j, s) in cols], dtype=dtype)
        self.const = sum((conv(lp.c[j]) * lo[j] for j in range(n)), conv(0))
        self.sign = sign

        flip = [b[r] < 0 for r in range(m)]
        for r in range(m):
            if flip[r]:
                Ay[r] = -Ay[r]
                b[r] = -b[r]
                senses[r] = {"<=": ">=", ">=": "<=", "=": "="}[senses[r]]

        n_slack = sum(s != "=" for s in senses)
        n_art = sum(s != "<=" for s in senses)
        N = nv + n_slack + n_art
        T = np.zeros((m, N + 1), dtype=dtype)
        if exact:
            T[...] = Fraction(0)
        T[:, :nv] = Ay
        T[:, N] = b
        basis = []
        art_cols = []
        s_col = nv
        a_col = nv + n_slack
        one = conv(1)
        for r, s in enumerate(senses):
            if s == "<=":
                T[r, s_col] = one
                basis.append(s_col)
                s_col += 1
            elif s == ">=":
                T[r, s_col] = -one
                s_col += 1
                T[r, a_col] = one
                basis.append(a_col)
                art_cols.append(a_col)
                a_col += 1
            else:
                T[r, a_col] = one
                basis.append(a_col)
                art_cols.append(a_col)
                a_col += 1
        self.T = T
        self.basis = basis
        self.nv = nv
        self.n_struct = nv + n_slack  # structural columns (no artificials)
        self.art = set(art_cols)
        self.c = np.zeros(N, dtype=dtype)
        if exact:
            self.c[...] = Fraction(0)
        self.c[:nv] = c
        # original equality system over structural columns, kept for the certificate
        self.A_full = T[:, : self.n_struct].copy()
        self.b_full = b.copy()


def _pivot(T: np.ndarray, r: int, col: int):
    T[r] = T[r] / T[r, col]
    colv = T[:, col].copy()
    colv[r] = 0
    nz = np.flatnonzero(colv != 0)
    if nz.size:
        T[nz] -= np.outer(colv[nz], T[r])


def _reduced_costs(T, basis, cost):
    cb = cost[basis]
    return cost - cb @ T[:, :-1], cb @ T[:, -1]


def _simplex(T, basis, cost, allowed, tol, max_iter, it0=0, stall=50):
    """Pivot tableau T in place until optimal. Returns (status, iterations).

    Entering columns are chosen by largest reduced cost; after `stall`
    consecutive degenerate pivots the rule switches to Bland's (smallest
    index), which cannot cycle, until the objective strictly improves.
    """
    it = it0
    m = T.shape[0]
    cols = np.flatnonzero(allowed)
    degenerate = 0
    while True:
        red, _ = _reduced_costs(T, basis, cost)
        cand = cols[red[cols] > tol]
        if cand.size == 0:
            return "optimal", it
        if it >= max_iter:
            return "iteration_limit", it
        if degenerate >= stall:
            enter = int(cand[0])
        else:
            enter = int(cand[np.argmax(red[cand])])
        col = T[:, enter]
        best_r, best_ratio = -1, None
        for r in range(m):
            if col[r] > tol:
                ratio = T[r, -1] / col[r]
                if (best_ratio is None or ratio < best_ratio
                        or (ratio == best_ratio and basis[r] < basis[best_r])):
                    best_r, best_ratio = r, ratio
        if best_r < 0:
            return "unbounded", it
        degenerate = degenerate + 1 if best_ratio <= tol else 0
        _pivot(T, best_r, enter)
        basis[best_r] = enter
        it += 1


def _relax_degenerate_rows(T, basis, std) -> bool:
    """Add tiny distinct offsets to zero right-hand sides of slack rows.

    Homogeneous rows make every phase-1 pivot degenerate, and the solver then
    crawls under Bland's rule. Loosening <= rows only enlarges the feasible
    set, so an infeasible verdict on the relaxed system is still valid.
    """
    art = std.art
    rows = [r for r in range(T.shape[0]) if basis[r] not in art and T[r, -1] == 0]
    if not rows:
        return False
    rng = np.random.default_rng(0)
    T[rows, -1] = 1e-7 * (1.0 + rng.random(len(rows)))
    return True


def _solve_exact(M: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    n = len(M)
    aug = [list(M[i]) + [rhs[i]] for i in range(n)]
    for c in range(n):
        p = next(r for r in range(c, n) if aug[r][c] != 0)
        aug[c], aug[p] = aug[p], aug[c]
        inv = 1 / aug[c][c]
        aug[c] = [v * inv for v in aug[c]]
        for r in range(n):
            if r != c and aug[r][c] != 0:
                f = aug[r][c]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[c])]
    return [aug[i][n] for i in range(n)]


def solve_lp(lp: LinearProgram, exact: bool = False, max_iter: int = 50_000) -> LPResult:
    """Solve with two-phase simplex; exact=True runs the whole pivot sequence in Fractions."""
    tol = 0 if exact else lp.tol
    std = _Standard(lp, exact)
    T, basis = std.T, std.basis
    N = T.shape[1] - 1
    zero = Fraction(0) if exact else 0.0
    iters = 0

    if std.art:
        cost1 = np.zeros(N, dtype=T.dtype)
        if exact:
            cost1[...] = Fraction(0)
        for a in std.art:
            cost1[a] = Fraction(-1) if exact else -1.0
        allowed = np.ones(N, dtype=bool)
        T0, basis0 = T.copy(), list(basis)
        relaxed = not exact and _relax_degenerate_rows(T, basis, std)
        status, iters = _simplex(T, basis, cost1, allowed, tol, max_iter)
        if status == "iteration_limit":
            return LPResult("iteration_limit", iterations=iters, message="phase 1 hit the iteration cap")
        if relaxed:
            _, val = _reduced_costs(T, basis, cost1)
            scale = max([1.0] + [abs(float(v)) for v in std.b_full])
            if val < -tol * scale:
                # the relaxed system is already infeasible, so the original is too
                return LPResult("infeasible", iterations=iters,
                                message=f"relaxed phase 1 optimum {float(val):.3e} < 0")
            try:
                T = np.linalg.solve(T0[:, basis], T0)
            except np.linalg.LinAlgError:
                T = None
            if T is None or T[:, -1].min() < -tol * scale:
                T, basis = T0, basis0
                status, iters = _simplex(T, basis, cost1, allowed, tol, max_iter, iters)
                if status == "iteration_limit":
                    return LPResult("iteration_limit", iterations=iters,
                                    message="phase 1 hit the iteration cap")
            else:
                T[np.abs(T) < 1e-14] = 0.0
                T[:, -1] = np.maximum(T[:, -1], 0.0)
        _, val = _reduced_costs(T, basis, cost1)
        scale = max([1.0] + [abs(float(v)) for v in std.b_full])
        if (val < 0) if exact else (val < -tol * scale):
            return LPResult("infeasible", iterations=iters, message=f"phase 1 optimum {float(val):.3e} < 0")
        # drive artificial variables out of the basis; drop redundant rows
        keep = []
        for r in range(T.shape[0]):
            if basis[r] in std.art:
                row = T[r, : std.n_struct]
                cand = [j for j in range(std.n_struct) if abs(row[j]) > tol]
                if cand:
                    _pivot(T, r, cand[0])
                    basis[r] = cand[0]
                    keep.append(r)
            else:
                keep.append(r)
        T = T[keep]
        basis = [basis[r] for r in keep]
        std.A_full = std.A_full[keep]
        std.b_full = std.b_full[keep]

    allowed = np.zeros(N, dtype=bool)
    allowed[: std.n_struct] = True
    status, iters = _simplex(T, basis, std.c, allowed, tol, max_iter, iters)
    if status != "optimal":
        msg = ("phase 2 hit the iteration cap" if status == "iteration_limit"
               else "objective increases without bound along a feasible ray")
        return LPResult(status, iterations=iters, message=msg)

    # re-solve the final basis from the original data
    m = len(basis)
    A_B = std.A_full[:, basis]
    c_B = std.c[basis]
    if exact:
        xb = _solve_exact([list(A_B[i]) for i in range(m)], list(std.b_full)) if m else []
        y = _solve_exact([list(A_B[:, i]) for i in range(m)], list(c_B)) if m else []
        y = np.array(y, dtype=object)
        xb = np.array(xb, dtype=object)
    else:
        try:
            xb = np.linalg.solve(A_B.astype(float), std.b_full.astype(float)) if m else np.zeros(0)
            y = np.linalg.solve(A_B.T.astype(float), c_B.astype(float)) if m else np.zeros(0)
        except np.linalg.LinAlgError:
            xb = T[:, -1].astype(float)
            y = np.zeros(m)
        xb = np.where(np.abs(xb) < 1e-15, 0.0, xb)
    ys = np.zeros(std.n_struct, dtype=T.dtype)
    if exact:
        ys[...] = Fraction(0)
    for r, j in enumerate(basis):
        ys[j] = xb[r]
    reduced = std.c[: std.n_struct] - (std.A_full.T @ y if m else 0)
    dual_inf = max((reduced[j] for j in range(std.n_struct)), default=zero)
    resid = (std.A_full @ ys - std.b_full) if m else np.zeros(0)
    resid_max = max((abs(v) for v in resid), default=zero)
    neg = min((v for v in ys), default=zero)
    primal = ys[: std.nv] @ std.c[: std.nv]
    dual = std.b_full @ y if m else zero
    gap = abs(primal - dual)

    x = np.empty(lp.n, dtype=object if exact else float)
    for j in range(lp.n):
        x[j] = std.shift[j]
    for col, (j, s) in enumerate(std.cols):
        x[j] = x[j] + s * ys[col]
    objective = std.sign * primal + std.const
    if exact:
        certified = gap == 0 and dual_inf <= 0 and resid_max == 0 and neg >= 0
    else:
        certified = (gap <= GAP_TOL and dual_inf <= GAP_TOL
                     and resid_max <= FLOAT_TOL and neg >= -FLOAT_TOL)
        x = np.where(np.abs(x) < 1e-15, 0.0, x)
    return LPResult("optimal", x=x, objective=objective, iterations=iters,
                    gap=float(gap), dual_infeasibility=float(dual_inf),
                    primal_residual=float(max(resid_max, -neg if neg < 0 else 0)),
                    certified=bool(certified), basis=list(basis))
