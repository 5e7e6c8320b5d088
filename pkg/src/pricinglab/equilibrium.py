"""Stage-game solution concepts.

Stackelberg commitments are computed with one LP per candidate follower
price (maximize the leader's payoff subject to that price being a follower
best response), solved by the simplex engine in `lp`.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .lp import LinearProgram, LPResult, solve_lp
from .stage_game import (
    DomainError,
    MarketModel,
    as_distribution,
    exact_payoff_matrix,
    own_payoff_vector,
    payoff_matrices,
)

TIE_TOL = 1e-7
DEFAULT_TIE_EPS = 1e-9


class PreconditionError(ValueError):
    """A lemma's hypothesis does not hold for the given input."""


@dataclass
class StageSolution:
    model: MarketModel
    leader_dist: np.ndarray
    follower_action: int
    leader_value: float
    follower_value: float
    leader: int = 1
    certified: bool = True
    exact_dist: list | None = None
    candidate_values: list = field(default_factory=list)

    @property
    def follower_price(self) -> float:
        return (self.follower_action + 1) / self.model.k

    @property
    def buyer_price(self) -> float:
        return self.leader_value + self.follower_value

    def to_json(self) -> str:
        d = dict(self.model.describe())
        d.update(leader=self.leader, leader_value=float(self.leader_value),
                 follower_value=float(self.follower_value),
                 follower_action=self.follower_price,
                 leader_dist=[float(x) for x in self.leader_dist])
        return json.dumps(d)


@dataclass(frozen=True)
class DominanceWitness:
    dominated_price: float
    dominating_price: float
    gap: float


class IteratedDominance(NamedTuple):
    indices: np.ndarray
    prices: np.ndarray
    removed: list  # (index, certified margin) in removal order


class CCEResult(NamedTuple):
    feasible: bool
    joint: np.ndarray | None
    status: str


def _leader_matrices(model: MarketModel, exact: bool):
    """(L, F): L[i, j] leader payoff, F[i, j] follower payoff, leader plays i, follower j."""
    if exact:
        A = exact_payoff_matrix(model)
        k = model.k
        B = [[A[j][i] for j in range(k)] for i in range(k)]
        return A, B
    M = payoff_matrices(model)
    return M.A, M.B


def _commitment_lp(L, F, j: int, k: int, margin=0) -> LinearProgram:
    # follower payoff of j' minus that of j, per leader price i, must be <= -margin
    rows = [[F[i][jp] - F[i][j] for i in range(k)] for jp in range(k) if jp != j]
    rows.append([1] * k)
    rhs = [-margin] * (k - 1) + [1]
    return LinearProgram([L[i][j] for i in range(k)], rows, rhs, ["<="] * (k - 1) + ["="])


def _solve_candidate(args) -> tuple[int, LPResult]:
    model, j, exact, margin = args
    L, F = _leader_matrices(model, exact)
    return j, solve_lp(_commitment_lp(L, F, j, model.k, margin), exact=exact)


def _workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("PRICINGLAB_THREADS", "1") or 1)
    return max(1, workers)


def stackelberg_stage(model: MarketModel, leader: int = 1, exact: bool = False,
                      workers: int | None = None) -> StageSolution:
    """Optimal commitment for `leader` with the follower breaking ties in the leader's favor."""
    if leader not in (1, 2):
        raise ValueError("leader must be seller 1 or 2")
    if exact and model.rule != "bertrand":
        raise DomainError("exact mode needs rational payoffs (Bertrand)")
    k = model.k
    if k == 1:
        return StageSolution(model, np.ones(1), 0, 0.5, 0.5, leader)
    # the game is symmetric, so seller 2 leading is the same program as seller 1 leading
    jobs = [(model, j, exact, 0) for j in range(k)]
    n = _workers(workers)
    if n > 1:
        with ProcessPoolExecutor(n) as ex:
            results = dict(ex.map(_solve_candidate, jobs))
    else:
        results = dict(map(_solve_candidate, jobs))
    return _pick(model, results, leader, exact)


def _pick(model: MarketModel, results: dict, leader: int, exact: bool) -> StageSolution:
    k = model.k
    values = [results[j].objective if results[j].status == "optimal" else None for j in range(k)]
    feasible = [v for v in values if v is not None]
    if not feasible:
        raise RuntimeError("every candidate follower LP is infeasible; this cannot happen")
    top = max(feasible)
    slack = 0 if exact else 1e-12
    j = next(j for j in range(k) if values[j] is not None and values[j] >= top - slack)
    res = results[j]
    exact_dist = list(res.x) if exact else None
    x = np.array([float(v) for v in res.x])
    x = np.maximum(x, 0.0)
    x /= x.sum()
    L, F = _leader_matrices(model, False)
    lv = float(x @ L[:, j])
    fv = float(x @ F[:, j])
    if exact:
        Le, Fe = _leader_matrices(model, True)
        lv_e = sum(exact_dist[i] * Le[i][j] for i in range(k))
        fv_e = sum(exact_dist[i] * Fe[i][j] for i in range(k))
        lv, fv = float(lv_e), float(fv_e)
    return StageSolution(model, x, j, lv, fv, leader, bool(res.certified), exact_dist,
                         [None if v is None else float(v) for v in values])


def follower_payoffs(model: MarketModel, leader_dist) -> np.ndarray:
    """Payoff of each follower price against the leader's distribution."""
    return own_payoff_vector(model, as_distribution(leader_dist, model.k, tol=1e-9))


def follower_tie_band(model: MarketModel, solution: StageSolution, tol: float = TIE_TOL) -> np.ndarray:
    """Indices of all follower prices within `tol` of the best follower payoff."""
    if solution.exact_dist is not None:
        _, Fe = _leader_matrices(model, True)
        k = model.k
        vals = [sum(solution.exact_dist[i] * Fe[i][j] for i in range(k)) for j in range(k)]
        best = max(vals)
        return np.array([j for j in range(k) if best - vals[j] <= tol])
    v = follower_payoffs(model, solution.leader_dist)
    return np.flatnonzero(v >= v.max() - tol)


class PerturbedSolution(NamedTuple):
    solution: StageSolution
    best_responses: np.ndarray
    shifted: float


def tie_break_perturbation(model: MarketModel, solution: StageSolution,
                           eps: float = DEFAULT_TIE_EPS) -> PerturbedSolution:
    """Shift `eps` leader mass from the follower's price j to the next price up.

    Against the shifted distribution, price j gains eps*p_j/2 for the follower
    while lower prices gain nothing, so j becomes a strict best response. The
    leader loses exactly what the follower gains, so the buyer price is unchanged.
    """
    j = solution.follower_action
    k = model.k
    if j >= k - 1:
        raise PreconditionError("follower already prices at the top of the grid; no price above to shift to")
    d = np.array(solution.leader_dist, dtype=float)
    if d[j] < eps:
        raise PreconditionError(f"leader mass {d[j]:.3g} at the follower's price is below eps={eps:g}")
    d[j] -= eps
    d[j + 1] += eps
    L, F = _leader_matrices(model, False)
    v = d @ F
    # a quarter of the created margin separates the intended action from the rest
    tol = eps * (j + 1) / k / 4
    br = np.flatnonzero(v >= v.max() - tol)
    jj = int(np.argmax(v))
    sol = StageSolution(model, d, jj, float(d @ L[:, jj]), float(v[jj]), solution.leader,
                        solution.certified)
    return PerturbedSolution(sol, br, eps)


def margin_stackelberg(model: MarketModel, j: int, margin: float) -> StageSolution | None:
    """Best commitment making j the follower's best response by at least `margin`."""
    L, F = _leader_matrices(model, False)
    res = solve_lp(_commitment_lp(L, F, j, model.k, margin))
    if res.status != "optimal":
        return None
    x = np.maximum(np.asarray(res.x, dtype=float), 0.0)
    x /= x.sum()
    return StageSolution(model, x, j, float(x @ L[:, j]), float(x @ F[:, j]), 1, res.certified)


def symmetric_nash_value(model: MarketModel) -> float:
    """Payoff of each seller when both price at 1/k (a Nash equilibrium in Bertrand)."""
    return float(payoff_matrices(model).A[0, 0])


# ---------------------------------------------------------------- grid oracle

def _compositions(n: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length `parts` summing to n (stars and bars)."""
    if parts == 1:
        return np.array([[n]])
    bars = np.array(list(itertools.combinations(range(n + parts - 1), parts - 1)))
    edges = np.hstack([-np.ones((len(bars), 1), dtype=int), bars,
                       np.full((len(bars), 1), n + parts - 1)])
    return np.diff(edges, axis=1) - 1


def _grid_values(X: np.ndarray, L: np.ndarray, F: np.ndarray, tie: float = 1e-12) -> np.ndarray:
    uf = X @ F
    ul = X @ L
    br = uf >= uf.max(axis=1, keepdims=True) - tie
    return np.where(br, ul, -np.inf).max(axis=1)


def stackelberg_grid_search(model: MarketModel, resolution: float = 1e-3,
                            max_points: int = 2_000_000, seeds: int = 5) -> tuple[float, np.ndarray]:
    """Brute-force commitment value over a simplex grid (oracle for small k).

    Uses the full grid when it has at most `max_points` points, otherwise a
    coarse grid followed by full-resolution boxes around the best coarse points.
    """
    M = payoff_matrices(model)
    k = model.k
    n = int(round(1 / resolution))
    full = math.comb(n + k - 1, k - 1)
    if full <= max_points:
        X = _compositions(n, k) / n
        v = _grid_values(X, M.A, M.B)
        i = int(np.argmax(v))
        return float(v[i]), X[i]
    coarse = 50
    Xc = _compositions(coarse, k) / coarse
    vc = _grid_values(Xc, M.A, M.B)
    order = np.argsort(-vc, kind="stable")
    best_v, best_x = -np.inf, None
    radius = max(1, n // coarse)
    offs = np.array(list(itertools.product(range(-radius, radius + 1), repeat=k - 1)))
    for idx in order[:seeds]:
        base = np.round(Xc[idx] * n).astype(int)
        Z = np.empty((len(offs), k), dtype=int)
        Z[:, :-1] = base[:-1] + offs
        Z[:, -1] = n - Z[:, :-1].sum(axis=1)
        Z = Z[(Z >= 0).all(axis=1)]
        for chunk in np.array_split(Z, max(1, len(Z) // 500_000)):
            X = chunk / n
            v = _grid_values(X, M.A, M.B)
            i = int(np.argmax(v))
            if v[i] > best_v:
                best_v, best_x = float(v[i]), X[i]
    return best_v, best_x


# ---------------------------------------------------------------- dominance

def _require_bertrand(model: MarketModel):
    if model.rule != "bertrand":
        raise DomainError("dominance analysis is implemented for the Bertrand rule only")


def marginal_domination_witness(model: MarketModel, opponent, x) -> DominanceWitness | None:
    """A lower price beating x by at least 1/(24k^2) when the opponent rarely prices above x."""
    _require_bertrand(model)
    k = model.k
    d = as_distribution(opponent, k)
    xi = model.grid.index(x)
    if xi < 2:
        raise PreconditionError(f"x = {x} must be at least 3/k")
    above = float(d[xi + 1:].sum())
    if above > 1 / (24 * k):
        raise PreconditionError(f"opponent mass above x is {above:.4g} > 1/(24k) = {1 / (24 * k):.4g}")
    v = own_payoff_vector(model, d)
    gaps = v[:xi] - v[xi]
    best = int(np.argmax(gaps))
    if gaps[best] < 1 / (24 * k * k):
        return None
    return DominanceWitness(model.grid.price(xi), model.grid.price(best), float(gaps[best]))


def _mixed_domination_margin(A: np.ndarray, m: int, eta: float) -> float:
    """Margin by which a mix of lower prices beats price m against every price 0..m."""
    w = np.full(m, eta / m)
    w[m - 1] += 1 - eta
    diff = w @ A[:m, : m + 1] - A[m, : m + 1]
    return float(diff.min())


def iterated_dominance(model: MarketModel, require_constants: bool = True) -> IteratedDominance:
    """Remove the highest surviving price while it is at least 3/k and strictly dominated.

    Each removal is certified by an explicit mixed strategy over lower surviving
    prices whose payoff exceeds the removed price against every surviving price.
    """
    _require_bertrand(model)
    k = model.k
    if require_constants and k < 20:
        raise PreconditionError("the elimination argument uses constants that need k >= 20")
    A = payoff_matrices(model).A
    top = k - 1
    removed = []
    while top >= 2:
        eta = 1.0 / (2 * k)
        margin = _mixed_domination_margin(A, top, eta)
        while margin <= 0 and eta > 1e-12:
            eta /= 2
            margin = _mixed_domination_margin(A, top, eta)
        if margin <= 0:
            break
        removed.append((top, margin))
        top -= 1
    idx = np.arange(top + 1)
    return IteratedDominance(idx, (idx + 1) / k, removed)


def epsilon_nash_check(model: MarketModel, d1, d2, eps: float = 0.0) -> tuple[bool, float, float]:
    d1 = as_distribution(d1, model.k)
    d2 = as_distribution(d2, model.k)
    v1 = own_payoff_vector(model, d2)
    v2 = own_payoff_vector(model, d1)
    g1 = float(v1.max() - d1 @ v1)
    g2 = float(v2.max() - d2 @ v2)
    return (g1 <= eps and g2 <= eps), g1, g2


# ---------------------------------------------------------------- logit analysis

def logit_threshold(tau: float, k: int) -> float:
    """max{2/(k(1 - e^-tau)), 2/tau}; infinite (no bound) when tau = 0."""
    if tau < 0 or not math.isfinite(tau):
        raise DomainError("tau must be finite and nonnegative")
    if tau == 0:
        return math.inf
    return max(2 / (k * -math.expm1(-tau)), 2 / tau)


def logit_grid_threshold(tau: float, k: int) -> float:
    """max{2/(k(1 - e^(-tau/k))), 2/tau}: prices above this lose to the next grid price down.

    Undercutting p by one grid step beats matching it exactly when
    (p - 1/k) / (1 + e^(-tau/k)) > p/2, i.e. p (1 - e^(-tau/k)) > 2/k. The
    closed form in logit_threshold uses e^(-tau) here, which is smaller and
    admits counterexamples when tau/k is moderate (k=30, tau=10, p=7/30).
    """
    if tau < 0 or not math.isfinite(tau):
        raise DomainError("tau must be finite and nonnegative")
    if tau == 0:
        return math.inf
    return max(2 / (k * -math.expm1(-tau / k)), 2 / tau)


def logit_ne_support_bound(tau: float, k: int) -> float:
    return logit_threshold(tau, k) + 1 / k


def verify_br_below(model: MarketModel, bound: float, n: int = 1000, seed: int = 0):
    """Check on random distributions with top price p* > bound that every best response is < p*.

    Returns (all_ok, checked, counterexamples as (top index, br indices)).
    """
    if model.rule != "logit":
        raise DomainError("this check concerns the logit rule")
    k = model.k
    rng = np.random.default_rng(seed)
    lo = int(math.floor(bound * k + 1e-9))  # first index whose price exceeds bound
    if lo >= k:
        return True, 0, []
    bad = []
    for _ in range(n):
        top = int(rng.integers(lo, k))
        support = rng.random(top + 1) < rng.uniform(0.1, 1.0)
        support[top] = True
        w = rng.dirichlet(np.ones(top + 1)) * support
        d = np.zeros(k)
        d[: top + 1] = w / w.sum()
        v = own_payoff_vector(model, d)
        br = np.flatnonzero(v >= v.max() - 1e-12)
        if br.max() >= top:
            bad.append((top, br))
    return not bad, n, bad


# ---------------------------------------------------------------- correlated equilibria

def cce_feasibility(model: MarketModel, min_support_price, kind: str = "cce",
                    exact: bool = False) -> CCEResult:
    """Is there a coarse correlated (kind='cce') or correlated (kind='ce') equilibrium
    whose joint distribution uses only prices >= min_support_price?"""
    if kind not in ("cce", "ce"):
        raise ValueError("kind must be 'cce' or 'ce'")
    k = model.k
    m = model.grid.index(min_support_price)
    if exact:
        A = exact_payoff_matrix(model)
    else:
        A = payoff_matrices(model).A.tolist()
    S = list(range(m, k))
    pairs = [(i, j) for i in S for j in S]
    col = {p: c for c, p in enumerate(pairs)}
    n = len(pairs)
    zero = Fraction(0) if exact else 0.0
    rows = []
    # seller 1 payoff at (i, j) is A[i][j]; seller 2 payoff at (i, j) is A[j][i]
    if kind == "cce":
        for a in range(k):
            r1 = [zero] * n
            r2 = [zero] * n
            for (i, j), c in col.items():
                r1[c] = A[a][j] - A[i][j]
                r2[c] = A[a][i] - A[j][i]
            rows += [r1, r2]
    else:
        for rec in S:
            for a in range(k):
                if a == rec:
                    continue
                r1 = [zero] * n
                r2 = [zero] * n
                for j in S:
                    r1[col[(rec, j)]] = A[a][j] - A[rec][j]
                    r2[col[(j, rec)]] = A[a][j] - A[rec][j]
                rows += [r1, r2]
    rows.append([1] * n)
    lp = LinearProgram([0] * n, rows, [0] * (len(rows) - 1) + [1],
                       ["<="] * (len(rows) - 1) + ["="])
    res = solve_lp(lp, exact=exact)
    if res.status == "infeasible":
        return CCEResult(False, None, res.status)
    if res.status != "optimal":
        raise RuntimeError(f"CCE LP failed: {res.status} {res.message}")
    J = np.zeros((k, k))
    for (i, j), c in col.items():
        J[i, j] = float(res.x[c])
    return CCEResult(True, J, res.status)
