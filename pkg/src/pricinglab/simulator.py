"""T-round repeated pricing game between two algorithms, plus the audits run on its transcript.

Play uses expected payoffs of the two mixed strategies; prices are never
sampled. Regret and frequency statistics are accumulated online, so long runs
can keep only every m-th round of distributions (plus phase boundaries)
without losing any audit quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .learners import History, PricingAlgorithm
from .stage_game import MarketModel, payoff_matrices

FULL_STORAGE_LIMIT = 2_000_000  # T * k floats per player stored in full by default
ACC = np.longdouble  # running sums over up to 1e6 rounds keep regret differences well below 1e-9


class InvalidPlay(RuntimeError):
    def __init__(self, t: int, player: int, defect: str):
        super().__init__(f"round {t}, player {player}: {defect}")
        self.t, self.player, self.defect = t, player, defect


@dataclass
class PlayerStats:
    cf: np.ndarray          # cumulative payoff each fixed price would have earned
    swap: np.ndarray        # swap[a, b] = sum_t x_t[a] * payoff of b at round t
    mass: np.ndarray        # sum_t x_t
    tail_mass: np.ndarray   # sum of x_t over the tail window
    U: float = 0.0
    mb_violations: int | None = None
    mb_first: list = field(default_factory=list)

    @classmethod
    def empty(cls, k: int) -> "PlayerStats":
        return cls(np.zeros(k, ACC), np.zeros((k, k), ACC), np.zeros(k, ACC), np.zeros(k, ACC), ACC(0))

    def to_dict(self) -> dict:
        f = lambda a: np.asarray(a, dtype=float).tolist()
        return {"cf": f(self.cf), "swap": f(self.swap), "mass": f(self.mass),
                "tail_mass": f(self.tail_mass), "U": float(self.U),
                "mb_violations": self.mb_violations}

    @classmethod
    def from_dict(cls, d: dict) -> "PlayerStats":
        return cls(np.array(d["cf"], ACC), np.array(d["swap"], ACC), np.array(d["mass"], ACC),
                   np.array(d["tail_mass"], ACC), ACC(d["U"]), d.get("mb_violations"))


@dataclass
class Transcript:
    model: MarketModel
    T: int
    u1: np.ndarray
    u2: np.ndarray
    buyer: np.ndarray
    rounds: np.ndarray            # 1-based indices of rounds whose distributions are stored
    d1: np.ndarray
    d2: np.ndarray
    stats: list
    tail_start: int
    tail_buyer: float
    configs: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    phases: list = field(default_factory=list)   # (round, player, phase) at each change

    @property
    def k(self) -> int:
        return self.model.k

    @property
    def is_full(self) -> bool:
        return len(self.rounds) == self.T

    def full_distributions(self, player: int):
        if not self.is_full:
            raise ValueError("this transcript keeps only a subset of rounds")
        return (self.d1, self.d2) if player == 1 else (self.d2, self.d1)

    @classmethod
    def from_rounds(cls, model: MarketModel, d1, d2, configs=None, seeds=None, phases=None,
                    u1=None, u2=None) -> "Transcript":
        """Build a fully stored transcript, computing every statistic from the distributions."""
        k = model.k
        d1 = np.asarray(d1, dtype=float).reshape(-1, k)
        d2 = np.asarray(d2, dtype=float).reshape(-1, k)
        T = d1.shape[0]
        A = payoff_matrices(model).A
        v1 = d2 @ A.T
        v2 = d1 @ A.T
        cu1 = np.einsum("ti,ti->t", d1, v1)
        cu2 = np.einsum("ti,ti->t", d2, v2)
        u1 = cu1 if u1 is None else np.asarray(u1, dtype=float)
        u2 = cu2 if u2 is None else np.asarray(u2, dtype=float)
        n_tail = max(1, math.ceil(T / 10)) if T else 0
        tail_start = T - n_tail + 1
        stats = []
        for own, v, u in ((d1, v1, u1), (d2, v2, u2)):
            own_x, v_x = own.astype(ACC), v.astype(ACC)
            s = PlayerStats(v_x.sum(axis=0), own_x.T @ v_x, own_x.sum(axis=0),
                            own_x[tail_start - 1:].sum(axis=0) if T else np.zeros(k, ACC), u.astype(ACC).sum())
            stats.append(s)
        buyer = u1 + u2
        return cls(model, T, u1, u2, buyer, np.arange(1, T + 1), d1, d2, stats, tail_start,
                   float(buyer[tail_start - 1:].sum()) if T else 0.0,
                   list(configs or []), list(seeds or []), list(phases or []))


def _check(d: np.ndarray, k: int, t: int, player: int) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (k,):
        raise InvalidPlay(t, player, f"shape {d.shape}, expected ({k},)")
    total = d.sum()
    if not abs(total - 1.0) <= 1e-12:
        raise InvalidPlay(t, player, f"weights sum to {total!r}")
    if d.min() < 0:
        raise InvalidPlay(t, player, f"negative weight {d.min():.3g}")
    return d


def run(alg1: PricingAlgorithm, alg2: PricingAlgorithm, model: MarketModel, T: int,
        store: str = "auto", stride: int | None = None, gamma=None) -> Transcript:
    """Play T rounds. Each algorithm sees the other's distributions from earlier rounds.

    store: 'full', 'strided' (every `stride`-th round plus phase boundaries) or
    'auto' (full unless T*k exceeds FULL_STORAGE_LIMIT). gamma, if given (a
    float or a function of t), turns on online mean-based violation counting.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    k = model.k
    A = payoff_matrices(model).A
    if store == "auto":
        store = "full" if T * k <= FULL_STORAGE_LIMIT else "strided"
    if store == "strided":
        stride = stride or max(1, math.ceil(T * k / FULL_STORAGE_LIMIT))
    elif store == "full":
        stride = 1
    else:
        raise ValueError(f"unknown storage mode {store!r}")
    alg1.reset()
    alg2.reset()
    keep = None if stride == 1 else 4
    h1, h2 = History(keep), History(keep)
    u1 = np.empty(T)
    u2 = np.empty(T)
    st = [PlayerStats.empty(k), PlayerStats.empty(k)]
    n_tail = max(1, math.ceil(T / 10))
    tail_start = T - n_tail + 1
    tail_buyer = 0.0
    rounds, s1, s2 = [], [], []
    phases = []
    last_phase = [None, None]
    if gamma is not None:
        gfun = gamma if callable(gamma) else (lambda t, g=float(gamma): g)
        for s in st:
            s.mb_violations = 0
    pending = None  # previous round, kept so phase boundaries are stored on both sides

    for t in range(1, T + 1):
        d1 = _check(alg1.next(h2, t, T), k, t, 1)
        d2 = _check(alg2.next(h1, t, T), k, t, 2)
        v1 = A @ d2
        v2 = A @ d1
        a = float(d1 @ v1)
        b = float(d2 @ v2)
        u1[t - 1] = a
        u2[t - 1] = b
        if gamma is not None and t > 1:
            g = gfun(t)
            for s, own in ((st[0], d1), (st[1], d2)):
                avg = s.cf / (t - 1)
                bad = np.flatnonzero((avg.max() - avg >= g) & (own > g))
                if bad.size:
                    s.mb_violations += int(bad.size)
                    if len(s.mb_first) < 100:
                        s.mb_first.extend((t, int(j), float(own[j])) for j in bad[: 100 - len(s.mb_first)])
        for s, own, v, u in ((st[0], d1, v1, a), (st[1], d2, v2, b)):
            s.cf += v
            s.swap += own[:, None] * v
            s.mass += own
            s.U += u
            if t >= tail_start:
                s.tail_mass += own
        if t >= tail_start:
            tail_buyer += a + b

        changed = False
        for p, alg in ((0, alg1), (1, alg2)):
            if alg.phase != last_phase[p]:
                phases.append((t, p + 1, alg.phase))
                last_phase[p] = alg.phase
                changed = t > 1
        keep_now = stride == 1 or t % stride == 0 or t == 1 or t == T or changed
        if changed and pending is not None and (not rounds or rounds[-1] != t - 1):
            rounds.append(t - 1)
            s1.append(pending[0])
            s2.append(pending[1])
        if keep_now:
            rounds.append(t)
            s1.append(d1)
            s2.append(d2)
        pending = (d1, d2)
        h1.append(d1)
        h2.append(d2)

    return Transcript(model, T, u1, u2, u1 + u2, np.array(rounds), np.array(s1), np.array(s2),
                      st, tail_start, tail_buyer, [alg1.config.to_dict(), alg2.config.to_dict()],
                      [alg1.seed, alg2.seed], phases)


# ---------------------------------------------------------------- derived quantities

def cumulative_payoffs(tr: Transcript) -> tuple[float, float]:
    return float(tr.u1.astype(ACC).sum()), float(tr.u2.astype(ACC).sum())


def average_buyer_price(tr: Transcript, window: tuple[int, int] | None = None) -> float:
    """Mean buyer price over rounds window[0]..window[1] (1-based, inclusive)."""
    if window is None:
        lo, hi = 1, tr.T
    else:
        lo, hi = window
    if not 1 <= lo <= hi <= tr.T:
        raise ValueError(f"window {window} is empty or outside 1..{tr.T}")
    return float(tr.buyer[lo - 1:hi].mean())


def tail_buyer_price(tr: Transcript) -> float:
    return tr.tail_buyer / (tr.T - tr.tail_start + 1)


def external_regret(tr: Transcript, player: int) -> float:
    s = tr.stats[player - 1]
    return float(s.cf.max() - s.U)


def swap_regret(tr: Transcript, player: int) -> float:
    s = tr.stats[player - 1]
    return float(s.swap.max(axis=1).sum() - s.U)


def frequency_above(tr: Transcript, player: int, threshold) -> float:
    """Average mass the player put on prices at or above `threshold`."""
    i = tr.model.grid.index(threshold)
    return float(tr.stats[player - 1].mass[i:].sum() / tr.T)


def tail_mass_above(tr: Transcript, player: int, threshold) -> float:
    """Average mass on prices >= threshold over the last 10% of rounds."""
    i = tr.model.grid.index(threshold)
    n = tr.T - tr.tail_start + 1
    return float(tr.stats[player - 1].tail_mass[i:].sum() / n)


@dataclass
class ConvergenceProfile:
    index: int
    rounds: np.ndarray
    player1: np.ndarray
    player2: np.ndarray
    tail1: float
    tail2: float


def convergence_profile(tr: Transcript, i: int) -> ConvergenceProfile:
    """Mass each player puts on prices >= i/k per stored round, plus the tail-window mean."""
    k = tr.k
    if not 1 <= i <= k:
        raise ValueError(f"price index must be in 1..{k}")
    a = tr.d1[:, i - 1:].sum(axis=1) if len(tr.rounds) else np.zeros(0)
    b = tr.d2[:, i - 1:].sum(axis=1) if len(tr.rounds) else np.zeros(0)
    price = i / k
    return ConvergenceProfile(i, tr.rounds, a, b, tail_mass_above(tr, 1, price),
                              tail_mass_above(tr, 2, price))


def algorithm_space_gaps(tr: Transcript, stackelberg, learner: int = 1) -> tuple[float, float]:
    """(learner gap, optimizer gap) for a learner facing a static optimizer.

    The learner's best deviation against a static opponent is its external
    regret. The optimizer's best deviation is bounded by the stage Stackelberg
    leader value per round, so its gap is V * T - U_optimizer.
    """
    opt = 2 if learner == 1 else 1
    U = cumulative_payoffs(tr)
    return external_regret(tr, learner), float(stackelberg.leader_value * tr.T - U[opt - 1])


def concatenate(a: Transcript, b: Transcript) -> Transcript:
    if a.model != b.model:
        raise ValueError("transcripts come from different markets")
    if not (a.is_full and b.is_full):
        raise ValueError("concatenation needs fully stored transcripts")
    return Transcript.from_rounds(a.model, np.vstack([a.d1, b.d1]), np.vstack([a.d2, b.d2]),
                                  a.configs, a.seeds)


def verify(tr: Transcript, tol: float = 1e-12) -> list[str]:
    """Re-evaluate stored rounds and the accounting identities; return failures."""
    problems = []
    A = payoff_matrices(tr.model).A
    if len(tr.rounds):
        idx = tr.rounds - 1
        r1 = np.einsum("ti,ij,tj->t", tr.d1, A, tr.d2)
        r2 = np.einsum("ti,ij,tj->t", tr.d2, A, tr.d1)
        e1 = np.abs(r1 - tr.u1[idx]).max()
        e2 = np.abs(r2 - tr.u2[idx]).max()
        if max(e1, e2) > tol:
            problems.append(f"stored payoffs differ from recomputation by {max(e1, e2):.3g}")
        s = np.abs(tr.d1.sum(axis=1) - 1).max(initial=0)
        s = max(s, np.abs(tr.d2.sum(axis=1) - 1).max(initial=0))
        if s > tol:
            problems.append(f"stored distribution off the simplex by {s:.3g}")
    db = np.abs(tr.buyer - (tr.u1 + tr.u2)).max(initial=0)
    if db > tol:
        problems.append(f"buyer price differs from u1 + u2 by {db:.3g}")
    U1, U2 = cumulative_payoffs(tr)
    if tr.T and abs(average_buyer_price(tr) - (U1 + U2) / tr.T) > tol:
        problems.append("average buyer price differs from (U1 + U2) / T")
    for p in (1, 2):
        if swap_regret(tr, p) < external_regret(tr, p) - 1e-9:
            problems.append(f"player {p}: swap regret below external regret")
    return problems


@dataclass
class AuditReport:
    T: int
    k: int
    model: dict
    payoffs: list
    average_buyer_price: float
    tail_buyer_price: float
    external_regret: list
    swap_regret: list
    mean_based_violations: list
    frequency_above: dict
    tail_frequency_above: dict
    invariant_failures: list

    @property
    def ok(self) -> bool:
        return not self.invariant_failures

    def to_dict(self) -> dict:
        return {
            "T": self.T, "k": self.k, "model": self.model, "payoffs": self.payoffs,
            "average_buyer_price": self.average_buyer_price,
            "tail_buyer_price": self.tail_buyer_price,
            "external_regret": self.external_regret, "swap_regret": self.swap_regret,
            "mean_based_violations": self.mean_based_violations,
            "frequency_above": self.frequency_above,
            "tail_frequency_above": self.tail_frequency_above,
            "invariant_failures": self.invariant_failures, "ok": self.ok,
        }


def audit(tr: Transcript, gamma=None) -> AuditReport:
    """Full audit. Mean-based violations are recounted when every round is stored,
    otherwise taken from the online count made during the run (None if not counted)."""
    from .learners import mean_based_audit

    mb = []
    for p in (1, 2):
        if tr.is_full:
            mb.append(len(mean_based_audit(tr, p, gamma)))
        else:
            mb.append(tr.stats[p - 1].mb_violations)
    prices = tr.model.prices
    freq = {f"{x:.12g}": [frequency_above(tr, 1, x), frequency_above(tr, 2, x)] for x in prices}
    tail = {f"{x:.12g}": [tail_mass_above(tr, 1, x), tail_mass_above(tr, 2, x)] for x in prices}
    return AuditReport(tr.T, tr.k, tr.model.describe(), list(cumulative_payoffs(tr)),
                       average_buyer_price(tr), tail_buyer_price(tr),
                       [external_regret(tr, 1), external_regret(tr, 2)],
                       [swap_regret(tr, 1), swap_regret(tr, 2)], mb, freq, tail, verify(tr))
