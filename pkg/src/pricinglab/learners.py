"""Pricing algorithms for the repeated game.

Every algorithm maps the opponent's past mixed strategies to a price
distribution for the current round. Feedback is full information: the
opponent's whole distribution is observed, so payoff vectors are exact
expectations.

Algorithms consume the history incrementally. If they are handed a history
that is not the continuation of what they have seen, they reset and replay
it from round 1, so outputs depend only on (configuration, seed, history).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.linalg.lapack import dgesv
from scipy.special import lambertw

from .stage_game import MarketModel, as_distribution, payoff_matrices, point_mass


class ConfigError(ValueError):
    pass


class History:
    """Append-only list of one player's distributions; optionally keeps only the newest few."""

    def __init__(self, keep: int | None = None):
        self._items: list[np.ndarray] = []
        self._offset = 0
        self.keep = keep

    def append(self, d: np.ndarray):
        self._items.append(d)
        if self.keep is not None and len(self._items) > 2 * self.keep:
            drop = len(self._items) - self.keep
            del self._items[:drop]
            self._offset += drop

    def __len__(self) -> int:
        return self._offset + len(self._items)

    def __getitem__(self, i: int) -> np.ndarray:
        if i < 0:
            i += len(self)
        if i < self._offset:
            raise IndexError(f"round {i + 1} is no longer retained")
        return self._items[i - self._offset]


@dataclass
class AlgorithmConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "AlgorithmConfig":
        d = dict(d)
        kind = d.pop("kind")
        seed = int(d.pop("seed", 0))
        return cls(kind, d, seed)

    @classmethod
    def parse(cls, text: str) -> "AlgorithmConfig":
        """Accept JSON ('{"kind": "hedge", "eta": 0.1}') or 'kind=hedge,eta=auto,seed=42'."""
        text = text.strip()
        if text.startswith("{"):
            return cls.from_dict(json.loads(text))
        d = {}
        for part in filter(None, text.split(",")):
            key, _, val = part.partition("=")
            key, val = key.strip(), val.strip()
            if not _:
                d["kind"] = key
                continue
            try:
                d[key] = json.loads(val)
            except json.JSONDecodeError:
                d[key] = val
        return cls.from_dict(d)


class PricingAlgorithm:
    kind = "base"

    def __init__(self, model: MarketModel, T: int, seed: int = 0):
        self.model = model
        self.k = model.k
        self.T = int(T)
        self.seed = int(seed)
        self._A = payoff_matrices(model).A
        self.reset()

    # subclasses override _reset, _observe and _play
    def reset(self):
        self._round = 0
        self._seen = 0
        self._last = None
        self.phase = "run"
        self._reset()

    def _reset(self):
        pass

    def _observe(self, opp: np.ndarray, s: int):
        pass

    def _play(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    @property
    def config(self) -> AlgorithmConfig:
        return AlgorithmConfig(self.kind, self.params(), self.seed)

    def _emit(self, t: int) -> np.ndarray:
        d = self._play(t)
        self._round = t
        self._last = d
        return d

    def next(self, history: Sequence, t: int, T: int | None = None) -> np.ndarray:
        n = len(history)
        if t != n + 1:
            raise ValueError(f"round {t} needs a history of {t - 1} rounds, got {n}")
        if n != self._round or n < self._seen:
            self.reset()
            for s in range(1, n + 1):
                self._emit(s)
                self._observe(np.asarray(history[s - 1], dtype=float), s)
            self._seen = n
        else:
            for s in range(self._seen, n):
                self._observe(np.asarray(history[s], dtype=float), s + 1)
            self._seen = n
        return self._emit(t).copy()


class Hedge(PricingAlgorithm):
    """Exponential weights on cumulative expected payoffs."""

    kind = "hedge"

    def __init__(self, model: MarketModel, T: int, eta: float | None = None, seed: int = 0):
        k = model.k
        self.eta = math.sqrt(math.log(k) / T) if eta in (None, "auto") else float(eta)
        if self.eta <= 0:
            raise ConfigError("learning rate must be positive")
        super().__init__(model, T, seed)

    def _reset(self):
        self.cum = np.zeros(self.k)

    def _observe(self, opp, s):
        self.cum += self._A @ opp

    def _play(self, t):
        z = self.eta * (self.cum - self.cum.max())
        w = np.exp(z)
        return w / w.sum()

    def params(self):
        return {"eta": self.eta}

    def regret_bound(self) -> float:
        """ln k / eta + eta T / 8, at most 2 sqrt(T ln k) for the default rate."""
        return math.log(self.k) / self.eta + self.eta * self.T / 8


class FTPL(PricingAlgorithm):
    """Follow the perturbed leader with one exponential perturbation per price, drawn up front."""

    kind = "ftpl"

    def __init__(self, model: MarketModel, T: int, scale: float | None = None, seed: int = 0):
        self.scale = math.sqrt(T) if scale in (None, "auto") else float(scale)
        if self.scale <= 0:
            raise ConfigError("perturbation scale must be positive")
        super().__init__(model, T, seed)

    def _reset(self):
        rng = np.random.default_rng(self.seed)
        self.perturbation = rng.exponential(self.scale, self.k)
        self.cum = np.zeros(self.k)

    def _observe(self, opp, s):
        self.cum += self._A @ opp

    def _play(self, t):
        return point_mass(self.k, int(np.argmax(self.cum + self.perturbation)))

    def params(self):
        return {"scale": self.scale}


@lru_cache(maxsize=16)
def _eye(k: int) -> np.ndarray:
    e = np.eye(k)
    e.setflags(write=False)
    return e


def stationary_distribution(Q: np.ndarray, damping: float = 1e-9, tol: float = 1e-12) -> np.ndarray:
    """x with x Q = x for a row-stochastic Q.

    Solved directly with the normalization replacing one balance equation. A
    chain with zero entries may be reducible, so it is first mixed with the
    uniform chain at weight `damping`. Power iteration is the fallback.
    """
    k = Q.shape[0]
    if damping and Q.min() <= 0:
        Q = (1 - damping) * Q + damping / k
    M = Q.T - _eye(k)
    M[-1] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    _, _, x, info = dgesv(M, b)
    if info == 0:
        x = np.maximum(x, 0.0)
        x /= x.sum()
        if np.abs(x @ Q - x).max() <= tol:
            return x
    x = np.full(k, 1.0 / k)
    for _ in range(100_000):
        y = x @ Q
        if np.abs(y - x).max() <= tol:
            return y / y.sum()
        x = y
    return x / x.sum()


class BlumMansour(PricingAlgorithm):
    """No-swap-regret learner: one Hedge instance per price, played through a stationary distribution.

    Instance a sees the payoff vector scaled by the weight the learner put on a.
    With rate eta the swap regret is at most k ln k / eta + eta T / 8; the default
    rate sqrt(8 k ln k / T) minimises this to sqrt(T k ln k / 2).
    """

    kind = "bm"

    def __init__(self, model: MarketModel, T: int, eta: float | None = None, seed: int = 0,
                 damping: float = 1e-9):
        k = model.k
        self.eta = math.sqrt(8 * k * math.log(k) / T) if eta in (None, "auto") else float(eta)
        if self.eta <= 0:
            raise ConfigError("learning rate must be positive")
        self.damping = damping
        super().__init__(model, T, seed)

    def _reset(self):
        self.C = np.zeros((self.k, self.k))

    def _observe(self, opp, s):
        self.C += self._last[:, None] * (self._A @ opp)

    def _play(self, t):
        Z = self.eta * (self.C - self.C.max(axis=1, keepdims=True))
        Q = np.exp(Z)
        Q /= Q.sum(axis=1, keepdims=True)
        return stationary_distribution(Q, self.damping)

    def params(self):
        return {"eta": self.eta}

    def regret_bound(self) -> float:
        return self.k * math.log(self.k) / self.eta + self.eta * self.T / 8


class Static(PricingAlgorithm):
    """Plays the same distribution every round and ignores the opponent."""

    kind = "static"

    def __init__(self, model: MarketModel, T: int, dist=None, seed: int = 0, label: str | None = None):
        if dist is None:
            raise ConfigError("static algorithm needs a distribution")
        self.dist = as_distribution(dist, model.k, tol=1e-9)
        self.dist = self.dist / self.dist.sum()
        self.label = label
        super().__init__(model, T, seed)

    def _play(self, t):
        return self.dist

    def params(self):
        p = {"dist": [float(x) for x in self.dist]}
        if self.label:
            p["label"] = self.label
        return p


class Uniform(Static):
    kind = "uniform"

    def __init__(self, model: MarketModel, T: int, seed: int = 0):
        super().__init__(model, T, np.full(model.k, 1.0 / model.k), seed)

    def params(self):
        return {}


def threat_cutoff(k: int, T: int) -> int:
    """floor(T - T / (2 (k - 1) / k) - 1), computed in exact arithmetic."""
    return math.floor(Fraction(T) - Fraction(T * k, 2 * (k - 1)) - 1)


class ThreatLeader(PricingAlgorithm):
    """Asks the follower to price at 1 while it prices at 1 - 1/k; any deviation is punished forever.

    Rounds 1..cutoff: plays 1 - 1/k and checks the follower played exactly the
    point mass at 1. After the cutoff it plays 1 (leaving 1 - 1/k to the
    follower). A deviation seen in the first phase switches to 1/k for good.
    """

    kind = "threat"

    def __init__(self, model: MarketModel, T: int, seed: int = 0, allow_small: bool = False):
        if model.rule != "bertrand":
            raise ConfigError("the threat construction is for the Bertrand rule")
        if not allow_small and (model.k < 20 or T < 4):
            raise ConfigError("threat construction needs k >= 20 and T >= 4")
        self.cutoff = threat_cutoff(model.k, T)
        if self.cutoff < 1:
            raise ConfigError(f"T={T} gives no cooperative phase (cutoff {self.cutoff})")
        self._demand = point_mass(model.k, model.k - 1)
        super().__init__(model, T, seed)

    def _reset(self):
        self.punishing = False
        self.deviation_round = None
        self.phase = "cooperate"

    def _observe(self, opp, s):
        if not self.punishing and s <= self.cutoff and not np.array_equal(opp, self._demand):
            self.punishing = True
            self.deviation_round = s

    def _play(self, t):
        k = self.k
        if self.punishing:
            self.phase = "punish"
            return point_mass(k, 0)
        if t <= self.cutoff:
            self.phase = "cooperate"
            return point_mass(k, k - 2)
        self.phase = "release"
        return point_mass(k, k - 1)

    def params(self):
        return {"cutoff": self.cutoff}


class Scripted(PricingAlgorithm):
    """Plays a fixed schedule of distributions over round ranges, ignoring the opponent."""

    kind = "scripted"

    def __init__(self, model: MarketModel, T: int, schedule=None, seed: int = 0):
        if not schedule:
            raise ConfigError("scripted follower needs a schedule")
        self.schedule = self._parse(model, T, schedule)
        super().__init__(model, T, seed)

    @staticmethod
    def _parse(model, T, schedule):
        out = []
        for item in schedule:
            if isinstance(item, dict):
                lo, hi = int(item["from"]), int(item["to"])
                if "price" in item:
                    d = point_mass(model.k, model.grid.index(item["price"]))
                else:
                    d = as_distribution(item["dist"], model.k, tol=1e-9)
            else:
                (lo, hi), d = item
                d = as_distribution(d, model.k, tol=1e-9)
            out.append((lo, hi, np.asarray(d, dtype=float)))
        out.sort(key=lambda r: r[0])
        expect = 1
        for lo, hi, _ in out:
            if lo != expect or hi < lo:
                raise ConfigError(f"schedule ranges must partition 1..{T}; problem at round {expect}")
            expect = hi + 1
        if expect != T + 1:
            raise ConfigError(f"schedule ranges must partition 1..{T}; covered up to {expect - 1}")
        return out

    def _reset(self):
        self.phase = "segment-0"

    def _play(self, t):
        for n, (lo, hi, d) in enumerate(self.schedule):
            if lo <= t <= hi:
                self.phase = f"segment-{n}"
                return d
        raise ValueError(f"round {t} outside the schedule")

    def params(self):
        return {"schedule": [{"from": lo, "to": hi, "dist": [float(x) for x in d]}
                             for lo, hi, d in self.schedule]}


class Undercutter(PricingAlgorithm):
    """Adversary: one grid step below the opponent's most likely price last round (monopoly price first)."""

    kind = "undercutter"

    def _reset(self):
        self.target = self.k - 1

    def _observe(self, opp, s):
        self.target = max(int(np.argmax(opp)) - 1, 0)

    def _play(self, t):
        return point_mass(self.k, self.target)


def hedge(model, T, eta=None, seed=0) -> Hedge:
    return Hedge(model, T, eta, seed)


def ftpl(model, T, scale=None, seed=0) -> FTPL:
    return FTPL(model, T, scale, seed)


def blum_mansour_nsr(model, T, eta=None, seed=0) -> BlumMansour:
    return BlumMansour(model, T, eta, seed)


def static_algorithm(model, T, dist, label=None) -> Static:
    return Static(model, T, dist, label=label)


def uniform_algorithm(model, T) -> Uniform:
    return Uniform(model, T)


def threat_leader(model, T) -> ThreatLeader:
    return ThreatLeader(model, T)


def scripted_follower(model, T, schedule) -> Scripted:
    return Scripted(model, T, schedule)


def threat_compliant_schedule(k: int, T: int, deviate_at: int | None = None):
    """Schedule for a follower facing the threat leader.

    Compliant: price 1 through the cutoff, then 1 - 1/k. Deviating at round
    `deviate_at`: price 1 before, undercut the leader with 1 - 2/k at that
    round, then price 1/k against the punishment.
    """
    cut = threat_cutoff(k, T)
    top, below = k - 1, k - 2
    if deviate_at is None:
        return [{"from": 1, "to": cut, "dist": point_mass(k, top).tolist()},
                {"from": cut + 1, "to": T, "dist": point_mass(k, below).tolist()}]
    if not 1 <= deviate_at <= cut:
        raise ConfigError(f"deviation round must lie in 1..{cut}")
    sched = []
    if deviate_at > 1:
        sched.append({"from": 1, "to": deviate_at - 1, "dist": point_mass(k, top).tolist()})
    sched.append({"from": deviate_at, "to": deviate_at, "dist": point_mass(k, k - 3).tolist()})
    if deviate_at < T:
        sched.append({"from": deviate_at + 1, "to": T, "dist": point_mass(k, 0).tolist()})
    return sched


_KINDS = {
    "hedge": Hedge, "ftpl": FTPL, "bm": BlumMansour, "blum_mansour": BlumMansour,
    "static": Static, "uniform": Uniform, "threat": ThreatLeader,
    "scripted": Scripted, "undercutter": Undercutter,
}


def make_algorithm(config: AlgorithmConfig | dict | str, model: MarketModel, T: int) -> PricingAlgorithm:
    if isinstance(config, str):
        config = AlgorithmConfig.parse(config)
    elif isinstance(config, dict):
        config = AlgorithmConfig.from_dict(config)
    cls = _KINDS.get(config.kind)
    if cls is None:
        raise ConfigError(f"unknown algorithm kind {config.kind!r}")
    p = dict(config.params)
    if cls is not Static:
        p.pop("label", None)
    p.pop("cutoff", None)
    if cls is Static and "price" in p:
        p["dist"] = point_mass(model.k, model.grid.index(p.pop("price")))
    if cls in (Hedge, BlumMansour) and "rate_scale" in p:
        c = float(p.pop("rate_scale"))
        base = math.log(model.k) / T if cls is Hedge else model.k * math.log(model.k) / T
        p["eta"] = c * math.sqrt(base)
    return cls(model, T, seed=config.seed, **p)


# ---------------------------------------------------------------- mean-based audit

def hedge_gamma(eta: float) -> Callable[[int], float]:
    """Smallest gamma(t) for which Hedge with rate eta is provably gamma(t)-mean-based.

    An action trailing by gamma in average payoff over t - 1 rounds has weight
    at most exp(-eta (t - 1) gamma); the fixed point gamma = exp(-a gamma) with
    a = eta (t - 1) is W(a) / a.
    """
    def gamma(t: int) -> float:
        a = eta * (t - 1)
        if a <= 0:
            return 1.0
        return float(lambertw(a).real / a)
    return gamma


def mean_based_audit(transcript, player: int, gamma=None) -> list[tuple[int, int, float]]:
    """Rounds where the player put more than gamma(t) on a price trailing by at least gamma(t).

    Averages are over the rounds before t. Returns (round, price index, weight).
    Needs a transcript with every round stored.
    """
    if transcript.T == 0:
        return []
    own, opp = transcript.full_distributions(player)
    T, k = own.shape
    if gamma is None:
        g = np.full(T, 1 / math.sqrt(T))
    elif callable(gamma):
        g = np.array([gamma(t) for t in range(1, T + 1)])
    else:
        g = np.full(T, float(gamma))
    A = payoff_matrices(transcript.model).A
    pay = opp @ A.T
    cum = np.vstack([np.zeros(k), np.cumsum(pay, axis=0)[:-1]])
    rounds = np.arange(T)
    avg = cum / np.maximum(rounds, 1)[:, None]
    trail = avg.max(axis=1, keepdims=True) - avg
    mask = (trail >= g[:, None]) & (own > g[:, None]) & (rounds[:, None] > 0)
    ts, js = np.nonzero(mask)
    return [(int(t) + 1, int(j), float(own[t, j])) for t, j in zip(ts, js)]
