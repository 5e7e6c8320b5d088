"""Stage game of the pricing duopoly.

Two sellers pick prices from the grid {1/k, 2/k, ..., 1} and split a unit of
demand according to an allocation rule. Seller i earns p_i times its share.
Prices are carried as 0-based integer indices internally (index i is price
(i + 1) / k), so Bertrand comparisons never touch floating point.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np

MAX_MATRIX_K = 10_000
SUM_TOL = 1e-12


class DomainError(ValueError):
    """Raised for prices off the grid or malformed distributions."""


@dataclass(frozen=True)
class PriceGrid:
    k: int

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k!r}")

    @property
    def prices(self) -> np.ndarray:
        return np.arange(1, self.k + 1) / self.k

    def price(self, index: int) -> float:
        return (index + 1) / self.k

    def exact_price(self, index: int) -> Fraction:
        return Fraction(index + 1, self.k)

    def index(self, price) -> int:
        """Grid index of a price given as float, Fraction or int numerator/k."""
        if isinstance(price, Fraction):
            scaled = price * self.k
            if scaled.denominator != 1:
                raise DomainError(f"price {price} is not on the 1/{self.k} grid")
            i = int(scaled) - 1
        else:
            scaled = float(price) * self.k
            i = int(round(scaled)) - 1
            if abs(scaled - (i + 1)) > 1e-9 * max(1.0, scaled):
                raise DomainError(f"price {price} is not on the 1/{self.k} grid")
        if not 0 <= i < self.k:
            raise DomainError(f"price {price} outside (0, 1]")
        return i

    def check_constants(self, what: str = "this result") -> bool:
        """Warn when a constant that assumes k >= 20 is used below that."""
        if self.k < 20:
            warnings.warn(f"{what} assumes k >= 20; k={self.k} is unverified", stacklevel=3)
            return False
        return True


@dataclass(frozen=True)
class MarketModel:
    k: int
    rule: str = "bertrand"
    tau: float | None = None

    def __post_init__(self):
        PriceGrid(self.k)
        if self.rule == "bertrand":
            if self.tau is not None:
                raise DomainError("Bertrand model takes no temperature")
        elif self.rule == "logit":
            if self.tau is None or not math.isfinite(self.tau) or self.tau < 0:
                raise DomainError(f"logit temperature must be finite and >= 0, got {self.tau!r}")
            object.__setattr__(self, "tau", float(self.tau))
        else:
            raise DomainError(f"unknown allocation rule {self.rule!r}")

    @classmethod
    def bertrand(cls, k: int) -> "MarketModel":
        return cls(k, "bertrand")

    @classmethod
    def logit(cls, k: int, tau: float) -> "MarketModel":
        return cls(k, "logit", tau)

    @property
    def grid(self) -> PriceGrid:
        return PriceGrid(self.k)

    @property
    def prices(self) -> np.ndarray:
        return self.grid.prices

    def describe(self) -> dict:
        out = {"model": self.rule, "k": self.k}
        if self.rule == "logit":
            out["tau"] = self.tau
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MarketModel":
        return cls(int(d["k"]), d.get("model", d.get("rule", "bertrand")), d.get("tau"))


class Payoffs(NamedTuple):
    u1: float
    u2: float


@dataclass(frozen=True)
class PayoffMatrices:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if self.A.shape != self.B.shape or self.A.shape[0] != self.A.shape[1]:
            raise DomainError("payoff matrices must be square and equal-shaped")


class BestResponse(NamedTuple):
    indices: np.ndarray
    prices: np.ndarray
    value: float


def _logit_share(tau: float, p1, p2):
    # subtract tau*max(p1,p2) so the exponents are <= 0
    m = np.maximum(p1, p2)
    e1 = np.exp(tau * (p1 - m))
    e2 = np.exp(tau * (p2 - m))
    # share1 = e^{tau p2} / (e^{tau p1} + e^{tau p2}): the lower price sells more
    return e2 / (e1 + e2)


def allocate(model: MarketModel, p1, p2) -> tuple[float, float]:
    i, j = model.grid.index(p1), model.grid.index(p2)
    return _allocate_idx(model, i, j)


def _allocate_idx(model: MarketModel, i: int, j: int) -> tuple[float, float]:
    if model.rule == "bertrand":
        if i < j:
            return 1.0, 0.0
        if i == j:
            return 0.5, 0.5
        return 0.0, 1.0
    # read both shares from one table so payoffs match the matrices and swap exactly
    S = _shares(model)
    return float(S[i, j]), float(S[j, i])


def stage_payoff(model: MarketModel, p1, p2) -> Payoffs:
    i, j = model.grid.index(p1), model.grid.index(p2)
    s1, s2 = _allocate_idx(model, i, j)
    p = model.prices
    return Payoffs(float(p[i] * s1), float(p[j] * s2))


def share_matrix(model: MarketModel) -> np.ndarray:
    """S[i, j] = seller 1's demand share when seller 1 plays index i and seller 2 plays j."""
    idx = np.arange(model.k)
    if model.rule == "bertrand":
        return np.where(idx[:, None] < idx[None, :], 1.0,
                        np.where(idx[:, None] == idx[None, :], 0.5, 0.0))
    p = model.prices
    S = _logit_share(model.tau, p[:, None], p[None, :])
    np.fill_diagonal(S, 0.5)
    return S


@lru_cache(maxsize=64)
def _shares(model: MarketModel) -> np.ndarray:
    S = share_matrix(model)
    S.setflags(write=False)
    return S


@lru_cache(maxsize=64)
def _matrices(model: MarketModel) -> PayoffMatrices:
    S = _shares(model)
    A = model.prices[:, None] * S
    # seller 2 at index j facing seller 1 at i earns p_j * (1 - S[i, j]) = A[j, i]
    B = A.T.copy()
    A.setflags(write=False)
    B.setflags(write=False)
    return PayoffMatrices(A, B)


def payoff_matrices(model: MarketModel) -> PayoffMatrices:
    if model.k > MAX_MATRIX_K:
        raise MemoryError(f"k={model.k} exceeds the dense-matrix guard of {MAX_MATRIX_K}")
    return _matrices(model)


def as_distribution(weights, k: int | None = None, tol: float = SUM_TOL) -> np.ndarray:
    """Validate a price distribution and return it as a float array."""
    d = np.asarray(weights, dtype=float)
    if d.ndim != 1:
        raise DomainError("a price distribution is a 1-d vector")
    if k is not None and d.shape[0] != k:
        raise DomainError(f"distribution has {d.shape[0]} entries, grid has {k}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise DomainError("distribution has negative or non-finite weights")
    if abs(d.sum() - 1.0) > tol:
        raise DomainError(f"distribution sums to {d.sum()!r}, not 1")
    return d


def point_mass(k: int, index: int) -> np.ndarray:
    d = np.zeros(k)
    d[index] = 1.0
    return d


def uniform(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


def own_payoff_vector(model: MarketModel, opponent: np.ndarray) -> np.ndarray:
    """Payoff of each own price against an opponent distribution.

    The game is symmetric (B = A^T), so the vector is A @ d for either seat.
    """
    return payoff_matrices(model).A @ opponent


def expected_payoff(model: MarketModel, d1, d2) -> Payoffs:
    d1 = as_distribution(d1, model.k)
    d2 = as_distribution(d2, model.k)
    M = payoff_matrices(model)
    return Payoffs(float(d1 @ M.A @ d2), float(d1 @ M.B @ d2))


def buyer_price(model: MarketModel, d1, d2) -> float:
    u = expected_payoff(model, d1, d2)
    return u.u1 + u.u2


def buyer_price_direct(model: MarketModel, d1, d2) -> float:
    """E[p1 C1 + p2 C2] summed over price pairs, without the payoff matrices."""
    d1 = as_distribution(d1, model.k)
    d2 = as_distribution(d2, model.k)
    p = model.prices
    S = share_matrix(model)
    paid = p[:, None] * S + p[None, :] * (1.0 - S)
    return float(np.einsum("i,ij,j->", d1, paid, d2))


def best_response_set(model: MarketModel, opponent, tolerance: float = 0.0) -> BestResponse:
    """All own prices within `tolerance` of the best payoff against `opponent`."""
    if tolerance < 0:
        raise DomainError("tolerance must be nonnegative")
    v = own_payoff_vector(model, as_distribution(opponent, model.k))
    best = float(v.max())
    idx = np.flatnonzero(v >= best - tolerance)
    return BestResponse(idx, (idx + 1) / model.k, best)


def matrices_to_csv(model: MarketModel, which: str = "A") -> str:
    """CSV of a payoff matrix: header of seller-2 prices, one row per seller-1 price."""
    M = getattr(payoff_matrices(model), which)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    p = model.prices
    w.writerow(["p1\\p2"] + [f"{x:.12g}" for x in p])
    for i, row in enumerate(M):
        w.writerow([f"{p[i]:.12g}"] + [f"{x:.12g}" for x in row])
    return buf.getvalue()


def exact_payoff_matrix(model: MarketModel) -> list[list[Fraction]]:
    """Bertrand payoff matrix in exact rationals (for the exact LP mode)."""
    if model.rule != "bertrand":
        raise DomainError("exact matrices exist only for the Bertrand rule")
    k = model.k
    half = Fraction(1, 2)
    return [[Fraction(i + 1, k) * (1 if i < j else half if i == j else 0) for j in range(k)]
            for i in range(k)]
