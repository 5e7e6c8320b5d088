"""Commit to the Stackelberg price distribution and let a no-regret learner respond.

Computes the k=100 commitment, its follower tie band and the perturbation that
breaks the tie, then plays the commitment against Hedge and checks the
learner still earns at least c^2/8 (minus its regret) when the optimizer earns c.
"""

import math

import numpy as np

from pricinglab import equilibrium as eq
from pricinglab import learners as L
from pricinglab import simulator as S
from pricinglab.stage_game import MarketModel

k, T = 100, 50_000
m = MarketModel.bertrand(k)
sol = eq.stackelberg_stage(m)
ref = (k - 1) / (math.e * k)
print(f"leader value {sol.leader_value:.4f}, follower value {sol.follower_value:.4f}, (k-1)/(ek) = {ref:.4f}")
print(f"buyer price at the commitment: {sol.buyer_price:.4f}")

band = eq.follower_tie_band(m, sol)
print(f"follower is indifferent over {band[0] + 1}/{k}..{band[-1] + 1}/{k} ({len(band)} prices)")
pert = eq.tie_break_perturbation(m, sol)
print(f"after moving 1e-9 of leader mass up one step, the unique best response is "
      f"{pert.best_responses[0] + 1}/{k}")

top = np.argsort(sol.leader_dist)[::-1][:5]
print("heaviest leader prices:", ", ".join(f"{i + 1}/{k}: {sol.leader_dist[i]:.3f}" for i in sorted(top)))

tr = S.run(L.hedge(m, T), L.static_algorithm(m, T, sol.leader_dist), m, T)
U1, U2 = S.cumulative_payoffs(tr)
c, mine = U2 / T, U1 / T
R = max(S.external_regret(tr, 1), 0.0)
print(f"Hedge vs commitment over {T} rounds: optimizer {c:.4f}, learner {mine:.4f}, "
      f"c^2/8 - R/T = {c * c / 8 - R / T:.4f}, buyer price {S.average_buyer_price(tr):.4f}")
