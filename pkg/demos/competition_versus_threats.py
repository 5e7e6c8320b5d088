"""Two learners drive prices down; a threatening leader holds them up.

Hedge against Hedge on a k=10 Bertrand grid collapses to the lowest prices.
The threat leader instead keeps a compliant follower at the monopoly price
by promising to price at 1/k forever after any deviation.
"""

from pricinglab import learners as L
from pricinglab import simulator as S
from pricinglab.stage_game import MarketModel

k, T = 10, 200_000
m = MarketModel.bertrand(k)
tr = S.run(L.hedge(m, T), L.hedge(m, T), m, T, store="strided")
print(f"Hedge vs Hedge, k={k}, T={T}: tail buyer price {S.tail_buyer_price(tr):.4f} (3/k = {3 / k})")
for i in (2, 3, 4):
    p = S.convergence_profile(tr, i)
    print(f"  tail mass on prices >= {i}/{k}: {p.tail1:.4f} / {p.tail2:.4f}")

k, T = 20, 9994  # 19 divides T, so the cooperative phase ends exactly at the formula's cutoff
m = MarketModel.bertrand(k)
cut = L.threat_cutoff(k, T)
tr = S.run(L.threat_leader(m, T), L.scripted_follower(m, T, L.threat_compliant_schedule(k, T)), m, T)
Ul, Uf = S.cumulative_payoffs(tr)
print(f"threat leader, compliant follower (cutoff {cut}): leader {Ul:.2f} >= 17T/80 = {17 * T / 80:.2f}, "
      f"follower {Uf:.2f} = T/2 + 1 - 1/k = {T / 2 + 1 - 1 / k:.2f}")
for t in (1, cut // 2, cut):
    tr = S.run(L.threat_leader(m, T), L.scripted_follower(m, T, L.threat_compliant_schedule(k, T, t)), m, T)
    print(f"  deviating at round {t}: follower {S.cumulative_payoffs(tr)[1]:.3f} "
          f"(cap 1 - 2/k + T/(2k) = {1 - 2 / k + T / (2 * k):.3f})")
