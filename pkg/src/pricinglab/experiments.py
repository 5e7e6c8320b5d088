"""Experiments behind the command-line subcommands.

Each function returns an Experiment: a JSON-ready report (configuration,
results and claim checks), plus tables and transcripts for the caller to
write. A claim check records the bound, the measured value, the slack and
where the slack comes from, and a PASS/FAIL verdict. Finite-horizon slack
is always the measured regret of the algorithm in that run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import equilibrium as eq
from . import simulator as sim
from .learners import (
    AlgorithmConfig,
    BlumMansour,
    Scripted,
    Static,
    ThreatLeader,
    Uniform,
    make_algorithm,
    threat_compliant_schedule,
    threat_cutoff,
)
from .stage_game import MarketModel, best_response_set, uniform

OPTIMIZER_CAP = 4 * (math.sqrt(1.5) - 1)
NO_REGRET_KINDS = {"hedge", "ftpl", "bm", "blum_mansour"}
MEAN_BASED_KINDS = {"hedge", "ftpl"}
NSR_KINDS = {"bm", "blum_mansour"}


@dataclass
class Experiment:
    report: dict
    tables: dict = field(default_factory=dict)        # name -> (header, rows)
    transcripts: dict = field(default_factory=dict)   # name -> Transcript
    documents: dict = field(default_factory=dict)     # name -> JSON-ready object

    @property
    def passed(self) -> bool:
        return all(c["verdict"] == "PASS" for c in self.report["checks"])


def claim(name: str, measured: float, bound: float, relation: str, slack: float = 0.0,
          slack_source: str = "none") -> dict:
    """relation '>=': measured >= bound - slack; '<=': measured <= bound + slack; '==': |diff| <= slack."""
    measured, bound, slack = float(measured), float(bound), float(slack)
    if relation == ">=":
        ok = measured >= bound - slack
    elif relation == "<=":
        ok = measured <= bound + slack
    elif relation == "==":
        ok = abs(measured - bound) <= slack
    else:
        raise ValueError(relation)
    return {"claim": name, "relation": relation, "bound": bound, "measured": measured,
            "slack": slack, "slack_source": slack_source, "verdict": "PASS" if ok else "FAIL"}


def flag(name: str, ok: bool, detail) -> dict:
    """A yes/no check with a descriptive measured value."""
    return {"claim": name, "relation": "holds", "bound": None, "measured": detail,
            "slack": 0.0, "slack_source": "none", "verdict": "PASS" if ok else "FAIL"}


def print_checks(report: dict, stream=None):
    import sys
    stream = stream or sys.stdout
    for c in report["checks"]:
        m = c["measured"]
        ms = f"{m:.6g}" if isinstance(m, float) else str(m)
        b = c["bound"]
        bs = "" if b is None else f" {c['relation']} {b:.6g}"
        sl = f" (slack {c['slack']:.3g}: {c['slack_source']})" if c["slack"] else ""
        print(f"[{c['verdict']}] {c['claim']}: measured {ms}{bs}{sl}", file=stream)


def _report(name: str, config: dict, results: dict, checks: list) -> dict:
    return {"subcommand": name, "config": config, "results": results, "checks": checks,
            "passed": all(c["verdict"] == "PASS" for c in checks)}


def make_model(model: str = "bertrand", k: int = 20, tau: float | None = None) -> MarketModel:
    if model == "logit":
        if tau is None:
            tau = 2.0 * k
        return MarketModel.logit(k, tau)
    return MarketModel.bertrand(k)


def run_summary(tr: sim.Transcript) -> dict:
    U1, U2 = sim.cumulative_payoffs(tr)
    return {"T": tr.T, "U1": U1, "U2": U2, "avg1": U1 / tr.T, "avg2": U2 / tr.T,
            "average_buyer_price": sim.average_buyer_price(tr),
            "tail_buyer_price": sim.tail_buyer_price(tr),
            "external_regret": [sim.external_regret(tr, 1), sim.external_regret(tr, 2)],
            "swap_regret": [sim.swap_regret(tr, 1), sim.swap_regret(tr, 2)],
            "configs": tr.configs}


def learner_checks(tr: sim.Transcript, learner: int, tag: str = "") -> list:
    """Looting, optimizer-cap and accounting checks for a no-regret learner in seat `learner`."""
    opt = 2 if learner == 1 else 1
    U = sim.cumulative_payoffs(tr)
    T = tr.T
    c = U[opt - 1] / T
    mine = U[learner - 1] / T
    R = max(sim.external_regret(tr, learner), 0.0)
    src = f"learner external regret / T ({R:.4g} / {T})"
    sfx = f" [{tag}]" if tag else ""
    return [
        claim(f"learner average >= c^2/8 with c = optimizer average{sfx}", mine, c * c / 8, ">=", R / T, src),
        claim(f"optimizer average <= 4(sqrt(3/2) - 1){sfx}", c, OPTIMIZER_CAP, "<=", R / T, src),
        claim(f"average buyer price equals (U1 + U2)/T{sfx}", sim.average_buyer_price(tr),
              (U[0] + U[1]) / T, "==", 1e-12, "floating-point tolerance"),
    ]


def _save_policy(save: str, T: int) -> bool:
    return save == "yes" or (save == "auto" and T <= 100_000)


# ---------------------------------------------------------------- stage-game experiments

def stackelberg_sweep(k_min: int = 20, k_max: int = 200, step: int = 10, model: str = "bertrand",
                      tau: float | None = None, ks: list | None = None, exact: bool = False,
                      workers: int | None = None, rel_tol: float = 0.02) -> Experiment:
    if ks is None:
        if not 2 <= k_min <= k_max:
            raise ValueError("need 2 <= k_min <= k_max")
        ks = list(range(k_min, k_max + 1, step))
        if ks[-1] != k_max:
            ks.append(k_max)
    rows, checks, failures = [], [], []
    for k in ks:
        m = make_model(model, k, tau)
        try:
            s = eq.stackelberg_stage(m, exact=exact and k <= 50, workers=workers)
        except Exception as e:  # keep sweeping; report the failure for this k
            failures.append({"k": k, "error": repr(e)})
            continue
        ref = (k - 1) / (math.e * k)
        row = [k, s.leader_value, s.follower_value, s.buyer_price, ref,
               s.leader_value / ref - 1, s.follower_value / ref - 1, s.follower_price,
               int(s.certified)]
        rows.append(row)
        if model == "bertrand" and k >= 20:
            checks.append(claim(f"k={k}: leader value within {rel_tol:.0%} of (k-1)/(ek)",
                                s.leader_value, ref, "==", rel_tol * ref, "relative tolerance"))
            checks.append(claim(f"k={k}: follower value within {rel_tol:.0%} of (k-1)/(ek)",
                                s.follower_value, ref, "==", rel_tol * ref, "relative tolerance"))
            checks.append(claim(f"k={k}: buyer price >= 2/3", s.buyer_price, 2 / 3, ">="))
        if model == "bertrand" and k <= 5:
            v, _ = eq.stackelberg_grid_search(m)
            checks.append(claim(f"k={k}: LP leader value matches grid search", s.leader_value, v,
                                "==", 1e-2, "grid resolution 1e-3"))
        checks.append(flag(f"k={k}: LP optimum certified", s.certified, s.certified))
    header = ["k", "leader_value", "follower_value", "buyer_price", "k_minus_1_over_ek",
              "leader_rel_dev", "follower_rel_dev", "follower_price", "certified"]
    leader = [r[1] for r in rows]
    monotone = all(b >= a - 1e-12 for a, b in zip(leader, leader[1:]))
    results = {"rows": [dict(zip(header, r)) for r in rows], "failures": failures,
               "leader_value_nondecreasing_in_k": monotone}
    for f in failures:
        checks.append(flag(f"k={f['k']}: LP solved", False, f["error"]))
    cfg = {"ks": ks, "model": model, "tau": tau, "exact": exact, "rel_tol": rel_tol}
    return Experiment(_report("stackelberg-sweep", cfg, results, checks), {"sweep": (header, rows)})


def stackelberg_strategy(k: int = 100, model: str = "bertrand", tau: float | None = None,
                         tol: float = eq.TIE_TOL, eps: float = eq.DEFAULT_TIE_EPS,
                         exact: bool = False, workers: int | None = None) -> Experiment:
    m = make_model(model, k, tau)
    s = eq.stackelberg_stage(m, exact=exact, workers=workers)
    band = eq.follower_tie_band(m, s, tol)
    fpay = eq.follower_payoffs(m, s.leader_dist)
    checks = [claim("leader distribution sums to 1", float(s.leader_dist.sum()), 1.0, "==", 1e-9,
                    "tolerance")]
    results = {"leader_value": s.leader_value, "follower_value": s.follower_value,
               "buyer_price": s.buyer_price, "follower_action": s.follower_price,
               "tie_band": [(int(i) + 1) / k for i in band],
               "tie_band_numerators": [int(i) + 1 for i in band],
               "certified": s.certified}
    try:
        p = eq.tie_break_perturbation(m, s, eps)
        results["perturbed"] = {
            "eps": eps, "best_responses": [(int(i) + 1) / k for i in p.best_responses],
            "follower_action": p.solution.follower_price, "leader_value": p.solution.leader_value,
            "follower_value": p.solution.follower_value, "buyer_price": p.solution.buyer_price}
        checks.append(flag("perturbed follower best response is unique", len(p.best_responses) == 1,
                           [int(i) + 1 for i in p.best_responses]))
        checks.append(claim("perturbation leaves the buyer price unchanged", p.solution.buyer_price,
                            s.buyer_price, "==", 1e-12, "floating-point tolerance"))
    except eq.PreconditionError as e:
        p = None
        results["perturbed"] = {"error": str(e)}
        checks.append(flag("tie-break perturbation applicable", False, str(e)))
    if model == "bertrand" and k == 100:
        want = list(range(36, 99))
        got = [int(i) + 1 for i in band]
        checks.append(flag("k=100: follower tie band is exactly 36/100..98/100", got == want,
                           f"{got[0]}/100..{got[-1]}/100 ({len(got)} prices)"))
        if p is not None:
            checks.append(flag("k=100: perturbed unique best response is 98/100",
                               [int(i) + 1 for i in p.best_responses] == [98],
                               [f"{int(i) + 1}/100" for i in p.best_responses]))
    header = ["price", "leader_probability", "follower_payoff", "in_tie_band"]
    inband = set(int(i) for i in band)
    rows = [[(i + 1) / k, float(s.leader_dist[i]), float(fpay[i]), int(i in inband)] for i in range(k)]
    cfg = {"k": k, "model": model, "tau": tau, "tol": tol, "eps": eps, "exact": exact}
    sol = {**m.describe(), "leader_value": s.leader_value, "follower_value": s.follower_value,
           "follower_action": s.follower_price, "leader_dist": s.leader_dist.tolist()}
    return Experiment(_report("stackelberg-strategy", cfg, results, checks), {"leader_dist": (header, rows)},
                      documents={"solution": sol})


# ---------------------------------------------------------------- repeated-game experiments

def _learner_config(spec, default_seed: int) -> AlgorithmConfig:
    if isinstance(spec, AlgorithmConfig):
        return spec
    if isinstance(spec, dict):
        c = AlgorithmConfig.from_dict(spec)
    else:
        c = AlgorithmConfig.parse(spec)
    if "seed" not in (spec if isinstance(spec, dict) else {}) and "seed=" not in str(spec):
        c.seed = default_seed
    return c


def uniform_bound(model: str = "bertrand", k: int = 20, T: int = 100_000, tau: float | None = None,
                  learner="hedge", seed: int = 1, save: str = "auto") -> Experiment:
    m = make_model(model, k, tau)
    lc = _learner_config(learner, seed)
    alg = make_algorithm(lc, m, T)
    tr = sim.run(alg, Uniform(m, T), m, T)
    U1, U2 = sim.cumulative_payoffs(tr)
    R = max(sim.external_regret(tr, 1), 0.0)
    bound, br_floor = (6 / 625, 1 / 5) if model == "bertrand" else (1 / 128, 1 / 8)
    br = best_response_set(m, uniform(k), 0.0)
    checks = [
        claim("optimizer (uniform) average payoff >= lower bound", U2 / T, bound, ">=", R / T,
              f"learner external regret / T ({R:.4g} / {T})"),
        claim("every learner best response to uniform is at least the price floor",
              float(br.prices.min()), br_floor, ">="),
    ] + learner_checks(tr, 1)
    results = run_summary(tr)
    results.update(best_response_to_uniform=br.prices.tolist(), best_response_value=br.value,
                   lower_bound=bound, constants_assume_k_at_least_20=k >= 20)
    cfg = {"model": model, "k": k, "tau": m.tau, "T": T, "learner": lc.to_dict()}
    tx = {"transcript": tr} if _save_policy(save, T) else {}
    return Experiment(_report("uniform-bound", cfg, results, checks), transcripts=tx)


def _optimizer(spec, m: MarketModel, T: int, seed: int):
    if spec in (None, "stackelberg"):
        s = eq.stackelberg_stage(m)
        return Static(m, T, s.leader_dist, label="stackelberg"), {"kind": "static", "label": "stackelberg"}
    if spec == "uniform":
        return Uniform(m, T), {"kind": "uniform"}
    c = _learner_config(spec, seed)
    return make_algorithm(c, m, T), c.to_dict()


def equal_looting(model: str = "bertrand", k: int = 100, T: int = 100_000, tau: float | None = None,
                  learner="hedge", optimizer="stackelberg", seed: int = 1, save: str = "auto") -> Experiment:
    m = make_model(model, k, tau)
    lc = _learner_config(learner, seed)
    alg = make_algorithm(lc, m, T)
    opt, ocfg = _optimizer(optimizer, m, T, seed + 1)
    tr = sim.run(alg, opt, m, T)
    U1, U2 = sim.cumulative_payoffs(tr)
    c = U2 / T
    results = run_summary(tr)
    results.update(c=c, learner_average=U1 / T, looting_bound=c * c / 8)
    checks = learner_checks(tr, 1)
    cfg = {"model": model, "k": k, "tau": m.tau, "T": T, "learner": lc.to_dict(), "optimizer": ocfg}
    tx = {"transcript": tr} if _save_policy(save, T) else {}
    return Experiment(_report("equal-looting", cfg, results, checks), transcripts=tx)


def convergence(alg_a="hedge", alg_b="hedge", k: int = 10, T: int = 1_000_000, model: str = "bertrand",
                tau: float | None = None, thresholds=(2, 3, 4), seed: int = 1, points: int = 1000,
                save: str = "auto") -> Experiment:
    m = make_model(model, k, tau)
    ca = _learner_config(alg_a, seed)
    cb = _learner_config(alg_b, seed + 1)
    a = make_algorithm(ca, m, T)
    b = make_algorithm(cb, m, T)
    stride = max(1, T // points)
    tr = sim.run(a, b, m, T, store="full" if _save_policy(save, T) and T * k <= 2_000_000 else "strided",
                 stride=stride)
    kinds = {ca.kind, cb.kind}
    if kinds <= MEAN_BASED_KINDS:
        pairing = "mean-based"
    elif kinds <= NSR_KINDS:
        pairing = "no-swap-regret"
    else:
        pairing = "exploratory"
    thresholds = sorted(set(int(i) for i in thresholds))
    profiles = {i: sim.convergence_profile(tr, i) for i in thresholds}
    checks = []
    if pairing == "mean-based":
        checks.append(claim("tail-window average buyer price <= 3/k", sim.tail_buyer_price(tr), 3 / k, "<="))
        for p in (1, 2):
            checks.append(claim(f"player {p}: tail mass on prices above 3/k <= 0.05",
                                sim.tail_mass_above(tr, p, 4 / k) if k >= 4 else 0.0, 0.05, "<="))
    elif pairing == "no-swap-regret":
        for p in (1, 2):
            checks.append(claim(f"player {p}: tail mass on prices above 2/k <= 0.05",
                                sim.tail_mass_above(tr, p, 3 / k) if k >= 3 else 0.0, 0.05, "<="))
    if ca.kind in NO_REGRET_KINDS:
        checks += learner_checks(tr, 1, "player 1 as learner")
    if cb.kind in NO_REGRET_KINDS:
        checks += learner_checks(tr, 2, "player 2 as learner")[:2]
    results = run_summary(tr)
    results.update(pairing=pairing,
                   tail_mass_at_or_above={f"{i}/{k}": [profiles[i].tail1, profiles[i].tail2] for i in thresholds})
    header = ["round"] + [f"p{p}_mass_ge_{i}" for i in thresholds for p in (1, 2)] + ["buyer_price"]
    sel = (tr.rounds % stride == 0) | (tr.rounds == 1) | (tr.rounds == T)
    rows = []
    for n in np.flatnonzero(sel):
        r = int(tr.rounds[n])
        row = [r]
        for i in thresholds:
            row += [float(profiles[i].player1[n]), float(profiles[i].player2[n])]
        row.append(float(tr.buyer[r - 1]))
        rows.append(row)
    cfg = {"model": model, "k": k, "tau": m.tau, "T": T, "alg_a": ca.to_dict(), "alg_b": cb.to_dict(),
           "thresholds": thresholds, "points": points}
    tx = {"transcript": tr} if _save_policy(save, T) else {}
    return Experiment(_report("convergence", cfg, results, checks), {"series": (header, rows)}, tx)


def threat(k: int = 20, T: int = 10_000, compliant: bool = True, deviate_at=None,
           save: str = "auto") -> Experiment:
    """Threat leader against a compliant follower or followers deviating at the given rounds."""
    m = MarketModel.bertrand(k)
    cut = threat_cutoff(k, T)
    checks, results, tx = [], {"cutoff": cut}, {}
    if compliant:
        tr = sim.run(ThreatLeader(m, T), Scripted(m, T, threat_compliant_schedule(k, T)), m, T)
        Ul, Uf = sim.cumulative_payoffs(tr)
        results["compliant"] = {"leader_total": Ul, "follower_total": Uf,
                                "average_buyer_price": sim.average_buyer_price(tr),
                                "closed_form_follower_total": T / 2 + 1 - 1 / k}
        checks += [
            claim("compliant: leader total >= (17/80) T", Ul, 17 * T / 80, ">="),
            claim("compliant: follower total = T/2 + 1 - 1/k", Uf, T / 2 + 1 - 1 / k, "==", 1e-9,
                  "tolerance"),
            claim("compliant: average buyer price >= 17/80 + follower average",
                  sim.average_buyer_price(tr), 17 / 80 + Uf / T, ">="),
        ]
        if _save_policy(save, T):
            tx["compliant"] = tr
    if deviate_at:
        dev = []
        for ts in deviate_at:
            tr = sim.run(ThreatLeader(m, T), Scripted(m, T, threat_compliant_schedule(k, T, ts)), m, T)
            Ul, Uf = sim.cumulative_payoffs(tr)
            cap = 1 - 2 / k + T / (2 * k)
            dev.append({"deviate_at": ts, "leader_total": Ul, "follower_total": Uf, "cap": cap})
            checks.append(claim(f"deviation at round {ts}: follower total <= 1 - 2/k + T/(2k)", Uf, cap, "<="))
        results["deviations"] = dev
    cfg = {"k": k, "T": T, "compliant": compliant, "deviate_at": list(deviate_at or [])}
    return Experiment(_report("threat", cfg, results, checks), transcripts=tx)


def nash_in_algorithm_space(k: int = 20, Ts=(10_000, 100_000, 1_000_000), rate_scale: float = 16.0,
                            margin_scale: float = 0.3, margin_exponent: float = 0.25,
                            save: str = "auto") -> Experiment:
    """No-swap-regret learner against a static optimizer committing near the Stackelberg strategy.

    The optimizer plays the best commitment that makes the Stackelberg follower
    price a best response by margin margin_scale * T^-margin_exponent (the
    exact commitment leaves the learner indifferent across a band of prices).
    The learner is Blum-Mansour with rate rate_scale * sqrt(k ln k / T), whose
    swap regret is at most (1/rate_scale + rate_scale/8) sqrt(T k ln k).
    """
    m = MarketModel.bertrand(k)
    st = eq.stackelberg_stage(m)
    j = st.follower_action
    rows, checks, tx = [], [], {}
    for T in Ts:
        delta = margin_scale * T ** (-margin_exponent) if margin_scale > 0 else 0.0
        D = eq.margin_stackelberg(m, j, delta) if delta > 0 else st
        if D is None:
            D = st
            delta = 0.0
        eta = rate_scale * math.sqrt(k * math.log(k) / T)
        learner = BlumMansour(m, T, eta=eta)
        tr = sim.run(learner, Static(m, T, D.leader_dist, label="stackelberg-margin"), m, T)
        lg, og = sim.algorithm_space_gaps(tr, st)
        sw = sim.swap_regret(tr, 1)
        U1, U2 = sim.cumulative_payoffs(tr)
        bound = 3 * math.sqrt(T * k * math.log(k))
        br_tail = float(tr.stats[0].tail_mass[j] / (T - tr.tail_start + 1))
        rows.append({"T": T, "margin": delta, "eta": eta, "learner_gap": lg, "optimizer_gap": og,
                     "learner_gap_per_round": lg / T, "optimizer_gap_per_round": og / T,
                     "learner_average": U1 / T, "optimizer_average": U2 / T,
                     "average_buyer_price": sim.average_buyer_price(tr),
                     "commitment_stage_buyer_price": D.buyer_price, "swap_regret": sw,
                     "swap_regret_bound": bound, "tail_mass_on_follower_price": br_tail})
        checks.append(claim(f"T={T}: average buyer price >= 2/3", sim.average_buyer_price(tr), 2 / 3, ">="))
        checks.append(claim(f"T={T}: learner gap <= learner swap regret", lg, sw, "<=", 1e-9, "tolerance"))
        checks.append(claim(f"T={T}: swap regret <= 3 sqrt(T k ln k)", sw, bound, "<="))
        checks += learner_checks(tr, 1, f"T={T}")
        if _save_policy(save, T):
            tx[f"T{T}"] = tr
    for key in ("learner_gap_per_round", "optimizer_gap_per_round"):
        seq = [r[key] for r in rows]
        dec = all(b < a for a, b in zip(seq, seq[1:]))
        checks.append(flag(f"{key.replace('_', ' ')} strictly decreasing in T", dec,
                           [round(x, 6) for x in seq]))
    results = {"stackelberg_leader_value": st.leader_value, "follower_price": st.follower_price,
               "stackelberg_buyer_price": st.buyer_price, "runs": rows}
    cfg = {"k": k, "Ts": list(Ts), "rate_scale": rate_scale, "margin_scale": margin_scale,
           "margin_exponent": margin_exponent}
    header = list(rows[0].keys()) if rows else []
    return Experiment(_report("nash", cfg, results, checks),
                      {"gaps": (header, [list(r.values()) for r in rows])}, tx)


def audit_transcript(tr: sim.Transcript, gamma=None) -> Experiment:
    rep = sim.audit(tr, gamma)
    checks = [flag("transcript invariants hold", rep.ok, rep.invariant_failures or "none")]
    T, k = tr.T, tr.k
    for p, cfg in enumerate(tr.configs[:2], start=1):
        kind = cfg.get("kind")
        if kind == "hedge":
            eta = float(cfg["eta"])
            default = math.sqrt(math.log(k) / T)
            bound = 2 * math.sqrt(T * math.log(k)) if abs(eta - default) < 1e-15 else \
                math.log(k) / eta + eta * T / 8
            checks.append(claim(f"player {p} (hedge): external regret <= bound", rep.external_regret[p - 1],
                                bound, "<="))
        elif kind in NSR_KINDS:
            checks.append(claim(f"player {p} (no-swap-regret): swap regret <= 3 sqrt(T k ln k)",
                                rep.swap_regret[p - 1], 3 * math.sqrt(T * k * math.log(k)), "<="))
        checks.append(claim(f"player {p}: swap regret >= external regret", rep.swap_regret[p - 1],
                            rep.external_regret[p - 1], ">=", 1e-9, "tolerance"))
    cfg = {"T": T, "k": k, "gamma": gamma if not callable(gamma) else "function"}
    return Experiment(_report("audit", cfg, rep.to_dict(), checks))
