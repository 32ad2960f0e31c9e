"""Monte Carlo estimation harness, lower-bound adversary, and reports.

Replays are vectorized across runs; replica streams derive from the base seed
by the documented 64-bit mix, so reports are reproducible bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import exact_engine as engine
from . import odrs as odrs_mod
from .errors import DomainError, SizeError
from .instances import Arrival, MatchingInstance, gen_lb_prefix, validate
from .rng import generator

LB_RATIO = 2.0 * math.sqrt(2.0) - 2.0
MAX_TABLE_ACTIVE = 14


@dataclass
class EdgeStat:
    offline: int
    arrival: int
    x: float
    prob: float
    se: float  # zero marks an exact entry
    ratio: float


@dataclass
class RoundReport:
    algorithm: str
    seed: int
    n_runs: int
    exact: bool
    edges: list[EdgeStat]
    min_ratio: float
    params: dict = field(default_factory=dict)
    wall_time: float = 0.0  # not serialized; reports must be byte-reproducible

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "n_runs": self.n_runs,
            "exact": self.exact,
            "params": self.params,
            "min_ratio": self.min_ratio,
            "edges": [{"offline": e.offline, "arrival": e.arrival, "x": e.x,
                       "prob": e.prob, "se": e.se, "ratio": e.ratio}
                      for e in self.edges],
        }


def _selection_table(elements, rows_for, n_active):
    """Cumulative winner probabilities per realized bid mask.

    Returns (2^k, k) array: row m holds the cumulative conditional win
    probabilities of the active positions given bid mask m.
    """
    k = n_active
    if k > MAX_TABLE_ACTIVE:
        raise SizeError(f"{k} active nodes exceed the batch table cap {MAX_TABLE_ACTIVE}")
    table = np.zeros((1 << k, k))
    for mask in range(1, 1 << k):
        row = rows_for(mask)
        if row is None:
            continue
        acc = np.zeros(k)
        for pos, q in row:
            acc[pos] = q
        table[mask] = np.cumsum(acc)
    return table


def _batch_bin_candidates(gb, g, n_runs):
    """Per-run chosen node of one bin, -1 when the bin stays silent."""
    u = g.random(n_runs)
    bounds = np.cumsum(gb.sizes)
    idx = np.searchsorted(bounds, u, side="right")
    chosen = np.full(n_runs, -1, dtype=np.int64)
    inside = idx < len(gb.nodes)
    nodes = np.asarray(gb.nodes, dtype=np.int64)
    chosen[inside] = nodes[idx[inside]]
    return chosen


def _batch_odrs(comp: odrs_mod.CompiledOdrs, n_runs: int, seed: int):
    """Vectorized replays of the improved ODRS; yields matched-edge counts and
    per-run matched flags."""
    g = generator(seed, 13)
    n = comp.inst.n_offline
    ahead = np.zeros((n_runs, n), dtype=bool)
    offline_matched = np.zeros((n_runs, n), dtype=bool)
    arrival_matched = np.zeros((n_runs, len(comp.plans)), dtype=bool)
    edge_counts: dict[tuple[int, int], int] = {}
    for plan, selector in zip(comp.plans, comp.selectors):
        if selector is None:
            continue
        active = list(selector.elements)
        apos = {i: k for k, i in enumerate(active)}
        bid_mask = np.zeros(n_runs, dtype=np.int64)
        for gb in plan.bins:
            chosen = _batch_bin_candidates(gb, g, n_runs)
            for node in gb.nodes:
                hit = (chosen == node) & ~ahead[:, node]
                ahead[hit, node] = True
                bid_mask[hit] |= 1 << apos[node]
        for cn in plan.crossing:
            heads = g.random(n_runs) < cn.takeover
            lag = ~ahead[:, cn.node]
            bid_mask[lag | heads] |= 1 << apos[cn.node]
            ahead[:, cn.node] &= heads
        table = _selection_table(active, lambda m: selector.rows.get(m), len(active))
        cum = table[bid_mask]
        u = g.random(n_runs)
        winners = (u[:, None] < cum).argmax(axis=1)
        won = u < cum[:, -1]
        for k, node in enumerate(active):
            rows = won & (winners == k)
            cnt = int(rows.sum())
            if cnt:
                edge_counts[(node, plan.t)] = edge_counts.get((node, plan.t), 0) + cnt
                offline_matched[rows, node] = True
                arrival_matched[rows, plan.t] = True
    return edge_counts, offline_matched, arrival_matched


def _batch_warmup(comp: odrs_mod.CompiledWarmup, n_runs: int, seed: int):
    g = generator(seed, 13)
    n = comp.inst.n_offline
    counts = np.zeros((n_runs, n), dtype=np.int64)
    offline_matched = np.zeros((n_runs, n), dtype=bool)
    arrival_matched = np.zeros((n_runs, len(comp.steps)), dtype=bool)
    edge_counts: dict[tuple[int, int], int] = {}
    for t, rows in enumerate(comp.steps):
        sel = comp.selectors[t]
        if sel is None:
            continue
        k = len(rows)
        bid_mask = np.zeros(n_runs, dtype=np.int64)
        for pos, (i, fl, lo, hi) in enumerate(rows):
            p = np.where(counts[:, i] == fl, lo, hi)
            bid = g.random(n_runs) < p
            counts[bid, i] += 1
            bid_mask[bid] |= 1 << pos

        def rows_for(mask, sel=sel, k=k):
            probs = sel.conditional_win_probs({p for p in range(k) if mask >> p & 1})
            return [(p, float(probs[p])) for p in range(k)]

        table = _selection_table(list(range(k)), rows_for, k)
        cum = table[bid_mask]
        u = g.random(n_runs)
        winners = (u[:, None] < cum).argmax(axis=1)
        won = u < cum[:, -1]
        for pos, (i, _, _, _) in enumerate(rows):
            sel_rows = won & (winners == pos)
            cnt = int(sel_rows.sum())
            if cnt:
                edge_counts[(i, t)] = edge_counts.get((i, t), 0) + cnt
                offline_matched[sel_rows, i] = True
                arrival_matched[sel_rows, t] = True
    return edge_counts, offline_matched, arrival_matched


def _batch_run(algorithm, inst: MatchingInstance, params, n_runs: int, seed: int):
    """Vectorized replays; `algorithm` is a name or a callable
    (inst, n_runs, seed) -> (edge counts, offline matched, arrival matched)."""
    if callable(algorithm):
        return algorithm(inst, n_runs, seed)
    if algorithm == "warmup":
        return _batch_warmup(odrs_mod.CompiledWarmup(inst), n_runs, seed)
    if algorithm in ("odrs", "odrs_b"):
        return _batch_odrs(odrs_mod.CompiledOdrs(inst, params), n_runs, seed)
    raise DomainError(f"unknown algorithm {algorithm!r}")


def monte_carlo_edge_probs(algorithm: str, inst: MatchingInstance, n_runs: int,
                           seed: int, params=None, exact: bool = False) -> RoundReport:
    """Per-edge match probabilities: exact (engine) or frequencies over
    n_runs vectorized replays with normal-approximation standard errors."""
    if not exact and n_runs < 1000:
        raise DomainError("need at least 10^3 runs")
    t0 = time.time()
    xs = {(i, t): x for i, t, x in inst.edge_list() if x > 0}
    stats = []
    if exact:
        probs = engine.edge_match_probs(inst, params, algorithm)
        for (i, t), x in sorted(xs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            p = probs.get((i, t), 0.0)
            stats.append(EdgeStat(i, t, x, p, 0.0, p / x))
    else:
        counts, _, _ = _batch_run(algorithm, inst, params, n_runs, seed)
        for (i, t), x in sorted(xs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            p = counts.get((i, t), 0) / n_runs
            se = math.sqrt(max(p * (1.0 - p), 1e-12) / n_runs)
            stats.append(EdgeStat(i, t, x, p, se, p / x))
    min_ratio = min(e.ratio for e in stats) if stats else 1.0
    pd = {} if params is None else {"eps": params.eps, "delta": params.delta,
                                    "variant": params.variant}
    return RoundReport(algorithm, seed, 0 if exact else n_runs, exact, stats,
                       min_ratio, pd, wall_time=time.time() - t0)


# ----------------------------------------------------------------------------
# lower bounds
# ----------------------------------------------------------------------------

def lb_root_check() -> float:
    """|1 - p - p^2/4| at p = 2 sqrt 2 - 2 (the adversary's target ratio)."""
    p = LB_RATIO
    return abs(1.0 - p - p * p / 4.0)


def lb_adversary(algorithm, n: int, n_probe: int, n_eval: int, seed: int,
                 params=None) -> dict:
    """Two-phase adversary against an ODRS (by name, or a batch callable).

    Probe: estimate, on the disjoint-pair prefix, each online node's matched
    probability and pick the pair (t, t') with the largest covariance, then
    the offline pair (i, j) in their neighborhoods with the largest
    joint-matched probability. Evaluate: append a final arrival on {i, j}
    with fractions 1/2 and report its edge ratios over fresh replays.
    """
    if n < 3:
        raise DomainError("adversary needs n >= 3")
    prefix = gen_lb_prefix(n)
    _, offline_m, arrival_m = _batch_run(algorithm, prefix, params, n_probe, seed)
    online_rate = arrival_m.mean(axis=0)
    am = arrival_m.astype(np.float64)
    joint = am.T @ am / n_probe
    cov = joint - np.outer(online_rate, online_rate)
    np.fill_diagonal(cov, -np.inf)
    t1, t2 = sorted(divmod(int(np.argmax(cov)), n))
    best_pair, best_joint = None, -1.0
    om = offline_m.astype(np.float64)
    for i in (2 * t1, 2 * t1 + 1):
        for j in (2 * t2, 2 * t2 + 1):
            jp = float((om[:, i] * om[:, j]).mean())
            if jp > best_joint:
                best_joint, best_pair = jp, (i, j)
    i, j = best_pair
    final = Arrival(((i, 0.5), (j, 0.5)))
    full = MatchingInstance(prefix.n_offline, prefix.capacities,
                            prefix.arrivals + (final,))
    rep = validate(full)
    rep.raise_if_invalid()
    counts, _, arr_m = _batch_run(algorithm, full, params, n_eval, seed + 1)
    t_final = full.n_arrivals - 1
    edges = []
    for node in (i, j):
        p = counts.get((node, t_final), 0) / n_eval
        se = math.sqrt(max(p * (1.0 - p), 1e-12) / n_eval)
        edges.append({"offline": node, "prob": p, "se": se,
                      "ratio": p / 0.5, "ratio_se": se / 0.5})
    matched_prob = float(arr_m[:, t_final].mean())
    bound = LB_RATIO + LB_RATIO / (2.0 * (n - 1.0))
    return {
        "n": n, "probe_runs": n_probe, "eval_runs": n_eval,
        "chosen_pair": [i, j], "probe_online_min": float(online_rate.min()),
        "probe_pair_cov": float(cov[t1, t2]), "final_edges": edges,
        "final_matched_prob": matched_prob,
        "min_final_ratio": min(e["ratio"] for e in edges),
        "ratio_bound": bound,
    }


def three_node_impossibility(algorithm: str, params=None, n_runs: int | None = None,
                             seed: int = 0) -> dict:
    """3 offline / 4 online family: each offline node is half-matched, then
    the last arrival neighbors some pair with fractions 1/2.

    Reports the minimum over pair choices of Pr[last arrival matched]; a
    rounding ratio of one would force it to 1 on every choice.
    """
    choices = []
    for (i, j) in ((0, 1), (0, 2), (1, 2)):
        arrivals = tuple(Arrival(((k, 0.5),)) for k in range(3))
        arrivals += (Arrival(((i, 0.5), (j, 0.5))),)
        inst = MatchingInstance(3, (1, 1, 1), arrivals)
        validate(inst).raise_if_invalid()
        probs = engine.edge_match_probs(inst, params, algorithm)
        exact_p = probs.get((i, 3), 0.0) + probs.get((j, 3), 0.0)
        entry = {"pair": [i, j], "exact_matched_prob": exact_p}
        if n_runs:
            _, _, arr = _batch_run(algorithm, inst, params, n_runs, seed)
            entry["mc_matched_prob"] = float(arr[:, 3].mean())
            entry["mc_se"] = math.sqrt(max(exact_p * (1 - exact_p), 1e-12) / n_runs)
        choices.append(entry)
    return {"choices": choices,
            "min_matched_prob": min(c["exact_matched_prob"] for c in choices)}
