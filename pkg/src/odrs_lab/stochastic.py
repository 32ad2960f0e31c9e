"""Stochastic-arrival pipeline: the online-optimum LP, its simplex solver,
the bucketed rounding algorithm, and evaluation against the LP value.

Arrivals happen with probability p_t; the LP's conditional constraint
x_{i,t} <= p_t (1 - sum_{t'<t} x_{i,t'}) upper-bounds any online algorithm,
and the rounding recovers at least the guaranteed fraction of the LP value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import odrs as odrs_mod
from .errors import DomainError, InvariantBreach, SizeError
from .instances import MatchingInstance
from .rng import ScalarRng, generator

MAX_EXACT_N = 20


# ----------------------------------------------------------------------------
# LP
# ----------------------------------------------------------------------------

@dataclass
class StochasticLP:
    edges: list[tuple[int, int]]  # (offline i, arrival t) per variable
    weights: np.ndarray
    A: np.ndarray  # rows: offline degree, per-t flow, per-edge conditional
    b: np.ndarray
    row_labels: list[str]


@dataclass
class LPSolution:
    x: dict[tuple[int, int], float]
    value: float


def build_lp(inst: MatchingInstance) -> StochasticLP:
    """Emit the four constraint families of the online-optimum LP."""
    edges = []
    weights = []
    for t, arr in enumerate(inst.arrivals):
        if not (0.0 < arr.p <= 1.0):
            raise DomainError(f"arrival {t} needs p in (0, 1]")
        for k, (i, _) in enumerate(arr.edges):
            edges.append((i, t))
            weights.append(arr.weight_of(k))
    n_var = len(edges)
    col = {e: j for j, e in enumerate(edges)}
    rows = []
    bs = []
    labels = []
    for i in range(inst.n_offline):
        row = np.zeros(n_var)
        for (ii, t), j in col.items():
            if ii == i:
                row[j] = 1.0
        rows.append(row)
        bs.append(float(inst.capacities[i]))
        labels.append(f"degree[{i}]")
    for t, arr in enumerate(inst.arrivals):
        row = np.zeros(n_var)
        for (i, tt), j in col.items():
            if tt == t:
                row[j] = 1.0
        rows.append(row)
        bs.append(arr.p)
        labels.append(f"flow[{t}]")
    for (i, t), j in col.items():
        # x_{i,t} + p_t * sum_{t'<t} x_{i,t'} <= p_t
        p_t = inst.arrivals[t].p
        row = np.zeros(n_var)
        row[j] = 1.0
        for (ii, tt), jj in col.items():
            if ii == i and tt < t:
                row[jj] += p_t
        rows.append(row)
        bs.append(p_t)
        labels.append(f"cond[{i},{t}]")
    return StochasticLP(edges, np.array(weights), np.array(rows), np.array(bs), labels)


def simplex_max(c: np.ndarray, A: np.ndarray, b: np.ndarray,
                tol: float = 1e-10, max_iter: int = 200_000) -> np.ndarray:
    """maximize c.x s.t. Ax <= b, x >= 0, with b >= 0.

    Dense tableau primal simplex with Bland's rule (anti-cycling);
    deterministic. The slack basis is feasible since b >= 0.
    """
    m, n = A.shape
    if np.any(b < -tol):
        raise DomainError("simplex_max expects b >= 0")
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))
    for _ in range(max_iter):
        reduced = T[m, :n + m]
        enter = -1
        for j in range(n + m):  # Bland: lowest eligible index
            if reduced[j] < -tol:
                enter = j
                break
        if enter < 0:
            break
        ratios = []
        for r in range(m):
            if T[r, enter] > tol:
                ratios.append((T[r, -1] / T[r, enter], basis[r], r))
        if not ratios:
            raise InvariantBreach("unbounded LP; box constraints should prevent this")
        _, _, leave = min(ratios, key=lambda z: (z[0], z[1]))
        piv = T[leave, enter]
        T[leave] /= piv
        for r in range(m + 1):
            if r != leave and T[r, enter] != 0.0:
                T[r] -= T[r, enter] * T[leave]
        basis[leave] = enter
    else:
        raise InvariantBreach("simplex iteration limit hit")
    x = np.zeros(n + m)
    for r, var in enumerate(basis):
        x[var] = T[r, -1]
    return x[:n]


def solve_lp(lp: StochasticLP) -> LPSolution:
    if len(lp.edges) > 2000:
        raise SizeError("LP solver is desk-scale (<= 2000 variables)")
    x = simplex_max(lp.weights, lp.A, lp.b)
    resid = lp.A @ x - lp.b
    if np.any(resid > 1e-7):
        raise InvariantBreach(f"LP solution infeasible by {resid.max()}")
    value = float(lp.weights @ x)
    return LPSolution({e: float(v) for e, v in zip(lp.edges, x)}, value)


# ----------------------------------------------------------------------------
# rounding
# ----------------------------------------------------------------------------

@dataclass
class StochasticPlan:
    t: int
    p: float
    # bins of (node, conditional bid prob xhat/(p(1-shat))); high nodes sit
    # in singleton bins
    bins: list[odrs_mod.GroupBin]
    xhat: dict[int, float]
    weights: dict[int, float]


def build_stochastic_plans(inst: MatchingInstance, xstar: dict[tuple[int, int], float],
                           params: odrs_mod.ScalingParams) -> list[StochasticPlan]:
    if params.variant != "matching":
        raise DomainError("stochastic rounding uses matching-variant parameters")
    n = inst.n_offline
    s = np.zeros(n)
    shat = np.zeros(n)
    plans = []
    theta = params.theta
    for t, arr in enumerate(inst.arrivals):
        p_t = arr.p
        low_items, highs = [], []
        xhat_row: dict[int, float] = {}
        wrow: dict[int, float] = {}
        for k, (i, _) in enumerate(arr.edges):
            x = xstar.get((i, t), 0.0)
            if x <= 0:
                continue
            xh = odrs_mod.scale_hat(x, float(s[i]), params)
            size = xh / (p_t * (1.0 - shat[i]))
            if size > 1.0 + 1e-9:
                raise InvariantBreach(
                    f"bid probability {size} > 1 at ({i},{t}); x* violates the LP constraint")
            xhat_row[i] = xh
            wrow[i] = arr.weight_of(k)
            if s[i] <= theta + 1e-12:
                low_items.append((i, min(1.0, size)))
            else:
                highs.append((i, min(1.0, size)))
        bins = [odrs_mod.GroupBin([i for i, _ in packed], [sz for _, sz in packed])
                for packed in odrs_mod.first_fit(low_items)]
        bins.extend(odrs_mod.GroupBin([i], [sz]) for i, sz in highs)
        for i, xh in xhat_row.items():
            s[i] += xstar[(i, t)]
            shat[i] += xh
        plans.append(StochasticPlan(t, p_t, bins, xhat_row, wrow))
    return plans


def stochastic_round(inst: MatchingInstance, xstar: dict[tuple[int, int], float],
                     params: odrs_mod.ScalingParams, seed: int = 0,
                     rng: ScalarRng | None = None) -> odrs_mod.Matching:
    """One run of the stochastic matching algorithm.

    Nodes stay free until matched; an arriving online node greedily takes its
    maximum-weight bidder (ties to the lowest id).
    """
    plans = build_stochastic_plans(inst, xstar, params)
    rng = rng if rng is not None else ScalarRng(seed)
    matched = [False] * inst.n_offline
    out = odrs_mod.Matching()
    for plan in plans:
        bidders = []
        for gb in plan.bins:
            u = rng.uniform()
            acc = 0.0
            for node, sz in zip(gb.nodes, gb.sizes):
                acc += sz
                if u < acc:
                    if not matched[node]:
                        bidders.append(node)
                    break
        arrived = rng.uniform() < plan.p
        if bidders and arrived:
            best = max(bidders, key=lambda i: (plan.weights[i], -i))
            matched[best] = True
            out.add(best, plan.t)
    out.assert_valid(inst)
    return out


# ----------------------------------------------------------------------------
# exact engine (matched-mask dynamic program)
# ----------------------------------------------------------------------------

class StochasticExact:
    """Exact joint law of the matched set, evolved arrival by arrival."""

    def __init__(self, inst: MatchingInstance, xstar, params):
        if inst.n_offline > MAX_EXACT_N:
            raise SizeError(f"exact stochastic engine limited to n <= {MAX_EXACT_N}")
        self.inst = inst
        self.plans = build_stochastic_plans(inst, xstar, params)
        self.shat_before: list[dict[int, float]] = []
        acc: dict[int, float] = {}
        for plan in self.plans:
            self.shat_before.append(dict(acc))
            for i, xh in plan.xhat.items():
                acc[i] = acc.get(i, 0.0) + xh
        self.shat_final = acc

    @staticmethod
    def _candidate_outcomes(plan: StochasticPlan):
        outcomes = [({}, 1.0)]
        for gb in plan.bins:
            nxt = []
            rest = 1.0 - sum(gb.sizes)
            for cand, pr in outcomes:
                if rest > 0:
                    nxt.append((cand, pr * rest))
                for node, sz in zip(gb.nodes, gb.sizes):
                    if sz > 0:
                        nxt.append(({**cand, node: True}, pr * sz))
            outcomes = nxt
        return outcomes

    def evolve(self):
        """Yields (t, matched-mask law before t, plan); law maps mask -> prob."""
        state = {0: 1.0}
        for plan in self.plans:
            yield plan.t, state, plan
            outcomes = self._candidate_outcomes(plan)
            new_state: dict[int, float] = {}

            def put(mask, pr):
                if pr > 1e-18:
                    new_state[mask] = new_state.get(mask, 0.0) + pr

            for mask, pr in state.items():
                for cand, cpr in outcomes:
                    bidders = [i for i in cand if not mask >> i & 1]
                    p = pr * cpr
                    if p <= 0:
                        continue
                    if bidders:
                        best = max(bidders, key=lambda i: (plan.weights[i], -i))
                        put(mask | (1 << best), p * plan.p)
                        put(mask, p * (1.0 - plan.p))
                    else:
                        put(mask, p)
            state = new_state
        yield len(self.plans), state, None

    def final_law(self) -> dict[int, float]:
        for t, state, plan in self.evolve():
            if plan is None:
                return state
        raise InvariantBreach("evolve() ended unexpectedly")

    def matched_weight_tail(self, t: int, z: float, state: dict[int, float],
                            plan: StochasticPlan) -> float:
        """Exact Pr[t is matched at weight >= z]."""
        total = 0.0
        heavy = {i for i, w in plan.weights.items() if w >= z}
        for mask, pr in state.items():
            live_bins = []
            for gb in plan.bins:
                hit = sum(sz for node, sz in zip(gb.nodes, gb.sizes)
                          if node in heavy and not mask >> node & 1)
                live_bins.append(hit)
            miss = math.prod(1.0 - h for h in live_bins)
            total += pr * (1.0 - miss)
        return plan.p * total


def exact_threshold_check(inst: MatchingInstance, xstar, params,
                          guarantee: float = 0.652, tol: float = 1e-9) -> float:
    """Worst margin of Pr[w(M(t)) >= z] - guarantee * sum_{w_{i,t} >= z} x_{i,t}
    over all arrivals and weight thresholds; nonnegative (within tol) when the
    per-arrival guarantee holds."""
    ex = StochasticExact(inst, xstar, params)
    worst = math.inf
    for t, state, plan in ex.evolve():
        if plan is None:
            break
        for z in sorted(set(plan.weights.values())):
            lhs = ex.matched_weight_tail(t, z, state, plan)
            rhs = guarantee * sum(xstar.get((i, t), 0.0)
                                  for i, w in plan.weights.items() if w >= z)
            worst = min(worst, lhs - rhs)
    if worst < -tol:
        raise InvariantBreach(f"per-threshold guarantee violated by {-worst}")
    return 0.0 if math.isinf(worst) else worst


def eval_vs_lp(inst: MatchingInstance, params: odrs_mod.ScalingParams,
               runs: int, seed: int) -> dict:
    """Monte Carlo mean matched weight vs the LP optimum.

    Vectorized over runs; the report carries a normal-approximation CI for the
    ratio. On small instances (n <= 12) the exact per-threshold guarantee is
    checked as well. Zero-value LPs report ratio 1 by convention.
    """
    if runs < 10_000:
        raise DomainError("eval_vs_lp needs at least 10^4 runs")
    lp = build_lp(inst)
    sol = solve_lp(lp)
    plans = build_stochastic_plans(inst, sol.x, params)
    g = generator(seed, 7)
    n = inst.n_offline
    matched = np.zeros((runs, n), dtype=bool)
    weight = np.zeros(runs)
    for plan in plans:
        bid = np.zeros((runs, n), dtype=bool)
        for gb in plan.bins:
            u = g.random(runs)
            acc = 0.0
            chosen = np.full(runs, -1, dtype=np.int64)
            for node, sz in zip(gb.nodes, gb.sizes):
                hit = (u >= acc) & (u < acc + sz) & (chosen < 0)
                chosen[hit] = node
                acc += sz
            for node in gb.nodes:
                rows = chosen == node
                if rows.any():
                    bid[rows, node] = ~matched[rows, node]
        arrived = g.random(runs) < plan.p
        order = sorted(plan.weights, key=lambda i: (-plan.weights[i], i))
        taken = np.zeros(runs, dtype=bool)
        for node in order:
            take = arrived & ~taken & bid[:, node]
            if take.any():
                matched[take, node] = True
                weight[take] += plan.weights[node]
                taken |= take
    mean = float(weight.mean())
    se = float(weight.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0
    if sol.value <= 0:
        ratio, ci = 1.0, 0.0
    else:
        ratio = mean / sol.value
        ci = 1.96 * se / sol.value
    report = {"runs": runs, "mean_weight": mean, "se": se,
              "lp_value": sol.value, "ratio": ratio, "ratio_ci95": ci}
    if inst.n_offline <= 12:
        margin = exact_threshold_check(inst, sol.x, params)
        report["exact_threshold_margin"] = margin
        report["exact_threshold_ok"] = True
    return report
