"""Applications: online multigraph edge coloring via fair matchings, and
multi-stage stochastic hypergraph multi-cover rounding.

Edge coloring runs rounds of fair matchings (each an ODRS run on the
uncolored residual, with fractions kappa(e)/Delta_round) and finishes the
leftovers greedily. Cover rounding level-set-rounds each vertex's scaled
stage vector independently; coverage then holds with probability one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import crs as crs_mod
from .errors import DomainError
from .instances import CoverInstance, MultigraphInstance
from .level_set import LevelSetState, _snap, online_step, step_probability
from .rng import ScalarRng, generator

WARMUP_ALPHA = math.e / (math.e - 1.0)  # 1 / (1 - 1/e)
ROUND_SLACK = 0.1


# ----------------------------------------------------------------------------
# edge coloring
# ----------------------------------------------------------------------------

@dataclass
class EdgeColoring:
    """Color per parallel-edge copy, keyed by (left, right, copy index)."""

    colors: dict[tuple[int, int, int], int] = field(default_factory=dict)

    @property
    def palette_size(self) -> int:
        return max(self.colors.values()) + 1 if self.colors else 0


def default_rounds_c(n_nodes: int) -> int:
    """Desk-scale per-round color budget: max(8, ceil(log2(n)^2))."""
    if n_nodes < 2:
        return 8
    return max(8, math.ceil(math.log2(n_nodes) ** 2))


class _FairMatcher:
    """One warm-up ODRS fed the uncolored residual, arrival by arrival.

    Per offline (right) node it runs an online level-set stream; the arriving
    left node resolves contention with the product-law selector. Fractions are
    kappa/delta_bound, clipped to the per-vertex budgets so the stream stays a
    fractional matching no matter how the residual fluctuates.
    """

    def __init__(self, n_right: int, delta_bound: float):
        self.delta_bound = delta_bound
        self.state = [LevelSetState() for _ in range(n_right)]
        self.col_used = np.zeros(n_right)

    def forbid(self, j: int):
        # the greedy finish reused this matcher's color at j; j is off limits
        self.col_used[j] = 1.0

    def arrive(self, edges: list[tuple[int, int]], rng: ScalarRng) -> int:
        """edges: (right id, uncolored multiplicity); returns matched right id
        or -1."""
        row_used = 0.0
        ys, ids = [], []
        probs = []
        for j, kappa in edges:
            x = min(kappa / self.delta_bound,
                    1.0 - row_used, 1.0 - float(self.col_used[j]))
            if x <= 1e-12:
                continue
            row_used += x
            self.col_used[j] += x
            st = self.state[j]
            p = step_probability(st, x)
            probs.append((j, x, p))
            ids.append(j)
            ys.append(x)
        if not ids:
            return -1
        bidders = set()
        for k, (j, x, p) in enumerate(probs):
            sel = 1 if rng.uniform() < p else 0
            _, self.state[j] = online_step(self.state[j], x, 0.0 if sel else 1.0)
            if sel:
                bidders.add(k)
        if not bidders:
            return -1
        win = crs_mod.ProductSelector(ys).select(bidders, rng.uniform)
        return ids[win] if win >= 0 else -1


def edge_color_online(mg: MultigraphInstance, C: int | None = None,
                      params=None, seed: int = 0,
                      slack: float = ROUND_SLACK) -> EdgeColoring:
    """Online edge coloring by rounds of fair matchings plus a greedy finish.

    Round r uses the declared residual degree bound max(Delta - r*C*(1-slack),
    C); matcher i within a round sees only edges left uncolored by matchers
    before it. The greedy finish reuses the palette first.
    """
    delta = mg.delta
    if C is None:
        C = default_rounds_c(mg.n_left + mg.n_right)
    C = min(C, delta)
    n_rounds = max(1, delta // C)
    per_round = math.ceil(WARMUP_ALPHA * C)
    rng = ScalarRng(seed)
    matchers = []
    for r in range(n_rounds):
        bound = max(delta - r * C * (1.0 - slack), float(C))
        matchers.extend(_FairMatcher(mg.n_right, bound) for _ in range(per_round))
    coloring = EdgeColoring()
    left_used: list[set[int]] = [set() for _ in range(mg.n_left)]
    right_used: list[set[int]] = [set() for _ in range(mg.n_right)]
    for t, arr in enumerate(mg.arrivals):
        free_copies = {j: list(range(kappa)) for j, kappa in arr if kappa > 0}
        for color, matcher in enumerate(matchers):
            if not free_copies:
                break
            j = matcher.arrive(sorted((j, len(c)) for j, c in free_copies.items()), rng)
            if j >= 0 and free_copies.get(j):
                # a matched simple edge colors one of its copies uniformly
                pick = int(rng.uniform() * len(free_copies[j]))
                copy = free_copies[j].pop(min(pick, len(free_copies[j]) - 1))
                coloring.colors[(t, j, copy)] = color
                left_used[t].add(color)
                right_used[j].add(color)
                if not free_copies[j]:
                    del free_copies[j]
        # greedy finish for this arrival's leftover copies (first free color);
        # reusing a matcher's color blocks that matcher from this right node
        for j, copies in sorted(free_copies.items()):
            for copy in copies:
                c = 0
                while c in left_used[t] or c in right_used[j]:
                    c += 1
                coloring.colors[(t, j, copy)] = c
                left_used[t].add(c)
                right_used[j].add(c)
                if c < len(matchers):
                    matchers[c].forbid(j)
    return coloring


def multigraph_to_instance(mg: MultigraphInstance, delta_bound: int | None = None):
    """Fractional matching with x_e = kappa(e)/Delta per simple edge."""
    from .instances import Arrival, MatchingInstance
    delta = delta_bound if delta_bound is not None else mg.delta
    for arr in mg.arrivals:
        if sum(k for _, k in arr) > delta:
            raise DomainError("a left node exceeds the declared max degree")
    loads = {}
    for arr in mg.arrivals:
        for j, k in arr:
            loads[j] = loads.get(j, 0) + k
    if any(v > delta for v in loads.values()):
        raise DomainError("a right node exceeds the declared max degree")
    arrivals = tuple(
        Arrival(tuple((j, k / delta) for j, k in arr if k > 0)) for arr in mg.arrivals)
    return MatchingInstance(mg.n_right, (1,) * mg.n_right, arrivals)


class FairMatcherSampler:
    """Samples matchings of a multigraph that hit every parallel edge with
    probability at least 1/(alpha * Delta), alpha the ODRS ratio's inverse.

    A matched simple edge picks one of its parallel copies uniformly.
    """

    def __init__(self, mg: MultigraphInstance, algorithm: str = "warmup",
                 params=None, delta_bound: int | None = None):
        from . import odrs as odrs_mod
        self.mg = mg
        inst = multigraph_to_instance(mg, delta_bound)
        if algorithm == "warmup":
            self._compiled = odrs_mod.CompiledWarmup(inst)
            self.alpha = 1.0 / self._alpha_floor_warmup(inst)
        elif algorithm == "odrs":
            self._compiled = odrs_mod.CompiledOdrs(inst, params)
            self.alpha = 1.0 / odrs_mod.ratio_bound(params)
        else:
            raise DomainError(f"unknown fair-matcher algorithm {algorithm!r}")

    @staticmethod
    def _alpha_floor_warmup(inst) -> float:
        return 1.0 - 1.0 / math.e

    def sample(self, seed: int) -> list[tuple[int, int, int]]:
        """Matched (left, right, copy) triples; one copy per simple edge."""
        rng = ScalarRng(seed)
        matching = self._compiled.sample(seed, rng=rng)
        out = []
        for j, t in matching.pairs:
            kappa = dict(self.mg.arrivals[t])[j]
            copy = min(int(rng.uniform() * kappa), kappa - 1)
            out.append((t, j, copy))
        return out


def fair_matcher(mg: MultigraphInstance, algorithm: str = "warmup", params=None,
                 delta_bound: int | None = None) -> FairMatcherSampler:
    return FairMatcherSampler(mg, algorithm, params, delta_bound)


@dataclass
class ColoringReport:
    proper: bool
    all_colored: bool
    colors_used: int
    delta: int
    violations: list[str] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.colors_used / self.delta if self.delta else 0.0


def verify_coloring(mg: MultigraphInstance, coloring: EdgeColoring) -> ColoringReport:
    """Properness plus completeness: every copy colored, no vertex sees a
    color twice."""
    violations = []
    seen_left: dict[tuple[int, int], tuple] = {}
    seen_right: dict[tuple[int, int], tuple] = {}
    for (t, j, copy), c in coloring.colors.items():
        if (t, c) in seen_left:
            violations.append(f"left {t} repeats color {c}")
        seen_left[(t, c)] = (t, j, copy)
        if (j, c) in seen_right:
            violations.append(f"right {j} repeats color {c}")
        seen_right[(j, c)] = (t, j, copy)
    for t, arr in enumerate(mg.arrivals):
        for j, kappa in arr:
            have = sum(1 for (tt, jj, _) in coloring.colors if tt == t and jj == j)
            if have != kappa:
                violations.append(f"edge ({t},{j}) colored {have}/{kappa} copies")
    return ColoringReport(
        proper=not any("repeats" in v for v in violations),
        all_colored=not any("copies" in v for v in violations),
        colors_used=coloring.palette_size,
        delta=mg.delta,
        violations=violations)


# ----------------------------------------------------------------------------
# multi-stage cover
# ----------------------------------------------------------------------------

@dataclass
class CoverSolution:
    y: np.ndarray  # [var][stage] nonnegative integers
    cost: float


def cover_alpha(cov: CoverInstance) -> float:
    """(d + t - 1) / t, maximized over edges so every constraint is covered."""
    if not cov.edges:
        raise DomainError("cover instance has no edges")
    return max((len(verts) + demand - 1) / demand for verts, demand in cov.edges)


def round_multistage_cover(cov: CoverInstance, seed: int = 0) -> CoverSolution:
    """Independently level-set-round each vertex's scaled stage vector.

    Scaled values above one are peeled into a deterministic integer part plus
    a rounded fractional part; the per-vertex floor guarantee is unchanged, so
    every constraint holds with probability one.
    """
    alpha = cover_alpha(cov)
    rng = ScalarRng(seed)
    y = np.zeros((cov.n_vars, cov.k), dtype=np.int64)
    for v in range(cov.n_vars):
        state = LevelSetState()
        for stage in range(cov.k):
            z = alpha * cov.xstar[v][stage]
            base = math.floor(_snap(z))
            frac = _snap(z) - base
            sel, state = online_step(state, frac, rng.uniform())
            y[v, stage] = base + sel
        # dummy tail flushes the stream to an integer; its outcome is dropped
        total = _snap(state.s_prev)
        pad = math.ceil(total) - total
        if pad > 0:
            online_step(state, pad, rng.uniform())
    cost = float(sum(cov.costs[stage][v] * y[v, stage]
                     for v in range(cov.n_vars) for stage in range(cov.k)))
    return CoverSolution(y, cost)


def cover_trials(cov: CoverInstance, n_trials: int, seed: int) -> dict:
    """Vectorized Monte Carlo over trials: coverage violations and cost ratio."""
    alpha = cover_alpha(cov)
    g = generator(seed, 11)
    totals = np.zeros((n_trials, cov.n_vars), dtype=np.int64)
    cost = np.zeros(n_trials)
    for v in range(cov.n_vars):
        counts = np.zeros(n_trials, dtype=np.int64)
        s = comp = 0.0
        for stage in range(cov.k):
            z = alpha * cov.xstar[v][stage]
            base = math.floor(_snap(z))
            frac = _snap(z) - base
            s_prev = _snap(s)
            p_low = step_probability(LevelSetState(s, math.floor(s_prev)), frac)
            p_high = step_probability(LevelSetState(s, math.ceil(s_prev)), frac)
            p = np.where(counts == math.floor(s_prev), p_low, p_high)
            sel = g.random(n_trials) < p
            counts += sel
            yv = base + sel
            totals[:, v] += yv
            cost += cov.costs[stage][v] * yv
            y0 = frac - comp
            s_new = s + y0
            comp = (s_new - s) - y0
            s = s_new
    violations = 0
    for verts, demand in cov.edges:
        cover = totals[:, list(verts)].sum(axis=1)
        violations += int((cover < demand).sum())
    lp_cost = sum(cov.costs[stage][v] * cov.xstar[v][stage]
                  for v in range(cov.n_vars) for stage in range(cov.k))
    return {"trials": n_trials, "violations": violations,
            "mean_cost": float(cost.mean()),
            "cost_se": float(cost.std(ddof=1) / math.sqrt(n_trials)),
            "lp_cost": float(lp_cost), "alpha": alpha,
            "cost_ratio": float(cost.mean() / lp_cost) if lp_cost > 0 else 1.0}


@dataclass
class CoverReport:
    covered: bool
    cost: float
    cost_ratio: float
    violations: list[str] = field(default_factory=list)


def verify_cover(cov: CoverInstance, sol: CoverSolution) -> CoverReport:
    violations = []
    for e, (verts, demand) in enumerate(cov.edges):
        got = int(sum(sol.y[v].sum() for v in verts))
        if got < demand:
            violations.append(f"edge {e} covered {got} < {demand}")
    lp_cost = sum(cov.costs[stage][v] * cov.xstar[v][stage]
                  for v in range(cov.n_vars) for stage in range(cov.k))
    return CoverReport(not violations, sol.cost,
                       sol.cost / lp_cost if lp_cost > 0 else 1.0, violations)
