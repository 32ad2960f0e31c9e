"""ODRSes for matchings and b-matchings.

Pipeline: scale the arriving fractions (group discount / individual markup),
bucket conditional bid probabilities into bins by first-fit, draw at most one
candidate per bin, let eligible candidates bid, and resolve contention with a
CRS built on the exact bid-set law. The warm-up variant replaces bucketing by
independent per-node streams and a product-law selector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import crs as crs_mod
from .errors import DomainError, FeasibilityError, InvariantBreach, SizeError
from .instances import Arrival, MatchingInstance
from .level_set import LevelSetState, step_probability, _snap
from .rng import ScalarRng

MAX_COMPONENT = 20


# ----------------------------------------------------------------------------
# scaling parameters
# ----------------------------------------------------------------------------

def f_eps_delta(z: float, eps: float, delta: float) -> float:
    """exp(-z(1+delta)) - (1 - z(1-eps)); nonnegativity on [z*, inf) is the
    sufficient condition for the closed-form ratio bound."""
    return math.exp(-z * (1.0 + delta)) - (1.0 - z * (1.0 - eps))


def f_prime(z: float, eps: float, delta: float) -> float:
    return -(1.0 + delta) * math.exp(-z * (1.0 + delta)) + (1.0 - eps)


def z_star(eps: float, delta: float, variant: str) -> float:
    if eps + delta == 0:
        return 0.0
    if variant == "matching":
        return eps / (2.0 * (eps + delta))
    return eps / ((3.0 + 2.0 * delta) * (eps + delta))


def feasibility_violation(eps: float, delta: float, variant: str) -> str | None:
    z = z_star(eps, delta, variant)
    if f_eps_delta(z, eps, delta) < 0:
        return f"f({z:.6g}) = {f_eps_delta(z, eps, delta):.3g} < 0"
    if f_prime(z, eps, delta) < 0:
        return f"f'({z:.6g}) = {f_prime(z, eps, delta):.3g} < 0"
    return None


@dataclass(frozen=True)
class ScalingParams:
    """(eps, delta) plus the derived thresholds; feasibility is checked on
    construction."""

    eps: float
    delta: float
    variant: str = "matching"

    def __post_init__(self):
        if self.variant not in ("matching", "b_matching"):
            raise DomainError(f"unknown variant {self.variant!r}")
        if not (0 <= self.eps <= 1 and 0 <= self.delta <= 1):
            raise DomainError("eps, delta must lie in [0, 1]")
        bad = feasibility_violation(self.eps, self.delta, self.variant)
        if bad is not None:
            raise FeasibilityError(f"infeasible ({self.eps}, {self.delta}): {bad}", bad)

    @property
    def theta(self) -> float:
        if self.eps + self.delta == 0:
            return 0.0
        if self.variant == "matching":
            return self.delta / (self.eps + self.delta)
        return self.theta2 * (1.0 - self.eps) + self.theta1 * (self.delta + self.eps)

    @property
    def theta1(self) -> float:
        if self.eps + self.delta == 0:
            return 0.0
        return self.eps / ((3.0 + 2.0 * self.delta) * (self.eps + self.delta))

    @property
    def theta2(self) -> float:
        if self.eps + self.delta == 0:
            return 0.0
        return (self.eps + 3.0 * self.delta + 2.0 * self.delta ** 2) / (
            (3.0 + 2.0 * self.delta) * (self.eps + self.delta))

    @property
    def theta_core(self) -> float:
        """Low/high threshold on the scaled fractional degree."""
        if self.variant == "matching":
            return self.theta * (1.0 - self.eps)
        return self.theta


def ratio_bound_raw(eps: float, delta: float) -> float:
    return 1.0 - math.exp(-1.0 - delta + (eps + delta) / (1.0 - eps)) * (1.0 - eps) / (1.0 + delta)


def ratio_bound(params: ScalingParams) -> float:
    """Closed-form rounding-ratio bound for feasible parameters."""
    bad = feasibility_violation(params.eps, params.delta, params.variant)
    if bad is not None:
        raise FeasibilityError(f"infeasible parameters: {bad}", bad)
    return ratio_bound_raw(params.eps, params.delta)


def _min_feasible_eps(delta: float, variant: str, lo: float = 0.0, hi: float = 0.9) -> float | None:
    """Smallest feasible eps for a given delta, by bisection on the boundary."""
    def ok(e):
        return feasibility_violation(e, delta, variant) is None
    e = lo
    step = 2e-3
    found = None
    while e <= hi:
        if ok(e):
            found = e
            break
        e += step
    if found is None:
        return None
    lo_inf, hi_ok = max(0.0, found - step), found
    for _ in range(60):
        mid = 0.5 * (lo_inf + hi_ok)
        if ok(mid):
            hi_ok = mid
        else:
            lo_inf = mid
    return hi_ok


def optimize_params(variant: str = "matching") -> tuple[float, float, float]:
    """Maximize the ratio bound over the feasible region; deterministic.

    Coarse 1e-3 grid over [0, 0.2]^2 seeds the search. The bound strictly
    decreases in eps on the feasible side, so the optimum pins eps to the
    feasibility boundary; refinement therefore walks delta with halving steps
    and re-bisects the boundary eps at each probe (plain coordinate descent
    stalls on this curved ridge).
    """
    if variant not in ("matching", "b_matching"):
        raise DomainError(f"unknown variant {variant!r}")
    best = (ratio_bound_raw(0.0, 0.0), 0.0, 0.0)
    for j in range(201):
        delta = j * 1e-3
        for i in range(201):
            eps = i * 1e-3
            if feasibility_violation(eps, delta, variant) is None:
                val = ratio_bound_raw(eps, delta)
                if val > best[0]:
                    best = (val, eps, delta)
                break  # larger eps only lowers the bound
    _, _, delta = best
    val, eps = best[0], best[1]
    step = 1e-3
    while step > 1e-7:
        improved = False
        for cand in (delta - step, delta + step):
            if not (0.0 <= cand <= 1.0):
                continue
            e = _min_feasible_eps(cand, variant)
            if e is None:
                continue
            v = ratio_bound_raw(e, cand)
            if v > val:
                val, eps, delta, improved = v, e, cand, True
        if not improved:
            step *= 0.5
    return eps, delta, val


def optimal_params(variant: str = "matching") -> ScalingParams:
    eps, delta, _ = optimize_params(variant)
    return ScalingParams(eps, delta, variant)


# ----------------------------------------------------------------------------
# fraction scaling
# ----------------------------------------------------------------------------

def _position_matching(z: float, params: ScalingParams) -> float:
    """Cumulative scaled degree: rate (1-eps) below theta, (1+delta) above."""
    th = params.theta
    return z * (1.0 - params.eps) + (params.eps + params.delta) * max(0.0, z - th)


def scale_hat(x: float, s: float, params: ScalingParams) -> float:
    """Scaled fraction for the matching variant (discount below theta,
    markup above); the scaled degree never exceeds the true one."""
    th = params.theta
    if s >= th:
        return x * (1.0 + params.delta)
    if s + x <= th:
        return x * (1.0 - params.eps)
    return x * (1.0 - params.eps) + (params.eps + params.delta) * (s + x - th)


def _position_b(z: float, params: ScalingParams) -> float:
    """Cumulative scaled degree for b-matchings.

    Within each unit, fractional positions in [theta1, theta2) accrue at rate
    (1-eps), the rest at (1+delta); a full unit maps to exactly one, so floors
    and ceilings are preserved.
    """
    z = _snap(z)
    base = math.floor(z)
    u = z - base
    t1, t2 = params.theta1, params.theta2
    scaled = ((1.0 + params.delta) * min(u, t1)
              + (1.0 - params.eps) * min(max(u - t1, 0.0), t2 - t1)
              + (1.0 + params.delta) * max(u - t2, 0.0))
    return base + scaled


def scale_hat_b(x: float, s: float, params: ScalingParams) -> float:
    return _position_b(s + x, params) - _position_b(s, params)


def hat_position(s: float, params: ScalingParams) -> float:
    if params.variant == "matching":
        return _position_matching(s, params)
    return _position_b(s, params)


# ----------------------------------------------------------------------------
# first fit
# ----------------------------------------------------------------------------

def first_fit(items) -> list[list]:
    """Pack (id, size) items, sizes in [0,1], into bins of capacity one.

    Bins are returned in opening order; at most one bin ends up below half
    full. Sizes a hair above one (float dust) are clamped.
    """
    bins: list[list] = []
    loads: list[float] = []
    for ident, size in items:
        if size > 1.0 + 1e-9:
            raise DomainError(f"item {ident} has size {size} > 1")
        size = min(size, 1.0)
        for b, load in enumerate(loads):
            if load + size <= 1.0 + 1e-12:
                bins[b].append((ident, size))
                loads[b] = load + size
                break
        else:
            bins.append([(ident, size)])
            loads.append(size)
    return bins


# ----------------------------------------------------------------------------
# step plans: deterministic per-arrival bucketing structure
# ----------------------------------------------------------------------------

@dataclass
class GroupBin:
    """One first-fit bin: candidates drawn by a single uniform."""

    nodes: list[int]
    sizes: list[float]


@dataclass
class CrossingNode:
    """b-matching node whose scaled degree crosses an integer this step:
    bids surely when lagging, else takes over with the given probability."""

    node: int
    takeover: float


@dataclass
class StepPlan:
    t: int
    xhat: dict[int, float]
    v: dict[int, float]
    bins: list[GroupBin] = field(default_factory=list)
    crossing: list[CrossingNode] = field(default_factory=list)

    def active(self) -> list[int]:
        return sorted(self.xhat)


def build_plans(inst: MatchingInstance, params: ScalingParams) -> list[StepPlan]:
    """Scaled fractions, classification, and first-fit bins for every arrival."""
    if any(arr.p != 1.0 for arr in inst.arrivals):
        raise DomainError("this scheme expects sure arrivals; "
                          "use the stochastic pipeline for p < 1")
    n = inst.n_offline
    s = np.zeros(n)  # true prefix degrees
    plans = []
    b_variant = params.variant == "b_matching"
    for t, arr in enumerate(inst.arrivals):
        plan = StepPlan(t, {}, {})
        low_items, high_items = [], []
        for i, x in arr.edges:
            if x <= 0:
                continue
            si = float(s[i])
            shat = hat_position(si, params)
            shat_next = hat_position(si + x, params)
            xhat = shat_next - shat
            if xhat <= 0:
                continue
            plan.xhat[i] = xhat
            plan.v[i] = x
            fl = math.floor(_snap(shat))
            fl_next = math.floor(_snap(shat_next))
            frac = _snap(shat) - fl
            if b_variant and fl_next > fl:
                nfrac = _snap(shat_next) - fl_next
                takeover = nfrac / frac if frac > 0 else 0.0
                plan.crossing.append(CrossingNode(i, min(1.0, max(0.0, takeover))))
            else:
                size = xhat / (1.0 - frac)
                if size > 1.0 + 1e-9:
                    raise InvariantBreach(f"bid size {size} > 1 at arrival {t}, node {i}")
                if frac <= params.theta_core + 1e-12:
                    low_items.append((i, min(1.0, size)))
                else:
                    high_items.append((i, min(1.0, size)))
        for items in (low_items, high_items):
            for packed in first_fit(items):
                plan.bins.append(GroupBin([i for i, _ in packed], [sz for _, sz in packed]))
        for i, x in arr.edges:
            s[i] += x
        plans.append(plan)
    return plans


def downscale_for_polytime(inst: MatchingInstance, gamma: float) -> MatchingInstance:
    """Multiply every fraction by (1 - gamma); keeps per-arrival nonempty-bin
    counts O(1/gamma) so bid-set supports stay polynomial."""
    if not (0 < gamma < 0.5):
        raise DomainError("gamma must lie in (0, 0.5)")
    arrivals = tuple(
        Arrival(tuple((i, x * (1.0 - gamma)) for i, x in arr.edges), arr.weights, arr.p)
        for arr in inst.arrivals)
    return MatchingInstance(inst.n_offline, inst.capacities, arrivals)


# ----------------------------------------------------------------------------
# exact bid-set law (free/lag-mask dynamic program)
# ----------------------------------------------------------------------------

def _candidate_units(plan: StepPlan):
    """Independent draw units of one arrival.

    Each unit yields a list of (bid-eligible node or None, probability,
    lag-flip info). Group bins: at most one candidate; crossing nodes: a coin.
    """
    units = []
    for gb in plan.bins:
        outs = [(None, 1.0 - sum(gb.sizes))]
        outs.extend((node, sz) for node, sz in zip(gb.nodes, gb.sizes))
        units.append(("bin", outs))
    for cn in plan.crossing:
        units.append(("cross", [(cn.node, cn.takeover), (None, 1.0 - cn.takeover)]))
    return units


def _enumerate_candidates(units):
    """All joint candidate outcomes: list of (candidate dict, probability).

    Candidate dict maps node -> unit kind ('bin' or 'cross')."""
    outcomes = [({}, 1.0)]
    for kind, outs in units:
        nxt = []
        for cand, pr in outcomes:
            for node, p in outs:
                if p <= 0.0:
                    continue
                c2 = cand if node is None else {**cand, node: kind}
                nxt.append((c2, pr * p))
        outcomes = nxt
    return outcomes


class BidLawDP:
    """Evolves the exact joint law of per-node lag bits over one component.

    Lag bit = 1 when the node's bid count sits at the ceiling of its scaled
    degree (it has bid "ahead"); bit 0 means it may still bid this unit.
    For simple matchings the lag bit is exactly the has-bid flag.
    """

    def __init__(self, nodes: list[int]):
        self.nodes = sorted(nodes)
        self.pos = {i: k for k, i in enumerate(self.nodes)}
        self.state: dict[int, float] = {0: 1.0}

    def step(self, plan: StepPlan) -> crs_mod.SupportDistribution:
        """Advance one arrival; returns the law of the bidder set P_t
        (masks over plan.active())."""
        active = plan.active()
        apos = {i: k for k, i in enumerate(active)}
        outcomes = _enumerate_candidates(_candidate_units(plan))
        law: dict[int, float] = {}
        new_state: dict[int, float] = {}
        bin_nodes = [node for gb in plan.bins for node in gb.nodes]
        for mask, pr in self.state.items():
            for cand, cpr in outcomes:
                p = pr * cpr
                if p <= 0.0:
                    continue
                bid_mask = 0
                new_mask = mask
                for node in bin_nodes:
                    # drawn candidate bids iff not ahead, then moves ahead
                    if cand.get(node) == "bin" and not (mask >> self.pos[node] & 1):
                        bid_mask |= 1 << apos[node]
                        new_mask |= 1 << self.pos[node]
                for cn in plan.crossing:
                    k = self.pos[cn.node]
                    heads = cand.get(cn.node) == "cross"
                    if not (mask >> k & 1):        # lagging: bids surely, stays in line
                        bid_mask |= 1 << apos[cn.node]
                    elif heads:                    # ahead + heads: bids, stays ahead
                        bid_mask |= 1 << apos[cn.node]
                    else:                          # ahead + tails: falls back in line
                        new_mask &= ~(1 << k)
                law[bid_mask] = law.get(bid_mask, 0.0) + p
                new_state[new_mask] = new_state.get(new_mask, 0.0) + p
        self.state = {m: q for m, q in new_state.items() if q > 1e-15}
        total = sum(self.state.values())
        self.state = {m: q / total for m, q in self.state.items()}
        return crs_mod.SupportDistribution(tuple(active), tuple(law.items()))


# ----------------------------------------------------------------------------
# matchings and samplers
# ----------------------------------------------------------------------------

def odrs_core_step(ahead: np.ndarray, plan: StepPlan,
                   selector: "crs_mod.SelectionRule", rng: ScalarRng) -> int:
    """One arrival of the core ODRS: draw candidates per bin, collect eligible
    bids, update the per-node bid states in place, and resolve contention.

    Returns the matched offline node, or -1. Candidates from group bins bid
    while their count lags the scaled-degree floor; boundary-crossing nodes
    bid surely when lagging, else with their takeover coin.
    """
    apos = {i: k for k, i in enumerate(selector.elements)}
    bid_mask = 0
    for gb in plan.bins:
        u = rng.uniform()
        acc = 0.0
        for node, sz in zip(gb.nodes, gb.sizes):
            acc += sz
            if u < acc:
                if not ahead[node]:
                    bid_mask |= 1 << apos[node]
                    ahead[node] = True
                break
    for cn in plan.crossing:
        heads = rng.uniform() < cn.takeover
        if not ahead[cn.node]:
            bid_mask |= 1 << apos[cn.node]
        elif heads:
            bid_mask |= 1 << apos[cn.node]
        else:
            ahead[cn.node] = False
    if not bid_mask:
        return -1
    return crs_mod.select(selector, bid_mask, rng.uniform())


@dataclass
class Matching:
    """Output (offline id, arrival index) pairs."""

    pairs: list[tuple[int, int]] = field(default_factory=list)

    def add(self, i: int, t: int):
        self.pairs.append((i, t))

    def weight(self, inst: MatchingInstance) -> float:
        total = 0.0
        for i, t in self.pairs:
            arr = inst.arrivals[t]
            for k, (j, _) in enumerate(arr.edges):
                if j == i:
                    total += arr.weight_of(k)
                    break
        return total

    def assert_valid(self, inst: MatchingInstance, b_matching: bool = False):
        per_arrival: dict[int, int] = {}
        per_offline: dict[int, int] = {}
        for i, t in self.pairs:
            per_arrival[t] = per_arrival.get(t, 0) + 1
            per_offline[i] = per_offline.get(i, 0) + 1
        if any(c > 1 for c in per_arrival.values()):
            raise InvariantBreach("an arrival was matched more than once")
        for i, c in per_offline.items():
            cap = inst.capacities[i] if b_matching else 1
            if c > cap:
                raise InvariantBreach(f"offline node {i} matched {c} > {cap} times")

    def to_json_list(self) -> list[dict]:
        return [{"arrival": t, "offline": i} for i, t in sorted(self.pairs, key=lambda p: p[1])]


def _components(inst: MatchingInstance) -> list[int]:
    """Union-find label per offline node; nodes co-active at any arrival share
    a component, so each arrival's bid-set law factors through one component."""
    parent = list(range(inst.n_offline))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for arr in inst.arrivals:
        ids = [i for i, x in arr.edges if x > 0]
        for a, b in zip(ids, ids[1:]):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    return [find(i) for i in range(inst.n_offline)]


class CompiledOdrs:
    """Deterministic per-instance structure for the improved ODRS: step plans,
    exact per-arrival bid-set laws, and CRS selectors (shared by the sampler,
    the exact engine, and the Monte Carlo bench)."""

    def __init__(self, inst: MatchingInstance, params: ScalingParams):
        self.inst = inst
        self.params = params
        self.plans = build_plans(inst, params)
        labels = _components(inst)
        comp_nodes: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            comp_nodes.setdefault(lab, []).append(i)
        too_big = max((len(v) for v in comp_nodes.values()), default=0)
        if too_big > MAX_COMPONENT:
            raise SizeError(
                f"a component of {too_big} offline nodes exceeds the exact-CRS cap "
                f"{MAX_COMPONENT}; downscale for the polytime pathway or use the warm-up ODRS")
        dps = {lab: BidLawDP(nodes) for lab, nodes in comp_nodes.items()}
        self.laws: list[crs_mod.SupportDistribution | None] = []
        self.selectors: list[crs_mod.SelectionRule | None] = []
        for plan in self.plans:
            active = plan.active()
            if not active:
                self.laws.append(None)
                self.selectors.append(None)
                continue
            law = dps[labels[active[0]]].step(plan)
            v = [plan.v[i] for i in law.elements]
            self.laws.append(law)
            self.selectors.append(crs_mod.build_selector(law, v))

    def sample(self, seed: int, rng: ScalarRng | None = None) -> Matching:
        rng = rng if rng is not None else ScalarRng(seed)
        ahead = np.zeros(self.inst.n_offline, dtype=bool)
        out = Matching()
        for plan, selector in zip(self.plans, self.selectors):
            if selector is None:
                continue
            winner = odrs_core_step(ahead, plan, selector, rng)
            if winner >= 0:
                out.add(winner, plan.t)
        out.assert_valid(self.inst, b_matching=self.params.variant == "b_matching")
        return out

    def edge_match_probs(self) -> dict[tuple[int, int], float]:
        """Exact Pr[(i,t) matched] = sum_S Pr[P_t=S] p_{i,S}."""
        probs: dict[tuple[int, int], float] = {}
        for plan, law, selector in zip(self.plans, self.laws, self.selectors):
            if law is None:
                continue
            marg = crs_mod.exact_marginals(law, selector)
            for k, i in enumerate(law.elements):
                probs[(i, plan.t)] = float(marg[k])
        return probs

    def bid_marginals(self, t: int) -> dict[int, float]:
        """Exact Pr[i in P_t]; equals the scaled fraction."""
        law = self.laws[t]
        if law is None:
            return {}
        out = {i: 0.0 for i in law.elements}
        for mask, p in law.atoms:
            for k, i in enumerate(law.elements):
                if mask >> k & 1:
                    out[i] += p
        return out


def odrs_round(inst: MatchingInstance, params: ScalingParams, seed: int = 0) -> Matching:
    """Improved matching ODRS with exact CRS selectors."""
    if params.variant != "matching":
        raise DomainError("odrs_round expects matching-variant parameters")
    return CompiledOdrs(inst, params).sample(seed)


def odrs_round_b(inst: MatchingInstance, params: ScalingParams, seed: int = 0) -> Matching:
    """b-matching extension of the improved ODRS."""
    if params.variant != "b_matching":
        raise DomainError("odrs_round_b expects b_matching-variant parameters")
    return CompiledOdrs(inst, params).sample(seed)


# ----------------------------------------------------------------------------
# warm-up ODRS: independent per-node streams + product-law CRS
# ----------------------------------------------------------------------------

class CompiledWarmup:
    """1 - 1/e warm-up: each offline node runs its own online level-set stream
    on its fraction column; a product-law selector resolves each arrival."""

    def __init__(self, inst: MatchingInstance):
        if any(arr.p != 1.0 for arr in inst.arrivals):
            raise DomainError("this scheme expects sure arrivals; "
                              "use the stochastic pipeline for p < 1")
        self.inst = inst
        self.selectors: list[crs_mod.ProductSelector | None] = []
        # per arrival: (node, floor of its prefix sum, p if lagging, p if ahead)
        self.steps: list[list[tuple[int, int, float, float]]] = []
        s = np.zeros(inst.n_offline)
        for arr in inst.arrivals:
            rows = []
            for i, x in arr.edges:
                if x <= 0:
                    continue
                si = float(s[i])
                fl = math.floor(_snap(si))
                lo = step_probability(LevelSetState(si, fl), x)
                hi = step_probability(LevelSetState(si, math.ceil(_snap(si))), x)
                rows.append((i, fl, lo, hi))
                s[i] += x
            self.steps.append(rows)
            ys = [x for _, x in arr.edges if x > 0]
            self.selectors.append(crs_mod.ProductSelector(ys) if ys else None)

    def sample(self, seed: int, rng: ScalarRng | None = None) -> Matching:
        rng = rng if rng is not None else ScalarRng(seed)
        counts = [0] * self.inst.n_offline
        out = Matching()
        for t, rows in enumerate(self.steps):
            sel = self.selectors[t]
            if sel is None:
                continue
            bidders: set[int] = set()
            for k, (i, fl, lo, hi) in enumerate(rows):
                p = lo if counts[i] == fl else hi
                if rng.uniform() < p:
                    counts[i] += 1
                    bidders.add(k)
            if bidders:
                win = sel.select(bidders, rng.uniform)
                if win >= 0:
                    out.add(rows[win][0], t)
        out.assert_valid(self.inst, b_matching=True)
        return out

    def edge_match_probs(self) -> dict[tuple[int, int], float]:
        """Exact closed form: alpha_t * x_{i,t} with the product-law ratio."""
        probs = {}
        for t, sel in enumerate(self.selectors):
            if sel is None:
                continue
            marg = sel.marginals()
            for k, (i, _, _, _) in enumerate(self.steps[t]):
                probs[(i, t)] = float(marg[k])
        return probs


def warmup_round(inst: MatchingInstance, seed: int = 0) -> Matching:
    """Warm-up ODRS with rounding ratio at least 1 - 1/e."""
    return CompiledWarmup(inst).sample(seed)
