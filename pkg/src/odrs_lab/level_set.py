"""Level-set rounding of a fraction stream, online and offline.

Both algorithms round x_1, x_2, ... in [0,1] to bits so that every prefix
count stays within floor/ceiling of the prefix sum (P2) while preserving
marginals (P1); the online algorithm's output law coincides with the offline
pairwise-merge law, which carries the strong negative-correlation properties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvariantBreach, SizeError
from .rng import ScalarRng

SNAP_TOL = 1e-9


def _snap(v: float) -> float:
    """Round to the nearest integer when within SNAP_TOL.

    The online case split is discontinuous at integer prefix sums, so float
    dust must not move a sum across a floor boundary.
    """
    r = round(v)
    return float(r) if abs(v - r) <= SNAP_TOL else v


@dataclass(frozen=True)
class LevelSetState:
    """Running prefix sum and selection count (plus Kahan compensation)."""

    s_prev: float = 0.0
    count_prev: int = 0
    comp: float = 0.0


def step_probability(state: LevelSetState, x: float) -> float:
    """Selection probability for the next element, by the five-way case split."""
    s_prev = _snap(state.s_prev)
    s_t = _snap(state.s_prev + x)
    count = state.count_prev
    fl_prev = math.floor(s_prev)
    fl_t = math.floor(s_t)
    ce_t = math.ceil(s_t)
    if count == ce_t:
        p = 0.0
    elif count < fl_t:
        p = 1.0
    elif count == fl_t == fl_prev:
        p = x / (fl_prev + 1.0 - s_prev)
    elif count == fl_t and fl_t > fl_prev and s_prev != fl_prev:
        p = (s_t - fl_t) / (s_prev - fl_prev)
    else:
        p = 0.0
    if p < -SNAP_TOL or p > 1.0 + SNAP_TOL:
        raise InvariantBreach(f"selection probability {p} out of range at s={s_t}, count={count}")
    return min(1.0, max(0.0, p))


def online_step(state: LevelSetState, x: float, u: float) -> tuple[int, LevelSetState]:
    """One online decision: select with probability from the case split.

    Returns (selected bit, new state); aborts if the prefix-count invariant
    would break.
    """
    p = step_probability(state, x)
    selected = 1 if u < p else 0
    # Kahan-compensated prefix sum
    y = x - state.comp
    s_new = state.s_prev + y
    comp = (s_new - state.s_prev) - y
    count = state.count_prev + selected
    snapped = _snap(s_new)
    if not (math.floor(snapped) <= count <= math.ceil(snapped)):
        raise InvariantBreach(
            f"prefix count {count} outside [floor,ceil] of prefix sum {s_new}")
    return selected, LevelSetState(s_new, count, comp)


def _pad_to_integer(x) -> tuple[np.ndarray, int]:
    """Append the dummy element that tops the sum up to the next integer."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -SNAP_TOL) or np.any(x > 1 + SNAP_TOL):
        raise DomainError("fractions must lie in [0, 1]")
    total = _snap(float(x.sum()))
    if total == round(total):
        return x, len(x)
    pad = math.ceil(total) - total
    return np.concatenate([x, [pad]]), len(x)


def online_round(x, seed: int = 0, rng: ScalarRng | None = None) -> np.ndarray:
    """Round a full stream online; non-integral sums get a dummy tail element
    which is stripped from the output."""
    xs, n = _pad_to_integer(x)
    rng = rng if rng is not None else ScalarRng(seed)
    state = LevelSetState()
    bits = np.zeros(len(xs), dtype=np.int8)
    for t, xt in enumerate(xs):
        bits[t], state = online_step(state, float(xt), rng.uniform())
    return bits[:n]


def online_round_batch(x, n_runs: int, seed: int = 0) -> np.ndarray:
    """n_runs independent online roundings, vectorized across runs.

    Asserts the prefix-count invariant for every run at every step.
    """
    from .rng import generator
    xs, n = _pad_to_integer(x)
    g = generator(seed, 3)
    counts = np.zeros(n_runs, dtype=np.int64)
    bits = np.zeros((n_runs, len(xs)), dtype=np.int8)
    s = comp = 0.0
    for t, xt in enumerate(xs):
        s_prev = _snap(s)
        # probability conditioned on each of the two admissible counts
        p_low = step_probability(LevelSetState(s, math.floor(s_prev)), float(xt))
        p_high = step_probability(LevelSetState(s, math.ceil(s_prev)), float(xt))
        p = np.where(counts == math.floor(s_prev), p_low, p_high)
        sel = g.random(n_runs) < p
        counts += sel
        bits[:, t] = sel
        y = float(xt) - comp
        s_new = s + y
        comp = (s_new - s) - y
        s = s_new
        snapped = _snap(s)
        lo, hi = math.floor(snapped), math.ceil(snapped)
        if np.any(counts < lo) or np.any(counts > hi):
            raise InvariantBreach(f"prefix count outside [{lo},{hi}] at step {t}")
    return bits[:, :n]


# ----------------------------------------------------------------------------
# offline pairwise merge
# ----------------------------------------------------------------------------

def step_outcomes(a: float, b: float) -> list[tuple[float, float, float]]:
    """The two outcomes of one pairwise merge: [(a', b', probability)].

    Sum a+b is preserved; when both inputs are fractional the number of
    fractional entries strictly decreases.
    """
    if a + b <= 0.0:
        return [(0.0, 0.0, 1.0)]
    s = a + b
    if _snap(s) < 1.0:
        return [(s, 0.0, a / s), (0.0, s, b / s)]
    if 2.0 - s <= 0.0:  # both entries already one
        return [(1.0, 1.0, 1.0)]
    return [(1.0, s - 1.0, (1.0 - b) / (2.0 - s)), (s - 1.0, 1.0, (1.0 - a) / (2.0 - s))]


def step_pair(a: float, b: float, u: float) -> tuple[float, float]:
    """Sample one pairwise merge with the uniform u."""
    outs = step_outcomes(a, b)
    if len(outs) == 1 or u < outs[0][2]:
        return outs[0][0], outs[0][1]
    return outs[1][0], outs[1][1]


def _fractional_indices(y: np.ndarray) -> list[int]:
    out = []
    for i, v in enumerate(y):
        s = _snap(float(v))
        if 0.0 < s < 1.0:
            out.append(i)
    return out


def offline_pivotal(x, seed: int = 0, rng: ScalarRng | None = None) -> np.ndarray:
    """Offline level-set rounding: repeatedly merge the two lowest-index
    fractional entries until none remain."""
    xs, n = _pad_to_integer(x)
    rng = rng if rng is not None else ScalarRng(seed)
    y = xs.copy()
    for _ in range(len(y)):  # at most n-1 merges; one slack step for the guard
        frac = _fractional_indices(y)
        if not frac:
            break
        if len(frac) == 1:
            raise InvariantBreach("single fractional entry left; sum was not integral")
        i1, i2 = frac[0], frac[1]
        a, b = step_pair(float(y[i1]), float(y[i2]), rng.uniform())
        y[i1], y[i2] = _snap(a), _snap(b)
    else:
        raise InvariantBreach("pairwise merge did not terminate in n steps")
    return (np.round(y[:n])).astype(np.int8)


def threshold_round(x, tau: float) -> np.ndarray:
    """Warm-up thresholding: select j iff (s_{j-1}, s_j] meets tau + N.

    Satisfies P1 (over a uniform tau) and P2, but not negative correlation.
    """
    xs = np.asarray(x, dtype=float)
    bits = np.zeros(len(xs), dtype=np.int8)
    s = 0.0
    for j, xj in enumerate(xs):
        s_next = s + float(xj)
        # integers k with s < k + tau <= s_next
        k_lo = math.floor(_snap(s - tau)) + 1
        k_hi = math.floor(_snap(s_next - tau))
        bits[j] = 1 if k_hi >= k_lo else 0
        s = s_next
    return bits


# ----------------------------------------------------------------------------
# exact output laws
# ----------------------------------------------------------------------------

@dataclass
class BitDistribution:
    """Explicit law over n-bit selection masks."""

    n: int
    probs: dict[int, float]

    def check(self, tol: float = 1e-12):
        total = sum(self.probs.values())
        if abs(total - 1.0) > max(tol, 1e-12):
            raise InvariantBreach(f"mask probabilities sum to {total}")
        if any(p < -tol for p in self.probs.values()):
            raise InvariantBreach("negative mask probability")

    def marginals(self) -> np.ndarray:
        m = np.zeros(self.n)
        for mask, p in self.probs.items():
            for i in range(self.n):
                if mask >> i & 1:
                    m[i] += p
        return m

    def expectation(self, fn) -> float:
        return sum(p * fn(mask) for mask, p in self.probs.items())

    def tv_distance(self, other: "BitDistribution") -> float:
        keys = set(self.probs) | set(other.probs)
        return 0.5 * sum(abs(self.probs.get(k, 0.0) - other.probs.get(k, 0.0)) for k in keys)

    def to_json_dict(self) -> dict[str, float]:
        return {format(mask, f"0{self.n}b"): p for mask, p in sorted(self.probs.items())}


MAX_EXACT_N = 20


def exact_dist_online(x) -> BitDistribution:
    """Exact output law of the online algorithm (path recursion over counts)."""
    xs, n = _pad_to_integer(x)
    if n > MAX_EXACT_N:
        raise SizeError(f"exact law limited to n <= {MAX_EXACT_N}")
    probs: dict[int, float] = {}
    m = len(xs)

    def rec(t: int, state: LevelSetState, mask: int, pr: float):
        if t == m:
            probs[mask] = probs.get(mask, 0.0) + pr
            return
        p = step_probability(state, float(xs[t]))
        for sel, branch_p in ((1, p), (0, 1.0 - p)):
            if branch_p <= 0.0:
                continue
            _, st = online_step(state, float(xs[t]), 0.0 if sel else 1.0)
            rec(t + 1, st, mask | (sel << t) if t < n else mask, pr * branch_p)

    rec(0, LevelSetState(), 0, 1.0)
    dist = BitDistribution(n, probs)
    dist.check()
    return dist


def exact_dist_offline(x) -> BitDistribution:
    """Exact output law of the offline merge (branch enumeration)."""
    xs, n = _pad_to_integer(x)
    if n > MAX_EXACT_N:
        raise SizeError(f"exact law limited to n <= {MAX_EXACT_N}")
    probs: dict[int, float] = {}

    def rec(y: np.ndarray, pr: float):
        frac = _fractional_indices(y)
        if not frac:
            mask = 0
            for i in range(n):
                if _snap(float(y[i])) >= 1.0:
                    mask |= 1 << i
            probs[mask] = probs.get(mask, 0.0) + pr
            return
        i1, i2 = frac[0], frac[1]
        for a, b, p in step_outcomes(float(y[i1]), float(y[i2])):
            if p <= 0.0:
                continue
            y2 = y.copy()
            y2[i1], y2[i2] = _snap(a), _snap(b)
            rec(y2, pr * p)

    rec(xs.copy(), 1.0)
    dist = BitDistribution(n, probs)
    dist.check(1e-9)
    return dist


def threshold_exact_dist(x) -> BitDistribution:
    """Exact law of threshold_round over a uniform threshold.

    The selection pattern is piecewise constant in tau with breakpoints at the
    fractional parts of the prefix sums.
    """
    xs = np.asarray(x, dtype=float)
    n = len(xs)
    if n > MAX_EXACT_N:
        raise SizeError(f"exact law limited to n <= {MAX_EXACT_N}")
    cuts = {0.0, 1.0}
    s = 0.0
    for xj in xs:
        s += float(xj)
        cuts.add(s - math.floor(s))
    pts = sorted(cuts)
    probs: dict[int, float] = {}
    for a, b in zip(pts, pts[1:]):
        tau = 0.5 * (a + b)
        bits = threshold_round(xs, tau)
        mask = int(sum(int(bit) << i for i, bit in enumerate(bits)))
        probs[mask] = probs.get(mask, 0.0) + (b - a)
    dist = BitDistribution(n, probs)
    dist.check(1e-9)
    return dist
