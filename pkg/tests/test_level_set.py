import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from odrs_lab import level_set as ls
from odrs_lab.errors import SizeError
from odrs_lab.exact_engine import neg_cylinder_check


def test_online_step_forced_cases():
    # fresh unit with x = 1 must select
    assert ls.step_probability(ls.LevelSetState(0.0, 0), 1.0) == 1.0
    # count at ceiling blocks
    assert ls.step_probability(ls.LevelSetState(0.5, 1), 0.3) == 0.0


def test_online_step_case3_hand_value():
    # s=1.25, count=1, x=0.5: p = 0.5 / (1 + 1 - 1.25) = 2/3
    p = ls.step_probability(ls.LevelSetState(1.25, 1), 0.5)
    assert abs(p - 2.0 / 3.0) < 1e-15


def test_half_half_always_exactly_one():
    seen = set()
    for seed in range(200):
        bits = ls.online_round([0.5, 0.5], seed=seed)
        assert bits.sum() == 1
        seen.add(tuple(bits))
    assert seen == {(1, 0), (0, 1)}


def test_integral_inputs_are_fixed_points():
    for x in ([1, 0, 1], [0, 0], [1, 1, 1, 0]):
        bits = ls.online_round(x, seed=5)
        assert list(bits) == x


def test_online_marginal_monte_carlo():
    x = [0.5, 0.25, 0.75, 0.5]
    bits = ls.online_round_batch(x, 1_000_000, seed=9)
    freq = bits.mean(axis=0)
    assert np.all(np.abs(freq - x) < 0.002)


def test_prefix_counts_within_floor_ceil_over_large_battery():
    # the batch runner asserts P2 internally at every step
    ls.online_round_batch([0.5, 0.5, 0.5, 0.5], 1_000_000, seed=1)
    ls.online_round_batch([0.3, 0.9, 0.45, 0.2, 0.15], 1_000_000, seed=2)


def test_step_pair_probabilities():
    outs = ls.step_outcomes(0.3, 0.4)
    assert outs[0][:2] == (0.7, 0.0) and abs(outs[0][2] - 3 / 7) < 1e-15
    assert outs[1][:2] == (0.0, 0.7) and abs(outs[1][2] - 4 / 7) < 1e-15
    outs = ls.step_outcomes(0.6, 0.7)
    assert outs[0][:2] == (1.0, 0.3 - 2.220446049250313e-16) or abs(outs[0][0] - 1.0) < 1e-15
    assert abs(outs[0][2] - 3 / 7) < 1e-12 and abs(outs[1][2] - 4 / 7) < 1e-12
    # zero first coordinate: always the second outcome
    assert ls.step_pair(0.0, 0.5, 0.99) == (0.0, 0.5)
    assert ls.step_pair(0.0, 0.0, 0.3) == (0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(hst.floats(0, 1), hst.floats(0, 1), hst.floats(0, 0.999999))
def test_step_pair_preserves_sum_and_reduces_fractionals(a, b, u):
    a2, b2 = ls.step_pair(a, b, u)
    assert abs((a2 + b2) - (a + b)) < 1e-12
    def nfrac(*vals):
        return sum(1 for v in vals if 1e-12 < v < 1 - 1e-12)
    if nfrac(a, b) == 2:
        assert nfrac(a2, b2) < 2


def test_offline_fixed_point_and_half_half():
    assert list(ls.offline_pivotal([0, 1, 0], seed=3)) == [0, 1, 0]
    seen = {tuple(ls.offline_pivotal([0.5, 0.5], seed=s)) for s in range(100)}
    assert seen == {(1, 0), (0, 1)}


def test_coupling_online_equals_offline():
    for x in ([0.3, 0.3, 0.4], [0.25] * 4, [0.9, 0.1, 0.35, 0.65]):
        tv = ls.exact_dist_online(x).tv_distance(ls.exact_dist_offline(x))
        assert tv < 1e-9


def test_threshold_round_examples():
    assert list(ls.threshold_round([0.5] * 4, 0.3)) == [1, 0, 1, 0]
    assert list(ls.threshold_round([1, 0, 1], 0.77)) == [1, 0, 1]
    d = ls.threshold_exact_dist([0.5] * 4)
    m = d.marginals()
    assert np.allclose(m, 0.5, atol=1e-12)
    cov02 = d.expectation(lambda mk: (mk & 1) * (mk >> 2 & 1)) - m[0] * m[2]
    assert abs(cov02 - 0.25) < 1e-12  # positive correlation: P3 fails


def test_exact_dist_examples():
    d = ls.exact_dist_online([0.5, 0.5])
    assert abs(d.probs[0b01] - 0.5) < 1e-15 and abs(d.probs[0b10] - 0.5) < 1e-15
    d4 = ls.exact_dist_online([0.25] * 4)
    off4 = ls.exact_dist_offline([0.25] * 4)
    assert d4.tv_distance(off4) < 1e-9
    for i in range(4):
        assert abs(d4.probs[1 << i] - 0.25) < 1e-12
    # integral sum n: point mass on all ones
    dp = ls.exact_dist_online([1.0, 1.0, 1.0])
    assert dp.probs == {0b111: 1.0}


def test_exact_size_cap():
    with pytest.raises(SizeError):
        ls.exact_dist_online([0.5] * 21)


def test_marginals_exact_to_1e12():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(2, 11))
        x = rng.random(n)
        d = ls.exact_dist_online(x)
        assert np.max(np.abs(d.marginals() - x)) < 1e-12


def test_q_t_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        x = rng.random(n)
        d = ls.exact_dist_online(x)
        s = 0.0
        for t in range(n):
            s += x[t]
            fl = math.floor(s)
            if abs(s - round(s)) < 1e-9:
                continue
            q = d.expectation(
                lambda mk, t=t, fl=fl: 1.0 if bin(mk & ((1 << (t + 1)) - 1)).count("1") == fl else 0.0)
            assert abs(q - (fl + 1 - s)) < 1e-12


def test_na_consequences_on_exact_law():
    rng = np.random.default_rng(2)
    for _ in range(15):
        n = int(rng.integers(2, 7))
        x = rng.random(n)
        d = ls.exact_dist_online(x)
        m = d.marginals()
        # pairwise covariance nonpositive
        for i in range(n):
            for j in range(i + 1, n):
                pij = d.expectation(lambda mk, i=i, j=j: (mk >> i & 1) * (mk >> j & 1))
                assert pij - m[i] * m[j] <= 1e-12
        # negative cylinders, both directions
        assert neg_cylinder_check(d, "ones").worst_violation <= 1e-12
        assert neg_cylinder_check(d, "zeros").worst_violation <= 1e-12


def test_dummy_padding_strips_tail():
    bits = ls.online_round([0.3, 0.4], seed=4)
    assert len(bits) == 2
    d = ls.exact_dist_online([0.3, 0.4])
    assert abs(sum(d.probs.values()) - 1.0) < 1e-12
    assert np.allclose(d.marginals(), [0.3, 0.4], atol=1e-12)


def test_bit_distribution_json_export():
    d = ls.exact_dist_online([0.5, 0.5])
    doc = d.to_json_dict()
    assert set(doc) == {"01", "10"}
    assert abs(doc["01"] - 0.5) < 1e-15


def test_accumulation_dust_near_integer_prefixes():
    # repeated tenths/thirds land within float dust of integers; snapping must
    # keep the case analysis and the prefix invariant intact
    for x in ([0.1] * 30, [1 / 3] * 9, [0.2, 0.3, 0.5] * 4):
        ls.online_round_batch(x, 50_000, seed=3)
        d = ls.exact_dist_online(x[:10])
        assert np.max(np.abs(d.marginals() - np.asarray(x[:10]))) < 1e-9
