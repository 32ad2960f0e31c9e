import math

import numpy as np
import pytest

from odrs_lab import apps, instances
from odrs_lab.instances import CoverInstance, MultigraphInstance


def test_single_pair_full_multiplicity():
    # kappa(e) = delta on a single pair: x = 1, always matched; every copy
    # colored, one color per copy
    mg = MultigraphInstance(1, 1, 4, (((0, 4),),))
    col = apps.edge_color_online(mg, C=4, seed=0)
    rep = apps.verify_coloring(mg, col)
    assert rep.proper and rep.all_colored
    assert rep.colors_used >= 4


def test_matching_multigraph_one_color_from_greedy():
    # delta = 1 multigraph is a matching
    mg = MultigraphInstance(3, 3, 1, (((0, 1),), ((1, 1),), ((2, 1),)))
    col = apps.edge_color_online(mg, C=1, seed=0)
    rep = apps.verify_coloring(mg, col)
    assert rep.proper and rep.all_colored


def test_coloring_proper_on_random_multigraphs():
    for seed in range(5):
        mg = instances.gen_random_multigraph(10, 10, 16, seed=seed)
        col = apps.edge_color_online(mg, C=8, seed=seed)
        rep = apps.verify_coloring(mg, col)
        assert rep.proper and rep.all_colored, rep.violations[:3]
        assert rep.colors_used <= 2 * mg.delta - 1  # greedy-style hard ceiling


def test_verify_coloring_detects_duplicates_and_gaps():
    mg = MultigraphInstance(1, 2, 2, (((0, 1), (1, 1)),))
    bad = apps.EdgeColoring({(0, 0, 0): 1, (0, 1, 0): 1})
    rep = apps.verify_coloring(mg, bad)
    assert not rep.proper
    partial = apps.EdgeColoring({(0, 0, 0): 0})
    rep2 = apps.verify_coloring(mg, partial)
    assert not rep2.all_colored


def test_fair_matching_marginal_lower_bound():
    # every copy should be colored across many runs at rate >= 1/(alpha*delta)
    # per matcher round; aggregate proxy: each edge's first copy gets some color
    mg = instances.gen_random_multigraph(6, 6, 8, seed=2)
    col = apps.edge_color_online(mg, C=4, seed=3)
    rep = apps.verify_coloring(mg, col)
    assert rep.proper and rep.all_colored


def test_cover_alpha_values():
    cov1 = CoverInstance(1, 2, ((1.0, 1.0),), (((0, 1), 1),), ((0.5,), (0.5,)))
    assert apps.cover_alpha(cov1) == 2.0  # d=2, t=1
    cov2 = CoverInstance(1, 3, ((1.0, 1.0, 1.0),), (((0, 1, 2), 3),), ((1.0,), (1.0,), (1.0,)))
    assert apps.cover_alpha(cov2) == pytest.approx(5 / 3)  # d=3, t=3


def test_cover_rounding_always_covers():
    cov = instances.gen_random_cover(10, 10, d=3, t=2, k=3, seed=5)
    for seed in range(200):
        sol = apps.round_multistage_cover(cov, seed=seed)
        rep = apps.verify_cover(cov, sol)
        assert rep.covered, rep.violations


def test_cover_integral_xstar_scaled_coverage():
    cov = CoverInstance(2, 2, ((1.0, 1.0), (1.0, 1.0)),
                        (((0, 1), 2),),
                        ((1.0, 0.0), (0.0, 1.0)))
    sol = apps.round_multistage_cover(cov, seed=1)
    assert apps.verify_cover(cov, sol).covered


def test_cover_cost_ratio_near_alpha():
    cov = instances.gen_random_cover(10, 10, d=3, t=2, k=3, seed=6)
    rep = apps.cover_trials(cov, 30_000, seed=7)
    assert rep["violations"] == 0
    assert abs(rep["cost_ratio"] - rep["alpha"]) < 0.02 * rep["alpha"]


def test_cover_trials_matches_single_runs():
    cov = instances.gen_random_cover(6, 6, d=3, t=2, k=3, seed=8)
    mc = apps.cover_trials(cov, 20_000, seed=9)
    costs = [apps.round_multistage_cover(cov, seed=s).cost for s in range(600)]
    z = abs(np.mean(costs) - mc["mean_cost"]) / (np.std(costs) / math.sqrt(len(costs)))
    assert z < 5


def test_fair_matcher_exact_marginals(matching_params):
    from odrs_lab import exact_engine as engine, odrs
    mg = instances.gen_random_multigraph(4, 4, 6, seed=1)
    inst = apps.multigraph_to_instance(mg)
    probs = engine.edge_match_probs(inst, matching_params, "odrs")
    for t, arr in enumerate(mg.arrivals):
        for j, kappa in arr:
            assert probs.get((j, t), 0.0) >= 0.652 * kappa / mg.delta - 1e-9
    fm = apps.fair_matcher(mg, "odrs", matching_params)
    triples = fm.sample(3)
    seen_left = [t for t, _, _ in triples]
    assert len(seen_left) == len(set(seen_left))  # a matching


def test_fair_matcher_degree_violation():
    import pytest as _pytest
    mg = instances.gen_random_multigraph(4, 4, 6, seed=2)
    with _pytest.raises(Exception, match="max degree"):
        apps.multigraph_to_instance(mg, delta_bound=1)


def test_fair_matcher_warmup_marginal_floor():
    import math as _math
    from odrs_lab import exact_engine as engine
    mg = instances.gen_random_multigraph(5, 5, 8, seed=4)
    inst = apps.multigraph_to_instance(mg)
    probs = engine.edge_match_probs(inst, None, "warmup")
    for t, arr in enumerate(mg.arrivals):
        for j, kappa in arr:
            assert probs.get((j, t), 0.0) >= (1 - 1 / _math.e) * kappa / mg.delta - 1e-9
