"""odrs-lab: online dependent rounding schemes for bipartite b-matching,
with exact small-instance verification and a Monte Carlo bench."""

__version__ = "0.1.0"
