"""Mutation-trajectory modeling over phylogenetic trees.

Pipeline: parse mutation-annotated trees, refine variant definitions,
tokenize trajectories into a fixed vocabulary, weight and sample sequences
against geographic/temporal imbalance, train a small decoder-only
transformer, and evaluate ranked next-mutation predictions against
estimator-table baselines.
"""

__version__ = "0.1.0"
