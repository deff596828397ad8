"""Quantile-risk experience replay for continual learning.

A replay-based continual learner that augments the usual memory loss with
a Gaussian-estimated upper quantile of per-batch risks, trading off
memorization of past environments against generalization to unseen ones.
Ships a rotated-digits benchmark harness, a reservoir memory, and a small
synthetic-environment lab for validating the memorization/generalization
tradeoff at desk scale.
"""

__version__ = "0.1.0"
