"""Attention-based GNN aggregation with cardinality preservation."""

__version__ = "0.1.0"

VARIANTS = ("original", "additive", "scaled", "f_additive", "f_scaled")
CPA_VARIANTS = VARIANTS[1:]
