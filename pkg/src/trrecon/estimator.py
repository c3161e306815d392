"""Estimator-style wrapper around the solver."""
from __future__ import annotations

from typing import Mapping

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .recon import Reconciliation, to_json, weight
from .solver import solve_with_stats
from .sprbridge import SprScenario, recon_to_scenario
from .treemodel import DatedTree, parse_newick


def _as_tree(tree: DatedTree | str, kind: str) -> DatedTree:
    return parse_newick(tree, kind=kind) if isinstance(tree, str) else tree


class TransferReconciler(BaseEstimator):
    """Minimum transfer-with-replacement reconciliation within a budget.

    ``fit(species, gene)`` takes trees or Newick strings. When no
    reconciliation of weight at most ``k`` exists, ``reconciliation_`` and
    ``weight_`` are None after fitting.
    """

    def __init__(self, k: int = 5, seed: int = 0):
        self.k = k
        self.seed = seed

    def fit(self, species, gene, phi: Mapping[str, str] | None = None):
        species = _as_tree(species, "species")
        gene = _as_tree(gene, "gene")
        r, stats = solve_with_stats(gene, species, phi, self.k, self.seed)
        self.reconciliation_: Reconciliation | None = r
        self.weight_ = None if r is None else int(weight(r))
        self.branch_nodes_ = stats.branch_nodes
        return self

    def scenario(self) -> SprScenario | None:
        check_is_fitted(self, "branch_nodes_")
        if self.reconciliation_ is None:
            return None
        return recon_to_scenario(self.reconciliation_)

    def to_json(self) -> dict | None:
        check_is_fitted(self, "branch_nodes_")
        return None if self.reconciliation_ is None else to_json(self.reconciliation_)
