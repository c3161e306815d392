"""Minimum transfer-with-replacement reconciliation and dated SPR scenarios."""
from .hardness import Cnf2Formula, assignment_to_proper, build_instance
from .normalize import is_normalized, normalize
from .oracle import certify, spr_distance_bfs
from .recon import Reconciliation, from_json, to_json, validate, weight
from .solver import solve, solve_with_stats
from .sprbridge import recon_to_scenario, scenario_to_recon, solve_spr
from .treemodel import DatedTree, parse_newick, serialize_newick, subdivide

__version__ = "0.1.0"

__all__ = [
    "Cnf2Formula",
    "DatedTree",
    "Reconciliation",
    "TransferReconciler",
    "assignment_to_proper",
    "build_instance",
    "certify",
    "from_json",
    "is_normalized",
    "normalize",
    "parse_newick",
    "recon_to_scenario",
    "scenario_to_recon",
    "serialize_newick",
    "solve",
    "solve_spr",
    "solve_with_stats",
    "spr_distance_bfs",
    "subdivide",
    "to_json",
    "validate",
    "weight",
]


def __getattr__(name):
    # sklearn is slow to import; only load it when the estimator is asked for
    if name == "TransferReconciler":
        from .estimator import TransferReconciler

        return TransferReconciler
    raise AttributeError(f"module 'trrecon' has no attribute {name!r}")
