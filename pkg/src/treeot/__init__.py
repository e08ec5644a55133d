"""Entropic multi-marginal optimal transport on trees.

The public entry points are re-exported here; see the submodules for the
lower-level pieces.
"""

from importlib.metadata import PackageNotFoundError, version

from .graph import Tree, RootedTree, leaf_schedule, leaves, path_between, root_at, validate_tree
from .solver import TreeOTProblem, TreeOTSolution, extract_marginal, extract_plan, primal_objective, solve, summarize

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

__all__ = [
    "Tree",
    "RootedTree",
    "TreeOTProblem",
    "TreeOTSolution",
    "extract_marginal",
    "extract_plan",
    "leaf_schedule",
    "leaves",
    "path_between",
    "primal_objective",
    "root_at",
    "solve",
    "summarize",
    "validate_tree",
]
