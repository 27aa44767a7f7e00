"""From-scratch random forest: bagged CART trees with Gini splits.

The split search runs on a compiled scan when the extension built, with a
numpy fallback otherwise; see `splitter.backend_name()` for which is active.
"""

from .model import (
    DecisionTree,
    ForestModel,
    TreeParams,
    fit_forest,
    fit_tree,
    load_forest,
    predict,
    predict_tree,
    save_forest,
)
from .splitter import available_backends, backend_name, get_kernel

__all__ = [
    "DecisionTree",
    "ForestModel",
    "TreeParams",
    "available_backends",
    "backend_name",
    "fit_forest",
    "fit_tree",
    "get_kernel",
    "load_forest",
    "predict",
    "predict_tree",
    "save_forest",
]
