"""GNN recommender training engine on generalized SDDMM/SpMM kernels."""

__version__ = "0.1.0"

from .graph import BipartiteGraph, load_edge_list, split_train_test  # noqa: F401
