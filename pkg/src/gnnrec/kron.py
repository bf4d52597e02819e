"""Synthetic dataset expansion via Kronecker products.

Expanding a bipartite graph's biadjacency matrix with a small binary seed
block multiplies the user side by the block's row count, the item side by its
column count, and the edge count by the block's nonzero count.  An all-ones
k x k block therefore scales every vertex degree by k and preserves both the
density and the shape of the degree distribution, which is what makes the
expanded graphs useful stand-ins for large interaction datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import BipartiteGraph, GraphError


@dataclass
class SeedBlock:
    """Small binary factor matrix for the Kronecker product."""

    mask: np.ndarray = field()

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise GraphError("seed mask must be a 2-D matrix")
        mask = (mask != 0)
        if not mask.any():
            raise GraphError("seed mask must have at least one nonzero entry")
        self.mask = mask

    @property
    def rows(self):
        return self.mask.shape[0]

    @property
    def cols(self):
        return self.mask.shape[1]

    @property
    def nnz(self):
        return int(self.mask.sum())

    @property
    def density(self):
        return self.nnz / (self.rows * self.cols)

    @classmethod
    def all_ones(cls, k_u, k_i=None):
        """Default seed: the all-ones block (preserves density exactly)."""
        if k_i is None:
            k_i = k_u
        if k_u < 1 or k_i < 1:
            raise GraphError("seed dimensions must be >= 1")
        return cls(np.ones((k_u, k_i), dtype=bool))

    @classmethod
    def from_text(cls, path):
        """Read a dense 0/1 grid, one row per line, entries separated by spaces."""
        rows = []
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    rows.append([int(tok) for tok in line.split()])
                except ValueError:
                    raise GraphError(f"{path}:{lineno}: non-integer seed entry") from None
        if not rows or len({len(r) for r in rows}) != 1:
            raise GraphError(f"{path}: seed mask rows must be non-empty and equal length")
        return cls(np.array(rows))


class ExpansionTooLarge(GraphError):
    """Expansion refused: output would exceed the configured edge cap."""

    def __init__(self, required, cap):
        self.required_cap = required
        super().__init__(
            f"expansion would produce {required} edges, above the cap of {cap}; "
            f"raise max_edges to at least {required}")


def expanded_counts(g, seed):
    """(num_users, num_items, num_edges) of the expansion, without running it."""
    return (g.num_users * seed.rows, g.num_items * seed.cols,
            g.num_edges * seed.nnz)


def expand_edges(g, seed, block_edges=1_000_000):
    """Stream expanded (users, items) edge blocks in canonical Kronecker order.

    Input edge (u, i) and seed nonzero (a, b) produce output edge
    (u * k_u + a, i * k_i + b); blocks arrive ordered by input edge, then by
    seed nonzero in row-major order.
    """
    sa, sb = np.nonzero(seed.mask)
    sa = sa.astype(np.int64)
    sb = sb.astype(np.int64)
    k_u, k_i = seed.rows, seed.cols
    step = max(1, block_edges // max(1, seed.nnz))
    for start in range(0, g.num_edges, step):
        eu = g.edge_users[start:start + step]
        ei = g.edge_items[start:start + step]
        out_u = (eu[:, None] * k_u + sa[None, :]).ravel()
        out_i = (ei[:, None] * k_i + sb[None, :]).ravel()
        yield out_u, out_i


def expand(g, seed, max_edges=None, permute_seed=None):
    """Kronecker-expand ``g`` by ``seed`` into an in-memory graph.

    ``max_edges`` refuses oversized outputs up front; ``permute_seed`` applies
    a seeded random relabeling of the output vertices (degree-preserving, for
    realism; default is the deterministic canonical ordering).
    """
    nu, ni, ne = expanded_counts(g, seed)
    if max_edges is not None and ne > max_edges:
        raise ExpansionTooLarge(ne, max_edges)
    users = np.empty(ne, dtype=np.int64)
    items = np.empty(ne, dtype=np.int64)
    pos = 0
    for bu, bi in expand_edges(g, seed):
        users[pos:pos + bu.size] = bu
        items[pos:pos + bi.size] = bi
        pos += bu.size
    if permute_seed is not None:
        rng = np.random.default_rng(permute_seed)
        users = rng.permutation(nu)[users]
        items = rng.permutation(ni)[items]
    return BipartiteGraph(nu, ni, users, items, _skip_checks=permute_seed is None)


def expand_to_edge_list(g, seed, path, max_edges=None):
    """Stream the expansion straight to an edge-list file (constant memory)."""
    nu, ni, ne = expanded_counts(g, seed)
    if max_edges is not None and ne > max_edges:
        raise ExpansionTooLarge(ne, max_edges)
    with open(path, "w") as f:
        for bu, bi in expand_edges(g, seed):
            f.writelines(f"{u}\t{i}\n" for u, i in zip(bu.tolist(), bi.tolist()))
    return nu, ni, ne
