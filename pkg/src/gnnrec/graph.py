"""User-item bipartite interaction graphs.

A graph is stored as a deduplicated edge set in canonical order (sorted by
(user, item)) together with both compressed adjacency directions:
``u2i`` groups edges by user, ``i2u`` groups them by item.  The ``i2u``
direction additionally carries, for every entry, the position of that edge
in canonical order so per-edge value matrices can be consumed from either
direction without reshuffling.

Graphs are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_CACHE_MAGIC = b"BGC1"
_CACHE_VERSION = 1


class GraphError(Exception):
    """Raised for malformed inputs or inconsistent graph structure."""


@dataclass(frozen=True)
class GraphView:
    """One aggregation direction of a bipartite graph.

    Rows are destination vertices; ``indices`` hold the source vertex of each
    incident edge and ``edge_ids`` its position in canonical edge order
    (``None`` means the identity mapping).  ``num_edges`` is the size of the
    canonical edge space the ids refer to (a sampled view's entries are a
    subset of it).
    """

    indptr: np.ndarray
    indices: np.ndarray
    edge_ids: np.ndarray | None
    num_rows: int
    num_src: int
    num_edges: int


class BipartiteGraph:
    """Immutable user-item interaction graph with both CSR directions."""

    def __init__(self, num_users, num_items, edge_users, edge_items,
                 user_ids=None, item_ids=None, _skip_checks=False):
        edge_users = np.ascontiguousarray(edge_users, dtype=np.int64)
        edge_items = np.ascontiguousarray(edge_items, dtype=np.int64)
        if not _skip_checks:
            if edge_users.shape != edge_items.shape or edge_users.ndim != 1:
                raise GraphError("edge arrays must be parallel 1-D arrays")
            if edge_users.size and (edge_users.min() < 0 or edge_users.max() >= num_users):
                raise GraphError("user id out of range")
            if edge_items.size and (edge_items.min() < 0 or edge_items.max() >= num_items):
                raise GraphError("item id out of range")
            edge_users, edge_items = _canonicalize(edge_users, edge_items)
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.edge_users = edge_users
        self.edge_items = edge_items
        self.user_ids = user_ids  # original id per dense user index, or None
        self.item_ids = item_ids
        self.u2i_indptr = _indptr_from_sorted(edge_users, self.num_users)
        self.u2i_indices = edge_items
        perm = np.lexsort((edge_users, edge_items)).astype(np.int64)
        self.i2u_edge_ids = perm
        self.i2u_indices = edge_users[perm]
        self.i2u_indptr = _indptr_from_sorted(edge_items[perm], self.num_items)

    @property
    def num_edges(self):
        return int(self.edge_users.size)

    @property
    def edges(self):
        """Edge set as an (E, 2) array of (user, item) pairs in canonical order."""
        return np.stack([self.edge_users, self.edge_items], axis=1)

    @property
    def density(self):
        return self.num_edges / (self.num_users * self.num_items)

    def view(self, target):
        """Aggregation view whose destination side is ``target`` ('user'|'item')."""
        if target == "item":
            return GraphView(self.i2u_indptr, self.i2u_indices, self.i2u_edge_ids,
                             self.num_items, self.num_users, self.num_edges)
        if target == "user":
            return GraphView(self.u2i_indptr, self.u2i_indices, None,
                             self.num_users, self.num_items, self.num_edges)
        raise ValueError(f"unknown target side: {target!r}")

    def degrees(self, side):
        if side == "user":
            return np.diff(self.u2i_indptr)
        if side == "item":
            return np.diff(self.i2u_indptr)
        raise ValueError(f"unknown side: {side!r}")

    def has_edge_set(self):
        """Edge set as a Python set of (user, item) tuples (desk-scale only)."""
        return set(zip(self.edge_users.tolist(), self.edge_items.tolist()))

    def validate(self):
        """Check structural invariants; raises GraphError on violation."""
        if self.num_edges == 0:
            raise GraphError("graph has no edges")
        for indptr, n, count in ((self.u2i_indptr, self.num_users, "u2i"),
                                 (self.i2u_indptr, self.num_items, "i2u")):
            if indptr.size != n + 1 or indptr[0] != 0 or indptr[-1] != self.num_edges:
                raise GraphError(f"{count} row pointers inconsistent")
            if np.any(np.diff(indptr) < 0):
                raise GraphError(f"{count} row pointers decrease")
        pairs = self.edges
        if np.unique(pairs, axis=0).shape[0] != self.num_edges:
            raise GraphError("duplicate edges present")
        # transposed i2u must reproduce the canonical edge set
        ti = self.i2u_indices  # users, grouped by item
        titem = np.repeat(np.arange(self.num_items, dtype=np.int64),
                          np.diff(self.i2u_indptr))
        order = np.lexsort((titem, ti))
        if not (np.array_equal(ti[order], self.edge_users)
                and np.array_equal(titem[order], self.edge_items)):
            raise GraphError("i2u direction is not the transpose of u2i")
        return self

    def save(self, path):
        """Write the binary graph cache (little-endian fixed-width header + arrays)."""
        with open(path, "wb") as f:
            f.write(_CACHE_MAGIC)
            f.write(struct.pack("<I", _CACHE_VERSION))
            f.write(struct.pack("<QQQ", self.num_users, self.num_items, self.num_edges))
            f.write(self.u2i_indptr.astype("<i8").tobytes())
            f.write(self.u2i_indices.astype("<i8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _CACHE_MAGIC:
                raise GraphError(f"{path}: not a graph cache (bad magic {magic!r})")
            (version,) = struct.unpack("<I", f.read(4))
            if version != _CACHE_VERSION:
                raise GraphError(f"{path}: unsupported cache version {version}")
            num_users, num_items, num_edges = struct.unpack("<QQQ", f.read(24))
            indptr = np.frombuffer(f.read(8 * (num_users + 1)), dtype="<i8")
            indices = np.frombuffer(f.read(8 * num_edges), dtype="<i8")
        if indptr.size != num_users + 1 or indices.size != num_edges:
            raise GraphError(f"{path}: truncated graph cache")
        edge_users = np.repeat(np.arange(num_users, dtype=np.int64), np.diff(indptr))
        return cls(num_users, num_items, edge_users, indices.astype(np.int64),
                   _skip_checks=True)


def _canonicalize(users, items):
    """Sort edges by (user, item) and drop duplicates."""
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    if users.size:
        keep = np.empty(users.size, dtype=bool)
        keep[0] = True
        keep[1:] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
        users, items = users[keep], items[keep]
    return users, items


def _indptr_from_sorted(sorted_rows, num_rows):
    counts = np.bincount(sorted_rows, minlength=num_rows)
    indptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr


def from_edges(users, items, num_users=None, num_items=None, compact_ids=False):
    """Build a graph from parallel id arrays, deduplicating edges.

    Counts default to 1 + max observed id per side.  With ``compact_ids`` the
    observed ids are remapped to dense 0-based ranges (in sorted id order) and
    the original ids are kept on ``user_ids`` / ``item_ids``.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size == 0:
        raise GraphError("empty edge set")
    user_ids = item_ids = None
    if compact_ids:
        user_ids, users = np.unique(users, return_inverse=True)
        item_ids, items = np.unique(items, return_inverse=True)
        users = users.astype(np.int64)
        items = items.astype(np.int64)
        num_users, num_items = user_ids.size, item_ids.size
    else:
        if num_users is None:
            num_users = int(users.max()) + 1
        if num_items is None:
            num_items = int(items.max()) + 1
    return BipartiteGraph(num_users, num_items, users, items,
                          user_ids=user_ids, item_ids=item_ids)


def load_edge_list(path, format="auto", num_users=None, num_items=None,
                   compact_ids=False):
    """Load a whitespace/tab-separated edge list of ``user item [extra...]`` lines.

    Lines starting with '#' or '%' are comments; extra columns (ratings,
    timestamps) are ignored.  Duplicate interactions are deduplicated.
    """
    if format not in ("auto", "tsv", "whitespace"):
        raise GraphError(f"unknown edge-list format: {format!r}")
    sep = "\t" if format == "tsv" else None
    users, items = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line[0] in "#%":
                continue
            parts = line.split(sep)
            if len(parts) < 2:
                raise GraphError(f"{path}:{lineno}: expected 'user item', got {line!r}")
            try:
                u, i = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-integer id in {line!r}") from None
            if u < 0 or i < 0:
                raise GraphError(f"{path}:{lineno}: negative id in {line!r}")
            users.append(u)
            items.append(i)
    if not users:
        raise GraphError(f"{path}: empty edge set")
    return from_edges(users, items, num_users=num_users, num_items=num_items,
                      compact_ids=compact_ids)


def save_edge_list(g, path):
    with open(path, "w") as f:
        for u, i in zip(g.edge_users.tolist(), g.edge_items.tolist()):
            f.write(f"{u}\t{i}\n")


def split_train_test(g, train_fraction, seed):
    """Split edges into disjoint train/test graphs covering the full edge set.

    |train| = round(train_fraction * |E|); vertex counts are unchanged, so a
    split graph may contain isolated vertices.  Deterministic given the seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise GraphError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = g.num_edges
    n_train = int(round(train_fraction * n))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    make = lambda idx: BipartiteGraph(
        g.num_users, g.num_items, g.edge_users[idx], g.edge_items[idx],
        user_ids=g.user_ids, item_ids=g.item_ids, _skip_checks=True)
    return make(train_idx), make(test_idx)


@dataclass
class DegreeHistogram:
    """Exact degree -> vertex count map for one side of a graph."""

    side: str
    buckets: dict[int, int]

    def total_vertices(self):
        return sum(self.buckets.values())

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("degree,count\n")
            for degree in sorted(self.buckets):
                f.write(f"{degree},{self.buckets[degree]}\n")


def degree_histogram(g, side):
    degs = g.degrees(side)
    values, counts = np.unique(degs, return_counts=True)
    return DegreeHistogram(side=side,
                           buckets={int(v): int(c) for v, c in zip(values, counts)})


def loglog_slope(hist):
    """Least-squares slope of log(count) against log(degree), zero degrees skipped.

    The slope of a power-law degree distribution; preserved by uniform degree
    scaling since that only shifts both log axes.
    """
    pairs = [(d, c) for d, c in hist.buckets.items() if d > 0 and c > 0]
    if len(pairs) < 2:
        raise GraphError("need at least two distinct positive degrees for a slope")
    x = np.log(np.array([p[0] for p in pairs], dtype=np.float64))
    y = np.log(np.array([p[1] for p in pairs], dtype=np.float64))
    x -= x.mean()
    return float((x * y).sum() / (x * x).sum())


_MAX_BYTES = 2**63 - 1


def memory_footprint_estimate(num_vertices, num_edges, num_layers, embed_dim,
                              training=False, bytes_per_element=4,
                              reuse_sddmm=False):
    """Estimate buffer bytes for message passing: per layer one per-edge message
    buffer (d*|E|) plus aggregation and updated-embedding buffers (2*d*|V|).

    Training doubles every buffer (activations kept for gradients).  With
    ``reuse_sddmm`` the per-edge buffer is counted once even when training
    (the gradient pass reuses the stored forward messages).  Pure arithmetic;
    nothing is allocated.
    """
    if num_vertices < 0 or num_edges < 0 or num_layers < 0 or embed_dim < 0:
        raise ValueError("dimensions must be non-negative")
    if bytes_per_element <= 0:
        raise ValueError("bytes_per_element must be positive")
    edge_term = embed_dim * num_edges
    vertex_term = 2 * embed_dim * num_vertices
    total = bytes_per_element * num_layers * (edge_term + vertex_term)
    if training:
        total *= 2
        if reuse_sddmm:
            total -= bytes_per_element * num_layers * edge_term
    if total > _MAX_BYTES:
        raise OverflowError(f"byte count {total} exceeds 2**63-1")
    return int(total)
