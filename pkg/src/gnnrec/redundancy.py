"""Analytical study of subgraph-training redundancy and feasible batch sizes.

Distributed subgraph training gives every worker the L-hop reverse
neighborhood of its batch targets; neighborhoods of different workers
overlap, so the summed per-worker footprint exceeds the footprint of their
union.  This module measures that overhead exactly on desk-scale graphs by
breadth-first expansion, and binary-searches the largest batch whose
per-worker footprint fits a memory budget.

Vertices use a single global id space: users are [0, |U|), items are
[|U|, |U|+|I|).  Neighbor sampling draws each vertex's kept-neighbor set
deterministically from (seed, vertex id), i.e. the sampled adjacency is
fixed once per seed; expansion is then plain BFS over it, which keeps the
containment properties (deeper or unsampled footprints contain shallower or
sampled ones) exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import memory_footprint_estimate


@dataclass
class SubgraphFootprint:
    targets: tuple
    num_layers: int
    sampling_factor: float   # inf = no sampling
    vertices: int
    edges: int
    estimated_bytes: int


@dataclass
class RedundancyReport:
    footprints: list[SubgraphFootprint]
    ratio_vertices: float
    ratio_edges: float


def item_vertex(g, item_id):
    return g.num_users + item_id


def _as_seed(rng):
    if rng is None:
        return 0
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**31))


def _neighbors(g, v):
    """Global-id neighbors of a global-id vertex (users <-> items)."""
    if v < g.num_users:
        start, end = g.u2i_indptr[v], g.u2i_indptr[v + 1]
        return g.u2i_indices[start:end] + g.num_users
    i = v - g.num_users
    start, end = g.i2u_indptr[i], g.i2u_indptr[i + 1]
    return g.i2u_indices[start:end]


def _kept_neighbors(g, v, sampling_factor, seed):
    nbrs = _neighbors(g, v)
    if np.isfinite(sampling_factor) and nbrs.size > sampling_factor:
        r = np.random.default_rng([seed, v])
        keep = np.sort(r.choice(nbrs.size, size=int(sampling_factor),
                                replace=False))
        nbrs = nbrs[keep]
    return nbrs


def _footprint_sets(g, targets, num_layers, sampling_factor, seed):
    """(vertex set, edge set) of the L-hop reverse BFS expansion."""
    visited = set(int(t) for t in targets)
    edges = set()
    frontier = set(visited)
    for _ in range(num_layers):
        nxt = set()
        for v in sorted(frontier):
            for w in _kept_neighbors(g, v, sampling_factor, seed).tolist():
                edges.add((v, w) if v < w else (w, v))
                if w not in visited:
                    visited.add(w)
                    nxt.add(w)
        frontier = nxt
    return visited, edges


def subgraph_footprint(g, targets, num_layers, sampling_factor=np.inf,
                       rng=None, model_dim=128, bytes_per_element=4):
    """Exact L-hop reverse-reachable vertex/edge counts from the targets,
    with memory estimated by the same formula the engine uses for full
    graphs applied to the subgraph."""
    total = g.num_users + g.num_items
    targets = tuple(int(t) for t in targets)
    for t in targets:
        if not 0 <= t < total:
            raise ValueError(f"target {t} outside the vertex id space [0, {total})")
    seed = _as_seed(rng)
    verts, edges = _footprint_sets(g, targets, num_layers, sampling_factor, seed)
    est = memory_footprint_estimate(len(verts), len(edges), num_layers,
                                    model_dim, training=True,
                                    bytes_per_element=bytes_per_element)
    return SubgraphFootprint(targets=targets, num_layers=num_layers,
                             sampling_factor=float(sampling_factor),
                             vertices=len(verts), edges=len(edges),
                             estimated_bytes=est)


def redundancy_from_groups(g, target_groups, num_layers,
                           sampling_factor=np.inf, rng=None, model_dim=128):
    """Redundancy of explicit per-worker target groups: summed per-worker
    footprints divided by the footprint of their union (>= 1, equality iff
    the worker subgraphs do not overlap)."""
    seed = _as_seed(rng)
    footprints = []
    vertex_union = set()
    edge_union = set()
    sum_v = sum_e = 0
    for targets in target_groups:
        verts, edges = _footprint_sets(g, targets, num_layers,
                                       sampling_factor, seed)
        est = memory_footprint_estimate(len(verts), len(edges), num_layers,
                                        model_dim, training=True)
        footprints.append(SubgraphFootprint(
            targets=tuple(int(t) for t in targets), num_layers=num_layers,
            sampling_factor=float(sampling_factor), vertices=len(verts),
            edges=len(edges), estimated_bytes=est))
        vertex_union |= verts
        edge_union |= edges
        sum_v += len(verts)
        sum_e += len(edges)
    ratio_v = sum_v / max(len(vertex_union), 1)
    ratio_e = sum_e / len(edge_union) if edge_union else 1.0
    return RedundancyReport(footprints=footprints, ratio_vertices=ratio_v,
                            ratio_edges=ratio_e)


def _worker_targets(g, perm, batch, num_workers, worker):
    """Strided round-robin split so larger batches extend, never reshuffle,
    each worker's target list (keeps feasibility monotone in the batch)."""
    count = batch // num_workers + (1 if worker < batch % num_workers else 0)
    edge_ids = perm[worker::num_workers][:count]
    users = g.edge_users[edge_ids]
    items = g.edge_items[edge_ids] + g.num_users
    return np.unique(np.concatenate([users, items]))


def batch_redundancy(g, batch_size, num_workers, num_layers,
                     sampling_factor=np.inf, rng=None, model_dim=128):
    """Sample batch_size*num_workers target edges (the BPR tuples), give each
    worker its share (the edge endpoints become its subgraph roots), and
    measure footprint redundancy across workers."""
    seed = _as_seed(rng)
    total = batch_size * num_workers
    if total > g.num_edges:
        raise ValueError(f"batch {batch_size} x {num_workers} workers needs "
                         f"{total} target edges, graph has {g.num_edges}")
    perm = np.random.default_rng(seed).permutation(g.num_edges)
    groups = [_worker_targets(g, perm, total, num_workers, w)
              for w in range(num_workers)]
    return redundancy_from_groups(g, groups, num_layers, sampling_factor,
                                  seed, model_dim)


def max_batch_under_budget(g, model_config, budget_bytes, num_workers,
                           sampling_factor=np.inf, seed=0,
                           bytes_per_element=4):
    """Largest aggregate batch size whose every per-worker footprint fits in
    budget_bytes / num_workers; 0 when even one target edge per worker does
    not fit (the out-of-memory-at-batch-one case).

    Workers draw nested target prefixes from one seeded permutation and the
    sampled adjacency is fixed by the seed, so feasibility is monotone in
    the batch size and binary search applies.
    """
    if budget_bytes <= 0:
        raise ValueError("budget must be positive")
    perm = np.random.default_rng(seed).permutation(g.num_edges)
    per_worker_budget = budget_bytes / num_workers

    def feasible(batch):
        for w in range(num_workers):
            targets = _worker_targets(g, perm, batch, num_workers, w)
            if targets.size == 0:
                continue
            verts, edges = _footprint_sets(g, targets,
                                           model_config.num_layers,
                                           sampling_factor, seed)
            est = memory_footprint_estimate(
                len(verts), len(edges), model_config.num_layers,
                model_config.embed_dim, training=True,
                bytes_per_element=bytes_per_element)
            if est > per_worker_budget:
                return False
        return True

    if not feasible(num_workers):
        return 0
    lo, hi = num_workers, g.num_edges
    if feasible(hi):
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def report_csv_row(workers, batch, num_layers, sampling_factor, report,
                   max_batch):
    s = "inf" if np.isinf(sampling_factor) else str(int(sampling_factor))
    return (f"{workers},{batch},{num_layers},{s},"
            f"{report.ratio_vertices:.4f},{report.ratio_edges:.4f},{max_batch}")
