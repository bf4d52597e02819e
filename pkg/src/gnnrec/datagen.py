"""Seeded synthetic user-item interaction graphs.

Generates desk-scale stand-ins for public interaction datasets: Zipf user
activity and item popularity give the power-law degree shape real graphs
have, and a block structure (users prefer items of their own cluster) gives
the collaborative signal a recommender can actually learn.
"""

from __future__ import annotations

import numpy as np

from .graph import BipartiteGraph


def powerlaw_bipartite(num_users, num_items, num_edges, zipf_exponent=1.0,
                       clusters=1, in_cluster_prob=0.8, seed=0):
    """Deterministic power-law interaction graph.

    Edge endpoints are drawn from Zipf-weighted user/item distributions;
    with ``clusters`` > 1 a fraction ``in_cluster_prob`` of each user's
    interactions stays inside the user's cluster.  Duplicates are dropped, so
    the realized edge count can fall slightly below the request on dense
    configurations.
    """
    if num_edges > num_users * num_items:
        raise ValueError("more edges requested than the bipartite graph holds")
    rng = np.random.default_rng(seed)
    user_w = 1.0 / np.arange(1, num_users + 1) ** zipf_exponent
    item_w = 1.0 / np.arange(1, num_items + 1) ** zipf_exponent
    user_w /= user_w.sum()
    # shuffle popularity ranks so cluster ids and popularity stay independent
    user_pop = rng.permutation(user_w)
    item_pop = rng.permutation(item_w / item_w.sum())
    user_cluster = rng.integers(0, clusters, num_users)
    item_cluster = rng.integers(0, clusters, num_items)
    cluster_items = [np.nonzero(item_cluster == c)[0] for c in range(clusters)]
    cluster_item_p = []
    for c in range(clusters):
        w = item_pop[cluster_items[c]]
        cluster_item_p.append(w / w.sum() if w.sum() > 0 else None)
    users_out = []
    items_out = []
    seen = set()
    attempts = 0
    max_attempts = 30
    while len(seen) < num_edges and attempts < max_attempts:
        need = num_edges - len(seen)
        draw = int(need * 1.3) + 16
        us = rng.choice(num_users, size=draw, p=user_pop)
        within = rng.random(draw) < in_cluster_prob
        its = rng.choice(num_items, size=draw, p=item_pop)
        if clusters > 1:
            idx_within = np.nonzero(within)[0]
            cl = user_cluster[us[idx_within]]
            for c in range(clusters):
                members = idx_within[cl == c]
                pool = cluster_items[c]
                if members.size and pool.size:
                    its[members] = rng.choice(pool, size=members.size,
                                              p=cluster_item_p[c])
        for u, i in zip(us.tolist(), its.tolist()):
            if (u, i) not in seen:
                seen.add((u, i))
                users_out.append(u)
                items_out.append(i)
                if len(seen) >= num_edges:
                    break
        attempts += 1
    users = np.array(users_out, dtype=np.int64)
    items = np.array(items_out, dtype=np.int64)
    return BipartiteGraph(num_users, num_items, users, items)
