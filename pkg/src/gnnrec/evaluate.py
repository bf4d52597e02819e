"""Top-k recommendation quality and neighbor-sampling experiments.

Recall@k scores every item for every user holding test interactions, masks
the user's training items, and averages the per-user hit fraction.  Ties
break toward the lower item id so rankings are deterministic.

``sampled_forward`` reruns the model with each destination vertex
aggregating over at most ``s`` uniformly chosen in-neighbors (fresh sample
per layer and per direction); with ``s`` at or above the maximum degree it
reduces to the exact forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphView
from .models import model_forward


class EvalError(Exception):
    pass


@dataclass
class EvalResult:
    k: int
    recall: float
    users_evaluated: int
    averaged_over: str = "users"   # per-user mean, zero-test users excluded

    def to_csv_row(self):
        return f"{self.k},{self.recall:.6f},{self.users_evaluated}"


def recall_at_k(final_user_embed, final_item_embed, train, test, k,
                chunk=1024):
    """Mean over users (with >= 1 test edge) of |top-k ∩ test items| / |test
    items|, training items masked out of the candidate ranking."""
    if k < 1:
        raise EvalError("k must be >= 1")
    fu = np.asarray(final_user_embed)
    fi = np.asarray(final_item_embed)
    test_deg = test.degrees("user")
    users = np.nonzero(test_deg > 0)[0]
    if users.size == 0:
        raise EvalError("no users with test interactions to evaluate")
    fit = fi.T
    total = 0.0
    for lo in range(0, users.size, chunk):
        batch = users[lo:lo + chunk]
        scores = fu[batch] @ fit
        for row, u in enumerate(batch):
            tr = train.u2i_indices[train.u2i_indptr[u]:train.u2i_indptr[u + 1]]
            scores[row, tr] = -np.inf
        # stable sort on the negated scores: ties resolve to the lower item id
        order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        for row, u in enumerate(batch):
            te = test.u2i_indices[test.u2i_indptr[u]:test.u2i_indptr[u + 1]]
            hits = np.intersect1d(order[row], te, assume_unique=True).size
            total += hits / te.size
    return EvalResult(k=int(k), recall=total / users.size,
                      users_evaluated=int(users.size))


def random_ranking_recall(train, test, k):
    """Expected recall@k of a uniformly random ranking: every unmasked item is
    equally likely to land in the top k, so per user it is k / #unmasked."""
    test_deg = test.degrees("user")
    train_deg = train.degrees("user")
    users = np.nonzero(test_deg > 0)[0]
    if users.size == 0:
        raise EvalError("no users with test interactions to evaluate")
    unmasked = train.num_items - train_deg[users]
    expected = np.minimum(k / np.maximum(unmasked, 1), 1.0)
    return float(expected.mean())


def sample_view(view, s, rng):
    """Keep min(degree, s) uniformly chosen entries per destination row.

    Degrees at or below ``s`` keep all neighbors; if no row exceeds ``s`` the
    original view is returned unchanged (the exact no-op case).
    """
    if s < 1:
        raise EvalError("sampling factor must be >= 1")
    deg = np.diff(view.indptr)
    if not np.any(deg > s):
        return view
    keep = []
    for r in range(view.num_rows):
        start, end = int(view.indptr[r]), int(view.indptr[r + 1])
        n = end - start
        if n <= s:
            keep.append(np.arange(start, end, dtype=np.int64))
        else:
            chosen = rng.choice(n, size=s, replace=False)
            chosen.sort()
            keep.append(start + chosen.astype(np.int64))
    positions = np.concatenate(keep) if keep else np.empty(0, dtype=np.int64)
    new_counts = np.minimum(deg, s)
    indptr = np.zeros(view.num_rows + 1, dtype=np.int64)
    np.cumsum(new_counts, out=indptr[1:])
    edge_ids = (positions if view.edge_ids is None
                else view.edge_ids[positions])
    return GraphView(indptr=indptr, indices=view.indices[positions],
                     edge_ids=edge_ids, num_rows=view.num_rows,
                     num_src=view.num_src, num_edges=view.num_edges)


def sampled_forward(g, params, config, sampling_factor, rng, opts=None):
    """Model forward where each layer aggregates over sampled neighbor sets;
    otherwise identical math to model_forward."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    views_per_layer = []
    for _ in range(config.num_layers):
        user_view = sample_view(g.view("user"), sampling_factor, rng)
        item_view = sample_view(g.view("item"), sampling_factor, rng)
        views_per_layer.append((user_view, item_view))
    fu, fi, _ = model_forward(g, params, config, opts,
                              views_per_layer=views_per_layer)
    return fu, fi
