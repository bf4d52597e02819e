"""Reference implementations the kernel tests check against.

Everything here is written as explicit per-edge Python loops over dense
arrays, deliberately independent of the kernel code paths.
"""

import numpy as np


def dense_biadjacency(g):
    a = np.zeros((g.num_users, g.num_items))
    a[g.edge_users, g.edge_items] = 1.0
    return a


def sddmm_oracle(g, x_src, x_dst, op):
    rows = []
    for u, i in zip(g.edge_users.tolist(), g.edge_items.tolist()):
        if op == "mul":
            rows.append(x_src[u] * x_dst[i])
        elif op == "add":
            rows.append(x_src[u] + x_dst[i])
        elif op == "dot":
            rows.append(np.array([np.dot(x_src[u], x_dst[i])]))
    return np.array(rows, dtype=np.float64).reshape(g.num_edges, -1)


def spmm_oracle(g, values, reduce, target, mode="edge"):
    if target == "item":
        dst_of_edge = g.edge_items
        src_of_edge = g.edge_users
        num_dst = g.num_items
    else:
        dst_of_edge = g.edge_users
        src_of_edge = g.edge_items
        num_dst = g.num_users
    d = values.shape[1]
    out = np.zeros((num_dst, d), dtype=np.float64)
    groups = {r: [] for r in range(num_dst)}
    for e in range(g.num_edges):
        v = values[e] if mode == "edge" else values[src_of_edge[e]]
        groups[int(dst_of_edge[e])].append(np.asarray(v, dtype=np.float64))
    for r, vs in groups.items():
        if not vs:
            continue
        stack = np.stack(vs)
        if reduce == "sum":
            out[r] = stack.sum(axis=0)
        elif reduce == "mean":
            out[r] = stack.mean(axis=0)
        elif reduce == "max":
            out[r] = stack.max(axis=0)
    return out


def central_difference(f, x, indices, h=1e-5):
    """Central finite-difference gradient of scalar f at the given flat
    indices of array x (modified in place and restored)."""
    grads = {}
    flat = x.reshape(-1)
    for idx in indices:
        orig = flat[idx]
        flat[idx] = orig + h
        fp = f()
        flat[idx] = orig - h
        fm = f()
        flat[idx] = orig
        grads[idx] = (fp - fm) / (2 * h)
    return grads


def check_grad(f, x, analytic, rng, max_rel=1e-4, samples=24, h=1e-5):
    """Compare analytic grads of f w.r.t. x against central differences at a
    random subset of coordinates; returns the worst relative error."""
    n = x.size
    take = min(samples, n)
    indices = rng.choice(n, size=take, replace=False)
    numeric = central_difference(f, x, indices.tolist(), h=h)
    a_flat = analytic.reshape(-1)
    worst = 0.0
    for idx, num in numeric.items():
        ana = a_flat[idx]
        denom = max(abs(num), abs(ana), 1e-8)
        worst = max(worst, abs(num - ana) / denom)
    assert worst <= max_rel, f"gradient mismatch: rel error {worst:.3g}"
    return worst
