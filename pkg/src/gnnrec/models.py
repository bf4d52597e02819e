"""NGCF and LightGCN layer stacks on the sparse kernels.

The optimized layer pulls the trainable weight matrices out of the per-edge
message function (aggregate first, multiply once per destination row), runs
message generation as one SDDMM shared by both update directions, and
aggregation as SpMM.  Weight application stacks the two aggregated operands
into a single matmul, so the rows-touched counter reads |U|+|I| per layer
instead of the 2|E| the per-edge formulation costs.

``naive_ngcf_layer_forward``/``..._backward`` keep the per-edge dataflow
(gather, |E|-row matmuls, explicit scatter-add) in plain numpy; they exist as
the equivalence oracle and instrumentation baseline, not for speed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K

_MODELS = ("ngcf", "lightgcn")
_COMBINES = ("concat", "mean")


@dataclass
class ModelConfig:
    model: str = "lightgcn"
    num_layers: int = 2
    embed_dim: int = 64
    combine: str | None = None      # default: concat for ngcf, mean for lightgcn
    normalize_by_degree: bool = False

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValueError(f"unknown model {self.model!r}; choices: {_MODELS}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.combine is None:
            self.combine = "concat" if self.model == "ngcf" else "mean"
        if self.combine not in _COMBINES:
            raise ValueError(f"unknown combine {self.combine!r}; choices: {_COMBINES}")

    @property
    def final_dim(self):
        if self.combine == "concat":
            return (self.num_layers + 1) * self.embed_dim
        return self.embed_dim


@dataclass
class ModelParams:
    user_embed: np.ndarray
    item_embed: np.ndarray
    w1: list[np.ndarray] = field(default_factory=list)
    w2: list[np.ndarray] = field(default_factory=list)

    def all_arrays(self):
        return [self.user_embed, self.item_embed, *self.w1, *self.w2]

    def copy(self):
        return ModelParams(self.user_embed.copy(), self.item_embed.copy(),
                           [w.copy() for w in self.w1],
                           [w.copy() for w in self.w2])

    def check_finite(self):
        for a in self.all_arrays():
            if not np.isfinite(a).all():
                raise FloatingPointError("non-finite model parameter")


def init_params(num_users, num_items, config, seed=0, dtype=np.float32):
    """Seeded uniform init scaled by 1/sqrt(d); NGCF additionally gets
    per-layer square weight matrices."""
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    scale = 1.0 / np.sqrt(d)
    draw = lambda shape: (rng.uniform(-1.0, 1.0, shape) * scale).astype(dtype)
    params = ModelParams(draw((num_users, d)), draw((num_items, d)))
    if config.model == "ngcf":
        params.w1 = [draw((d, d)) for _ in range(config.num_layers)]
        params.w2 = [draw((d, d)) for _ in range(config.num_layers)]
    return params


def _apply_pair_weights(m1, m2, w1, w2):
    """m1 @ w1 + m2 @ w2 as one stacked matmul (counted once, m1.rows rows)."""
    stacked = np.hstack([m1, m2])
    wstack = np.vstack([w1, w2]).astype(stacked.dtype, copy=False)
    return K.dense_matmul(stacked, wstack, counter="weight_matmul")


def _degree_scales(g, dtype):
    inv_u = np.zeros(g.num_users, dtype=dtype)
    inv_i = np.zeros(g.num_items, dtype=dtype)
    du = g.degrees("user")
    di = g.degrees("item")
    inv_u[du > 0] = 1.0 / np.sqrt(du[du > 0]).astype(dtype)
    inv_i[di > 0] = 1.0 / np.sqrt(di[di > 0]).astype(dtype)
    return inv_u, inv_i


def _resolve_views(g, views):
    if views is None:
        return g.view("user"), g.view("item")
    return views


def _layer_common_forward(g, xu, xi, opts, normalize, views):
    """Shared SDDMM + SpMM plumbing: one SDDMM-mul serves both directions."""
    user_view, item_view = _resolve_views(g, views)
    sd_opts = K.per_kernel(opts, "sddmm")
    sp_opts = K.per_kernel(opts, "spmm")
    if normalize:
        inv_u, inv_i = _degree_scales(g, xu.dtype)
        xu_n = xu * inv_u[:, None]
        xi_n = xi * inv_i[:, None]
    else:
        inv_u = inv_i = None
        xu_n, xi_n = xu, xi
    s = K.sddmm(g, xu_n, xi_n, "mul", sd_opts)
    p_i = K.spmm(item_view, s, "sum", sp_opts)
    p_u = K.spmm(user_view, s, "sum", sp_opts)
    q_i = K.spmm(item_view, xu_n, "sum", sp_opts, mode="copy_src")
    q_u = K.spmm(user_view, xi_n, "sum", sp_opts, mode="copy_src")
    if normalize:
        q_i = q_i * inv_i[:, None]
        q_u = q_u * inv_u[:, None]
    return {
        "xu_n": xu_n, "xi_n": xi_n, "sddmm": s,
        "p_i": p_i, "p_u": p_u, "q_i": q_i, "q_u": q_u,
        "inv_u": inv_u, "inv_i": inv_i, "normalize": normalize,
    }


def _layer_common_backward(g, cache, d_s_parts, d_q_i, d_q_u, opts):
    """Backprop through the shared plumbing given upstream gradients for the
    SDDMM sums (per direction) and the copy-source sums."""
    sd_opts = K.per_kernel(opts, "sddmm")
    sp_opts = K.per_kernel(opts, "spmm")
    d_p_i, d_p_u = d_s_parts
    d_s = K.spmm_backward(g.view("item"), "sum", d_p_i, sp_opts)
    d_s += K.spmm_backward(g.view("user"), "sum", d_p_u, sp_opts)
    d_xu_n, d_xi_n = K.sddmm_backward(g, cache["xu_n"], cache["xi_n"], "mul",
                                      d_s, sd_opts)
    if cache["normalize"]:
        d_q_i = d_q_i * cache["inv_i"][:, None]
        d_q_u = d_q_u * cache["inv_u"][:, None]
    d_xu_n += K.spmm(g, d_q_i, "sum", sp_opts, target="user", mode="copy_src")
    d_xi_n += K.spmm(g, d_q_u, "sum", sp_opts, target="item", mode="copy_src")
    if cache["normalize"]:
        d_xu = d_xu_n * cache["inv_u"][:, None]
        d_xi = d_xi_n * cache["inv_i"][:, None]
    else:
        d_xu, d_xi = d_xu_n, d_xi_n
    return d_xu, d_xi


def ngcf_layer_forward(g, xu, xi, w1, w2, opts=None, normalize=False, views=None):
    """One NGCF layer: x_dst' = sum_e[(x_src*x_dst)] @ W1 + sum_e[x_src] @ W2
    for both destinations, with the SDDMM result computed once and reused."""
    cache = _layer_common_forward(g, xu, xi, opts, normalize, views)
    xi_new = _apply_pair_weights(cache["p_i"], cache["q_i"], w1, w2)
    xu_new = _apply_pair_weights(cache["p_u"], cache["q_u"], w1, w2)
    cache["w1"], cache["w2"] = w1, w2
    return xu_new, xi_new, cache


def ngcf_layer_backward(g, cache, d_xu_new, d_xi_new, opts=None):
    w1t = cache["w1"].T.astype(d_xi_new.dtype, copy=False)
    w2t = cache["w2"].T.astype(d_xi_new.dtype, copy=False)
    d_w1 = K.dense_matmul(cache["p_i"].T, d_xi_new) \
        + K.dense_matmul(cache["p_u"].T, d_xu_new)
    d_w2 = K.dense_matmul(cache["q_i"].T, d_xi_new) \
        + K.dense_matmul(cache["q_u"].T, d_xu_new)
    d_p_i = K.dense_matmul(d_xi_new, w1t)
    d_p_u = K.dense_matmul(d_xu_new, w1t)
    d_q_i = K.dense_matmul(d_xi_new, w2t)
    d_q_u = K.dense_matmul(d_xu_new, w2t)
    d_xu, d_xi = _layer_common_backward(g, cache, (d_p_i, d_p_u), d_q_i, d_q_u,
                                        opts)
    return d_xu, d_xi, d_w1, d_w2


def lightgcn_layer_forward(g, xu, xi, opts=None, normalize=False, views=None):
    """One LightGCN layer: the NGCF message with the weight matrices removed,
    m_e = (x_src * x_dst) + x_src, aggregated by sum."""
    cache = _layer_common_forward(g, xu, xi, opts, normalize, views)
    xi_new = cache["p_i"] + cache["q_i"]
    xu_new = cache["p_u"] + cache["q_u"]
    return xu_new, xi_new, cache


def lightgcn_layer_backward(g, cache, d_xu_new, d_xi_new, opts=None):
    d_xu, d_xi = _layer_common_backward(g, cache, (d_xi_new, d_xu_new),
                                        d_xi_new, d_xu_new, opts)
    return d_xu, d_xi


def naive_ngcf_layer_forward(g, xu, xi, w1, w2, normalize=False):
    """Per-edge reference dataflow: weights applied on |E|-row matrices, then
    an explicit scatter-add; the SDDMM product is computed once per direction
    (twice per layer, no reuse)."""
    eu, ei = g.edge_users, g.edge_items
    if normalize:
        inv_u, inv_i = _degree_scales(g, xu.dtype)
        xu = xu * inv_u[:, None]
        xi = xi * inv_i[:, None]
        dst_scale_i = inv_i[ei][:, None]
        dst_scale_u = inv_u[eu][:, None]
    else:
        dst_scale_i = dst_scale_u = 1.0
    # item-side messages: src = user
    prod = xu[eu] * xi[ei]
    msgs = _apply_pair_weights(prod, dst_scale_i * xu[eu], w1, w2)
    xi_new = np.zeros_like(xi)
    np.add.at(xi_new, ei, msgs)
    # user-side messages: src = item (product recomputed, no reuse)
    prod2 = xi[ei] * xu[eu]
    msgs2 = _apply_pair_weights(prod2, dst_scale_u * xi[ei], w1, w2)
    xu_new = np.zeros_like(xu)
    np.add.at(xu_new, eu, msgs2)
    return xu_new, xi_new


def naive_ngcf_layer_backward(g, xu, xi, w1, w2, d_xu_new, d_xi_new,
                              normalize=False):
    """Gradients of the per-edge reference dataflow, all plain numpy."""
    eu, ei = g.edge_users, g.edge_items
    if normalize:
        inv_u, inv_i = _degree_scales(g, xu.dtype)
        xu_n = xu * inv_u[:, None]
        xi_n = xi * inv_i[:, None]
        b_e = inv_i[ei][:, None]
        a_e = inv_u[eu][:, None]
    else:
        xu_n, xi_n = xu, xi
        b_e = a_e = 1.0
    d = xu.shape[1]
    wstack = np.vstack([w1, w2]).astype(xu.dtype, copy=False)
    d_xu_n = np.zeros_like(xu)
    d_xi_n = np.zeros_like(xi)
    d_wstack = np.zeros_like(wstack)
    # item side: A = [xu_n[eu]*xi_n[ei] | b_e*xu_n[eu]], xi_new = scatter(A @ W)
    a_mat = np.hstack([xu_n[eu] * xi_n[ei], b_e * xu_n[eu]])
    d_msgs = d_xi_new[ei]
    d_wstack += a_mat.T @ d_msgs
    d_a = d_msgs @ wstack.T
    d_prod, d_src = d_a[:, :d], d_a[:, d:]
    np.add.at(d_xu_n, eu, d_prod * xi_n[ei] + d_src * b_e)
    np.add.at(d_xi_n, ei, d_prod * xu_n[eu])
    # user side: A2 = [xu_n[eu]*xi_n[ei] | a_e*xi_n[ei]]
    a_mat2 = np.hstack([xu_n[eu] * xi_n[ei], a_e * xi_n[ei]])
    d_msgs2 = d_xu_new[eu]
    d_wstack += a_mat2.T @ d_msgs2
    d_a2 = d_msgs2 @ wstack.T
    d_prod2, d_src2 = d_a2[:, :d], d_a2[:, d:]
    np.add.at(d_xu_n, eu, d_prod2 * xi_n[ei])
    np.add.at(d_xi_n, ei, d_prod2 * xu_n[eu] + d_src2 * a_e)
    if normalize:
        d_xu = d_xu_n * inv_u[:, None]
        d_xi = d_xi_n * inv_i[:, None]
    else:
        d_xu, d_xi = d_xu_n, d_xi_n
    return d_xu, d_xi, d_wstack[:d], d_wstack[d:]


def model_forward(g, params, config, opts=None, views_per_layer=None):
    """Run all layers and combine the per-layer embeddings (layer-0 input
    included) into the final user/item representations."""
    xu, xi = params.user_embed, params.item_embed
    stages = [(xu, xi)]
    caches = []
    for layer in range(config.num_layers):
        views = views_per_layer[layer] if views_per_layer is not None else None
        if config.model == "ngcf":
            xu, xi, cache = ngcf_layer_forward(
                g, xu, xi, params.w1[layer], params.w2[layer], opts,
                normalize=config.normalize_by_degree, views=views)
        else:
            xu, xi, cache = lightgcn_layer_forward(
                g, xu, xi, opts, normalize=config.normalize_by_degree,
                views=views)
        stages.append((xu, xi))
        caches.append(cache)
    fu = _combine([s[0] for s in stages], config.combine)
    fi = _combine([s[1] for s in stages], config.combine)
    return fu, fi, {"stages": stages, "layers": caches}


def _combine(stages, combine):
    if combine == "concat":
        return np.hstack(stages)
    return np.mean(np.stack(stages, axis=0), axis=0)


def _split_final_grad(grad, num_stages, d, combine):
    if combine == "concat":
        return [grad[:, k * d:(k + 1) * d] for k in range(num_stages)]
    share = (grad / num_stages).astype(grad.dtype, copy=False)
    return [share] * num_stages


def model_backward(g, params, config, caches, grad_fu, grad_fi, opts=None):
    """Gradients of all trainable parameters from gradients of the combined
    final embeddings; composed of the kernel backward passes."""
    if caches is None or "layers" not in caches:
        raise ValueError("missing forward caches; run model_forward first")
    layer_caches = caches["layers"]
    if len(layer_caches) != config.num_layers:
        raise ValueError("stale forward caches: layer count mismatch")
    num_stages = config.num_layers + 1
    d = config.embed_dim
    gu_stages = _split_final_grad(np.asarray(grad_fu), num_stages, d, config.combine)
    gi_stages = _split_final_grad(np.asarray(grad_fi), num_stages, d, config.combine)
    d_xu = gu_stages[-1].copy()
    d_xi = gi_stages[-1].copy()
    grads = ModelParams(None, None,
                        [None] * len(params.w1), [None] * len(params.w2))
    for layer in range(config.num_layers - 1, -1, -1):
        cache = layer_caches[layer]
        if config.model == "ngcf":
            d_xu, d_xi, d_w1, d_w2 = ngcf_layer_backward(g, cache, d_xu, d_xi, opts)
            grads.w1[layer] = d_w1
            grads.w2[layer] = d_w2
        else:
            d_xu, d_xi = lightgcn_layer_backward(g, cache, d_xu, d_xi, opts)
        d_xu += gu_stages[layer]
        d_xi += gi_stages[layer]
    grads.user_embed = d_xu
    grads.item_embed = d_xi
    return grads


def score_pairs(fu, fi, users, items):
    """Dot-product scores of (user, item) id pairs on final embeddings."""
    return np.einsum("bd,bd->b", fu[users], fi[items])


# -- checkpoints ---------------------------------------------------------------

_CKPT_MAGIC = b"GRCK"
_CKPT_VERSION = 1
_MODEL_CODES = {"ngcf": 0, "lightgcn": 1}
_COMBINE_CODES = {"concat": 0, "mean": 1}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(path, params, config):
    """Deterministic little-endian layout: header, then user/item embeddings,
    then per-layer W1 and W2 (NGCF only)."""
    dtype = np.dtype(params.user_embed.dtype)
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<IBBBB", _CKPT_VERSION,
                            _MODEL_CODES[config.model],
                            _COMBINE_CODES[config.combine],
                            1 if config.normalize_by_degree else 0,
                            _DTYPE_CODES[dtype]))
        f.write(struct.pack("<IIQQ", config.num_layers, config.embed_dim,
                            params.user_embed.shape[0],
                            params.item_embed.shape[0]))
        for a in params.all_arrays():
            f.write(np.ascontiguousarray(a, dtype=dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, model_code, combine_code, normalize, dtype_code = struct.unpack(
            "<IBBBB", f.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        num_layers, embed_dim, num_users, num_items = struct.unpack(
            "<IIQQ", f.read(24))
        model = {v: k for k, v in _MODEL_CODES.items()}[model_code]
        combine = {v: k for k, v in _COMBINE_CODES.items()}[combine_code]
        dtype = {v: k for k, v in _DTYPE_CODES.items()}[dtype_code]
        config = ModelConfig(model=model, num_layers=num_layers,
                             embed_dim=embed_dim, combine=combine,
                             normalize_by_degree=bool(normalize))
        read = lambda shape: np.frombuffer(
            f.read(int(np.prod(shape)) * dtype.itemsize),
            dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        params = ModelParams(read((num_users, embed_dim)),
                             read((num_items, embed_dim)))
        if model == "ngcf":
            params.w1 = [read((embed_dim, embed_dim)) for _ in range(num_layers)]
            params.w2 = [read((embed_dim, embed_dim)) for _ in range(num_layers)]
    return params, config
