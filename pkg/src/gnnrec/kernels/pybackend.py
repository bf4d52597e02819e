"""Pure-numpy kernel backend.

Drop-in fallback for the compiled extension: same call surface, vectorized
numpy instead of C loops.  The ``workers`` argument is accepted for interface
parity but ignored (numpy runs each op as one vectorized pass), which
trivially satisfies the worker-count invariance contracts.  Non-temporal
write hints are ignored; ``streaming_stores_available`` reports False.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_OPS = ("mul", "add", "dot")
_REDUCES = ("sum", "mean", "max")


def streaming_stores_available():
    return False


def _rows_of_entries(indptr):
    n = indptr.size - 1
    return np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))


def sddmm(edge_src, edge_dst, x_src, x_dst, op, out, workers=1, nt=False):
    xs = x_src[edge_src]
    xd = x_dst[edge_dst]
    if op == "mul":
        np.multiply(xs, xd, out=out)
    elif op == "add":
        np.add(xs, xd, out=out)
    elif op == "dot":
        np.einsum("ed,ed->e", xs, xd, out=out[:, 0])
    else:
        raise ValueError(f"unknown sddmm op: {op!r}")
    return out


def _gather(values, indptr, indices, edge_ids, mode):
    if mode == "copy_src":
        return values[indices]
    if edge_ids is None:
        return values[:indptr[-1]]
    return values[edge_ids]


def spmm(indptr, indices, edge_ids, values, out, reduce, mode, workers=1, nt=False):
    rows = _rows_of_entries(indptr)
    vals = _gather(values, indptr, indices, edge_ids, mode)
    if reduce in ("sum", "mean"):
        out[:] = 0
        np.add.at(out, rows, vals)
        if reduce == "mean":
            deg = np.diff(indptr)
            nz = deg > 0
            out[nz] /= deg[nz, None]
    elif reduce == "max":
        out[:] = -np.inf
        np.maximum.at(out, rows, vals)
        out[np.diff(indptr) == 0] = 0.0
    else:
        raise ValueError(f"unknown spmm reduce: {reduce!r}")
    return out


def sddmm_backward_side(indptr, indices, edge_ids, grad_out, x_other, out, op,
                        workers=1):
    """Gradient of sddmm w.r.t. one operand, grouped by that operand's CSR."""
    rows = _rows_of_entries(indptr)
    g = grad_out if edge_ids is None else grad_out[edge_ids]
    if op == "mul":
        contrib = g * x_other[indices]
    elif op == "add":
        contrib = g
    elif op == "dot":
        contrib = g[:, 0, None] * x_other[indices]
    else:
        raise ValueError(f"unknown sddmm op: {op!r}")
    out[:] = 0
    np.add.at(out, rows, contrib)
    return out


def spmm_backward_edge(indptr, edge_ids, grad_out, out_values, mean, workers=1):
    rows = _rows_of_entries(indptr)
    g = grad_out[rows]
    if mean:
        deg = np.diff(indptr)[rows]
        g = g / deg[:, None]
    if edge_ids is None:
        out_values[:indptr[-1]] = g
    else:
        out_values[edge_ids] = g
    return out_values


# -- memory-touch loops for the bandwidth harness ----------------------------
#
# Buffers are viewed as 64-bit words; offsets and counts are in words.  The
# numpy implementations move the advertised bytes but measure numpy speed,
# not raw instruction throughput; they exist so the harness works without
# the compiled extension.

def mem_seq_read(words, w0, w1):
    return int(words[w0:w1].sum(dtype=np.uint64))


def mem_seq_write(words, w0, w1, value, nt=False):
    words[w0:w1] = value


def mem_rand_read(words, block_order, words_per_block):
    view = words[:words.size - words.size % words_per_block]
    view = view.reshape(-1, words_per_block)
    return int(view[block_order].sum(dtype=np.uint64))


def mem_rand_write(words, block_order, words_per_block, value, nt=False):
    view = words[:words.size - words.size % words_per_block]
    view = view.reshape(-1, words_per_block)
    view[block_order] = value
