"""Generalized SDDMM/SpMM kernels with selectable backend.

The compiled extension is used when importable; otherwise the pure-numpy
fallback takes over.  Set ``GNNREC_KERNEL_BACKEND=python`` (or ``cython``) to
force a choice, or call :func:`set_backend` at runtime (used by the backend
comparison benchmark and the test suite).

Per-edge message matrices always follow the graph's canonical edge order
(edges sorted by (user, item)); either aggregation direction consumes them
through the edge-id indirection carried by the graph views.

SDDMM partitions edges into contiguous per-worker ranges (each worker writes
a contiguous output block); SpMM partitions destination rows, so no two
workers write one row.  Results are bitwise identical across worker counts.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from ..graph import GraphView
from . import pybackend
from .counters import CounterEntry, KernelCounters, counters  # noqa: F401

try:
    from . import _ckernels
    _HAVE_CYTHON = True
except ImportError:
    _ckernels = None
    _HAVE_CYTHON = False

_backends = {"python": pybackend}
if _HAVE_CYTHON:
    _backends["cython"] = _ckernels

_forced = os.environ.get("GNNREC_KERNEL_BACKEND")
if _forced:
    if _forced not in _backends:
        raise ImportError(
            f"GNNREC_KERNEL_BACKEND={_forced!r} not available; "
            f"choices: {sorted(_backends)}")
    _active = _backends[_forced]
else:
    _active = _backends["cython" if _HAVE_CYTHON else "python"]


def available_backends():
    return sorted(_backends)


def get_backend():
    return _active.BACKEND_NAME


def set_backend(name):
    global _active
    if name not in _backends:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_backends)}")
    _active = _backends[name]
    return _active.BACKEND_NAME


def backend_module():
    return _active


def streaming_stores_available():
    return _active.streaming_stores_available()


def default_workers():
    return max(1, min(os.cpu_count() or 1, 16))


@dataclass
class KernelOptions:
    """Execution knobs for one kernel call.

    ``write_mode`` None picks the kernel's own default (non-temporal for
    SDDMM, normal for SpMM); non_temporal is a hint and falls back to normal
    stores where streaming stores are unavailable.  ``placement`` is carried
    for bookkeeping by the bandwidth harness and does not affect numerics.
    """

    workers: int | None = None
    write_mode: str | None = None   # None | "normal" | "non_temporal"
    placement: object = None

    def __post_init__(self):
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.write_mode not in (None, "normal", "non_temporal"):
            raise ValueError(f"unknown write_mode: {self.write_mode!r}")

    def resolved_workers(self):
        return self.workers if self.workers is not None else default_workers()

    def wants_nt(self, kernel_default):
        mode = self.write_mode if self.write_mode is not None else kernel_default
        return mode == "non_temporal"


_DEFAULT_OPTS = KernelOptions()


@dataclass
class EngineOpts:
    """Per-kernel options, mirroring the engine config's sddmm.*/spmm.* keys."""

    sddmm: KernelOptions | None = None
    spmm: KernelOptions | None = None


def per_kernel(opts, kind):
    """Resolve an options argument that may be None, a single KernelOptions
    applied to every kernel, or an EngineOpts with per-kernel settings."""
    if opts is None or isinstance(opts, KernelOptions):
        return opts
    return getattr(opts, kind, None)


def _opts(opts):
    return opts if opts is not None else _DEFAULT_OPTS


def _as_matrix(x, name):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    return np.ascontiguousarray(x)


def _common_dtype(*arrays):
    if any(a.dtype == np.float64 for a in arrays):
        return np.float64
    return np.float32


def _edge_endpoints(g, direction):
    if direction == "u2i":
        return g.edge_users, g.edge_items, g.num_users, g.num_items
    if direction == "i2u":
        return g.edge_items, g.edge_users, g.num_items, g.num_users
    raise ValueError(f"unknown sddmm direction: {direction!r}")


def _resolve_view(g_or_view, target):
    if isinstance(g_or_view, GraphView):
        return g_or_view
    if target is None:
        raise ValueError("target side required when passing a graph")
    return g_or_view.view(target)


def sddmm(g, x_src, x_dst, op="mul", opts=None, direction="u2i"):
    """Per-edge op of two dense row sets: out[e] = op(x_src[src], x_dst[dst]).

    Output rows follow canonical edge order; 'dot' yields an (E, 1) column.
    """
    opts = _opts(opts)
    esrc, edst, n_src, n_dst = _edge_endpoints(g, direction)
    xs = _as_matrix(x_src, "x_src")
    xd = _as_matrix(x_dst, "x_dst")
    if xs.shape[0] != n_src:
        raise ValueError(f"x_src has {xs.shape[0]} rows, expected {n_src}")
    if xd.shape[0] != n_dst:
        raise ValueError(f"x_dst has {xd.shape[0]} rows, expected {n_dst}")
    if xs.shape[1] != xd.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {xd.shape[1]}")
    if op not in ("mul", "add", "dot"):
        raise ValueError(f"unknown sddmm op: {op!r}")
    dtype = _common_dtype(xs, xd)
    xs = xs.astype(dtype, copy=False)
    xd = xd.astype(dtype, copy=False)
    dout = 1 if op == "dot" else xs.shape[1]
    out = np.empty((g.num_edges, dout), dtype=dtype)
    t0 = time.perf_counter()
    _active.sddmm(esrc, edst, xs, xd, op, out,
                  workers=opts.resolved_workers(),
                  nt=opts.wants_nt("non_temporal"))
    counters.record(f"sddmm.{op}", rows=g.num_edges, bytes_written=out.nbytes,
                    seconds=time.perf_counter() - t0)
    return out


def spmm(g_or_view, values, reduce="sum", opts=None, *, target=None, mode="edge"):
    """Aggregate per-edge (or per-source, mode='copy_src') rows into each
    destination row of the chosen direction.

    Zero in-degree rows come out all-zero for every reduction (max uses 0
    rather than -inf so downstream layers stay finite).
    """
    opts = _opts(opts)
    view = _resolve_view(g_or_view, target)
    vals = _as_matrix(values, "values")
    if mode not in ("edge", "copy_src"):
        raise ValueError(f"unknown spmm mode: {mode!r}")
    if reduce not in ("sum", "mean", "max"):
        raise ValueError(f"unknown spmm reduce: {reduce!r}")
    if mode == "copy_src":
        if vals.shape[0] != view.num_src:
            raise ValueError(
                f"copy_src values have {vals.shape[0]} rows, expected {view.num_src}")
    elif vals.shape[0] != view.num_edges:
        raise ValueError(
            f"edge values have {vals.shape[0]} rows, expected {view.num_edges}")
    out = np.empty((view.num_rows, vals.shape[1]), dtype=vals.dtype)
    t0 = time.perf_counter()
    _active.spmm(view.indptr, view.indices, view.edge_ids, vals, out, reduce,
                 mode, workers=opts.resolved_workers(),
                 nt=opts.wants_nt("normal"))
    counters.record(f"spmm.{reduce}", rows=view.num_rows,
                    bytes_written=out.nbytes, seconds=time.perf_counter() - t0)
    return out


def sddmm_backward(g, x_src, x_dst, op, grad_out, opts=None, direction="u2i"):
    """Gradients of sddmm w.r.t. both operands; each side is itself an
    SpMM-shaped aggregation over that side's adjacency."""
    opts = _opts(opts)
    esrc, edst, n_src, n_dst = _edge_endpoints(g, direction)
    xs = _as_matrix(x_src, "x_src")
    xd = _as_matrix(x_dst, "x_dst")
    go = _as_matrix(grad_out, "grad_out")
    if op not in ("mul", "add", "dot"):
        raise ValueError(f"unknown sddmm op: {op!r}")
    if go.shape[0] != g.num_edges:
        raise ValueError(f"grad_out has {go.shape[0]} rows, expected {g.num_edges}")
    expected_cols = 1 if op == "dot" else xs.shape[1]
    if go.shape[1] != expected_cols:
        raise ValueError(f"grad_out has {go.shape[1]} cols, expected {expected_cols}")
    dtype = _common_dtype(xs, xd, go)
    xs, xd, go = (a.astype(dtype, copy=False) for a in (xs, xd, go))
    user_view = g.view("user")   # rows = users, identity edge ids
    item_view = g.view("item")   # rows = items, edge-id indirection
    if direction == "u2i":
        src_view, dst_view = user_view, item_view
    else:
        src_view, dst_view = item_view, user_view
    workers = opts.resolved_workers()
    grad_src = np.empty((n_src, xs.shape[1]), dtype=dtype)
    grad_dst = np.empty((n_dst, xd.shape[1]), dtype=dtype)
    t0 = time.perf_counter()
    _active.sddmm_backward_side(src_view.indptr, src_view.indices,
                                src_view.edge_ids, go, xd, grad_src, op,
                                workers=workers)
    _active.sddmm_backward_side(dst_view.indptr, dst_view.indices,
                                dst_view.edge_ids, go, xs, grad_dst, op,
                                workers=workers)
    counters.record(f"sddmm_backward.{op}", rows=n_src + n_dst,
                    bytes_written=grad_src.nbytes + grad_dst.nbytes,
                    seconds=time.perf_counter() - t0)
    return grad_src, grad_dst


def spmm_backward(g_or_view, reduce, grad_out, opts=None, *, target=None,
                  mode="edge", cache=None):
    """Gradient of spmm w.r.t. its values.

    Edge mode scatters grad_out back over edges (an SDDMM-copy on the
    transposed view), divided by in-degree for mean.  copy_src mode is the
    copy-source SpMM of grad_out through the opposite direction.  max reduce
    has no training path and is rejected.
    """
    opts = _opts(opts)
    if reduce == "max":
        raise ValueError("max-reduce has no backward (inference-only reduction)")
    if reduce not in ("sum", "mean"):
        raise ValueError(f"unknown spmm reduce: {reduce!r}")
    view = _resolve_view(g_or_view, target)
    go = _as_matrix(grad_out, "grad_out")
    if go.shape[0] != view.num_rows:
        raise ValueError(f"grad_out has {go.shape[0]} rows, expected {view.num_rows}")
    if mode == "copy_src":
        if not isinstance(g_or_view, GraphView):
            other = "user" if target == "item" else "item"
            if reduce == "mean":
                deg = np.diff(view.indptr)
                scaled = np.where(deg[:, None] > 0, go / np.maximum(deg, 1)[:, None], 0)
                return spmm(g_or_view, scaled.astype(go.dtype), "sum", opts,
                            target=other, mode="copy_src")
            return spmm(g_or_view, go, "sum", opts, target=other, mode="copy_src")
        raise ValueError("copy_src backward needs the graph, not a bare view")
    out = np.zeros((view.num_edges, go.shape[1]), dtype=go.dtype)
    t0 = time.perf_counter()
    _active.spmm_backward_edge(view.indptr, view.edge_ids, go, out,
                               mean=(reduce == "mean"),
                               workers=opts.resolved_workers())
    counters.record(f"spmm_backward.{reduce}", rows=view.num_rows,
                    bytes_written=out.nbytes, seconds=time.perf_counter() - t0)
    return out


def dense_matmul(a, w, opts=None, counter="matmul"):
    """Dense a @ w through the BLAS numpy carries; counted under ``counter``
    so dataflow complexity (rows touched per weight application) is auditable."""
    a = _as_matrix(a, "a")
    w = _as_matrix(w, "w")
    if a.shape[1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {w.shape}")
    t0 = time.perf_counter()
    out = a @ w
    counters.record(counter, rows=a.shape[0], bytes_written=out.nbytes,
                    seconds=time.perf_counter() - t0)
    return out


def dense_add(y, x):
    y = np.asarray(y)
    t0 = time.perf_counter()
    np.add(y, x, out=y)
    counters.record("add", rows=y.shape[0] if y.ndim else 1,
                    bytes_written=y.nbytes, seconds=time.perf_counter() - t0)
    return y


def axpy(y, alpha, x):
    """In-place y += alpha * x (x may be a scalar or broadcastable array)."""
    y = np.asarray(y)
    t0 = time.perf_counter()
    y += np.multiply(alpha, x)
    counters.record("axpy", rows=y.shape[0] if y.ndim else 1,
                    bytes_written=y.nbytes, seconds=time.perf_counter() - t0)
    return y


def reset_counters():
    counters.reset()
