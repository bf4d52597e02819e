# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: SDDMM/SpMM loops and memory-touch primitives.

Parallelism is row/edge partitioned: callers' worker threads (or the
threading done here for the compute kernels) each own a contiguous output
range, so no two workers ever write the same row and results are bitwise
independent of the worker count.  Non-temporal stores are used where the
target supports them and the row stride is 8-byte aligned; otherwise the
normal store path is taken silently (numerics are identical either way).
"""

import threading

import numpy as np

from libc.stdint cimport int64_t

cdef extern from *:
    """
    #include <stdint.h>
    #include <string.h>
    #if (defined(__x86_64__) || defined(_M_X64)) && defined(__SSE2__)
    #include <immintrin.h>
    #define GNNREC_NT_AVAILABLE 1
    static void gnnrec_nt_copy8(int64_t* dst, const int64_t* src, long nwords) {
        long i;
        for (i = 0; i < nwords; i++)
            _mm_stream_si64((long long*)(dst + i), (long long)src[i]);
    }
    static void gnnrec_nt_fill8(int64_t* dst, int64_t value, long nwords) {
        long i;
        for (i = 0; i < nwords; i++)
            _mm_stream_si64((long long*)(dst + i), (long long)value);
    }
    static void gnnrec_nt_fence(void) { _mm_sfence(); }
    #else
    #define GNNREC_NT_AVAILABLE 0
    static void gnnrec_nt_copy8(int64_t* dst, const int64_t* src, long nwords) {
        memcpy(dst, src, (size_t)nwords * 8);
    }
    static void gnnrec_nt_fill8(int64_t* dst, int64_t value, long nwords) {
        long i;
        for (i = 0; i < nwords; i++)
            dst[i] = value;
    }
    static void gnnrec_nt_fence(void) {}
    #endif
    static int gnnrec_nt_available(void) { return GNNREC_NT_AVAILABLE; }
    """
    void gnnrec_nt_copy8(int64_t* dst, const int64_t* src, long nwords) nogil
    void gnnrec_nt_fill8(int64_t* dst, int64_t value, long nwords) nogil
    void gnnrec_nt_fence() nogil
    int gnnrec_nt_available() nogil

ctypedef fused floating:
    float
    double

BACKEND_NAME = "cython"

_OP_CODES = {"mul": 0, "add": 1, "dot": 2}
_REDUCE_CODES = {"sum": 0, "mean": 1, "max": 2}


def streaming_stores_available():
    return bool(gnnrec_nt_available())


def _partition(long long n, int workers):
    cdef int w = max(1, min(workers, <int>max(n, 1)))
    bounds = [(i * n) // w for i in range(w + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(w) if bounds[i + 1] > bounds[i]]


def _run(parts, target, argfn):
    if len(parts) == 1:
        target(*argfn(0, parts[0]))
        return
    threads = [threading.Thread(target=target, args=argfn(w, span))
               for w, span in enumerate(parts)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


# -- SDDMM --------------------------------------------------------------------

cdef void _sddmm_core(const long long* esrc, const long long* edst,
                      const floating* xs, const floating* xd, floating* out,
                      long long e0, long long e1, Py_ssize_t d, int op,
                      floating* scratch, bint use_nt) noexcept nogil:
    cdef long long e
    cdef Py_ssize_t j
    cdef const floating* ps
    cdef const floating* pd
    cdef floating* row
    cdef floating acc
    cdef long nwords = <long>((d * sizeof(floating)) // 8)
    for e in range(e0, e1):
        ps = xs + esrc[e] * d
        pd = xd + edst[e] * d
        if op == 2:
            acc = 0
            for j in range(d):
                acc = acc + ps[j] * pd[j]
            out[e] = acc
        elif use_nt:
            if op == 0:
                for j in range(d):
                    scratch[j] = ps[j] * pd[j]
            else:
                for j in range(d):
                    scratch[j] = ps[j] + pd[j]
            gnnrec_nt_copy8(<int64_t*> (out + e * d), <const int64_t*> scratch, nwords)
        else:
            row = out + e * d
            if op == 0:
                for j in range(d):
                    row[j] = ps[j] * pd[j]
            else:
                for j in range(d):
                    row[j] = ps[j] + pd[j]
    if use_nt:
        gnnrec_nt_fence()


def _sddmm_block(const long long[::1] edge_src, const long long[::1] edge_dst,
                 const floating[:, ::1] x_src, const floating[:, ::1] x_dst,
                 floating[:, ::1] out, long long e0, long long e1, int op_code,
                 floating[::1] scratch, bint use_nt):
    cdef Py_ssize_t d = x_src.shape[1]
    with nogil:
        _sddmm_core(&edge_src[0], &edge_dst[0], &x_src[0, 0], &x_dst[0, 0],
                    &out[0, 0], e0, e1, d, op_code, &scratch[0], use_nt)


def sddmm(edge_src, edge_dst, x_src, x_dst, op, out, workers=1, nt=False):
    cdef long long n = edge_src.shape[0]
    if op not in _OP_CODES:
        raise ValueError(f"unknown sddmm op: {op!r}")
    if n == 0:
        return out
    op_code = _OP_CODES[op]
    d = x_src.shape[1]
    itemsize = x_src.dtype.itemsize
    use_nt = (nt and op != "dot" and gnnrec_nt_available()
              and (d * itemsize) % 8 == 0
              and out.ctypes.data % 8 == 0)
    parts = _partition(n, workers)
    scratch = np.zeros((len(parts), max(d, 1)), dtype=x_src.dtype)
    _run(parts, _sddmm_block,
         lambda w, span: (edge_src, edge_dst, x_src, x_dst, out,
                          span[0], span[1], op_code, scratch[w], use_nt))
    return out


# -- SpMM ---------------------------------------------------------------------

cdef void _spmm_core(const long long* indptr, const long long* indices,
                     const long long* eids, bint use_eids,
                     const floating* values, floating* out,
                     long long r0, long long r1, Py_ssize_t d,
                     int reduce_op, bint copy_src) noexcept nogil:
    cdef long long r, p, start, end, idx
    cdef Py_ssize_t j
    cdef floating* orow
    cdef const floating* v
    cdef double inv
    for r in range(r0, r1):
        start = indptr[r]
        end = indptr[r + 1]
        orow = out + r * d
        for j in range(d):
            orow[j] = 0
        if end == start:
            continue
        for p in range(start, end):
            if copy_src:
                idx = indices[p]
            elif use_eids:
                idx = eids[p]
            else:
                idx = p
            v = values + idx * d
            if reduce_op == 2:
                if p == start:
                    for j in range(d):
                        orow[j] = v[j]
                else:
                    for j in range(d):
                        if v[j] > orow[j]:
                            orow[j] = v[j]
            else:
                for j in range(d):
                    orow[j] = orow[j] + v[j]
        if reduce_op == 1:
            inv = 1.0 / <double> (end - start)
            for j in range(d):
                orow[j] = <floating> (orow[j] * inv)


def _spmm_block(const long long[::1] indptr, const long long[::1] indices,
                const long long[::1] eids, bint use_eids,
                const floating[:, ::1] values, floating[:, ::1] out,
                long long r0, long long r1, int reduce_code, bint copy_src):
    cdef Py_ssize_t d = values.shape[1]
    with nogil:
        _spmm_core(&indptr[0], &indices[0], &eids[0], use_eids,
                   &values[0, 0], &out[0, 0], r0, r1, d, reduce_code, copy_src)


def spmm(indptr, indices, edge_ids, values, out, reduce, mode, workers=1, nt=False):
    if reduce not in _REDUCE_CODES:
        raise ValueError(f"unknown spmm reduce: {reduce!r}")
    cdef long long nrows = indptr.shape[0] - 1
    if nrows == 0:
        return out
    reduce_code = _REDUCE_CODES[reduce]
    copy_src = mode == "copy_src"
    use_eids = edge_ids is not None and not copy_src
    eids = edge_ids if use_eids else indptr
    if indices.shape[0] == 0:
        out[:] = 0
        return out
    parts = _partition(nrows, workers)
    _run(parts, _spmm_block,
         lambda w, span: (indptr, indices, eids, use_eids, values, out,
                          span[0], span[1], reduce_code, copy_src))
    return out


# -- SDDMM backward (one operand) ---------------------------------------------

cdef void _sddmm_bwd_core(const long long* indptr, const long long* indices,
                          const long long* eids, bint use_eids,
                          const floating* grad_out, const floating* x_other,
                          floating* out, long long r0, long long r1,
                          Py_ssize_t d, int op) noexcept nogil:
    cdef long long r, p, start, end, e, c
    cdef Py_ssize_t j
    cdef floating* orow
    cdef const floating* g
    cdef const floating* xo
    cdef floating gs
    for r in range(r0, r1):
        start = indptr[r]
        end = indptr[r + 1]
        orow = out + r * d
        for j in range(d):
            orow[j] = 0
        for p in range(start, end):
            e = eids[p] if use_eids else p
            c = indices[p]
            if op == 0:
                g = grad_out + e * d
                xo = x_other + c * d
                for j in range(d):
                    orow[j] = orow[j] + g[j] * xo[j]
            elif op == 1:
                g = grad_out + e * d
                for j in range(d):
                    orow[j] = orow[j] + g[j]
            else:
                gs = grad_out[e]
                xo = x_other + c * d
                for j in range(d):
                    orow[j] = orow[j] + gs * xo[j]


def _sddmm_bwd_block(const long long[::1] indptr, const long long[::1] indices,
                     const long long[::1] eids, bint use_eids,
                     const floating[:, ::1] grad_out, const floating[:, ::1] x_other,
                     floating[:, ::1] out, long long r0, long long r1, int op_code):
    cdef Py_ssize_t d = out.shape[1]
    with nogil:
        _sddmm_bwd_core(&indptr[0], &indices[0], &eids[0], use_eids,
                        &grad_out[0, 0], &x_other[0, 0], &out[0, 0],
                        r0, r1, d, op_code)


def sddmm_backward_side(indptr, indices, edge_ids, grad_out, x_other, out, op,
                        workers=1):
    if op not in _OP_CODES:
        raise ValueError(f"unknown sddmm op: {op!r}")
    cdef long long nrows = indptr.shape[0] - 1
    if nrows == 0:
        return out
    if indices.shape[0] == 0:
        out[:] = 0
        return out
    use_eids = edge_ids is not None
    eids = edge_ids if use_eids else indptr
    parts = _partition(nrows, workers)
    _run(parts, _sddmm_bwd_block,
         lambda w, span: (indptr, indices, eids, use_eids, grad_out, x_other,
                          out, span[0], span[1], _OP_CODES[op]))
    return out


# -- SpMM backward (edge values) ----------------------------------------------

cdef void _spmm_bwd_edge_core(const long long* indptr, const long long* eids,
                              bint use_eids, const floating* grad_out,
                              floating* out_values, long long r0, long long r1,
                              Py_ssize_t d, bint mean) noexcept nogil:
    cdef long long r, p, start, end, e
    cdef Py_ssize_t j
    cdef const floating* grow
    cdef floating* row
    cdef double inv
    for r in range(r0, r1):
        start = indptr[r]
        end = indptr[r + 1]
        if end == start:
            continue
        grow = grad_out + r * d
        inv = 1.0 / <double> (end - start)
        for p in range(start, end):
            e = eids[p] if use_eids else p
            row = out_values + e * d
            if mean:
                for j in range(d):
                    row[j] = <floating> (grow[j] * inv)
            else:
                for j in range(d):
                    row[j] = grow[j]


def _spmm_bwd_block(const long long[::1] indptr, const long long[::1] eids,
                    bint use_eids, const floating[:, ::1] grad_out,
                    floating[:, ::1] out_values, long long r0, long long r1,
                    bint mean):
    cdef Py_ssize_t d = grad_out.shape[1]
    with nogil:
        _spmm_bwd_edge_core(&indptr[0], &eids[0], use_eids, &grad_out[0, 0],
                            &out_values[0, 0], r0, r1, d, mean)


def spmm_backward_edge(indptr, edge_ids, grad_out, out_values, mean, workers=1):
    cdef long long nrows = indptr.shape[0] - 1
    if nrows == 0 or out_values.shape[0] == 0:
        return out_values
    use_eids = edge_ids is not None
    eids = edge_ids if use_eids else indptr
    parts = _partition(nrows, workers)
    _run(parts, _spmm_bwd_block,
         lambda w, span: (indptr, eids, use_eids, grad_out, out_values,
                          span[0], span[1], bool(mean)))
    return out_values


# -- memory-touch loops for the bandwidth harness -------------------------------

cdef unsigned long long _mem_seq_read_core(const unsigned long long* buf,
                                           long long w0, long long w1) noexcept nogil:
    cdef unsigned long long acc = 0
    cdef long long i
    for i in range(w0, w1):
        acc += buf[i]
    return acc


cdef void _mem_seq_write_core(unsigned long long* buf, long long w0, long long w1,
                              unsigned long long v, bint nt) noexcept nogil:
    cdef long long i
    if nt:
        gnnrec_nt_fill8(<int64_t*> (buf + w0), <int64_t> v, <long> (w1 - w0))
        gnnrec_nt_fence()
    else:
        for i in range(w0, w1):
            buf[i] = v


cdef unsigned long long _mem_rand_read_core(const unsigned long long* buf,
                                            const long long* order,
                                            long long nblocks,
                                            long long wpb) noexcept nogil:
    cdef unsigned long long acc = 0
    cdef long long b, j, base
    for b in range(nblocks):
        base = order[b] * wpb
        for j in range(wpb):
            acc += buf[base + j]
    return acc


cdef void _mem_rand_write_core(unsigned long long* buf, const long long* order,
                               long long nblocks, long long wpb,
                               unsigned long long v, bint nt) noexcept nogil:
    cdef long long b, j, base
    for b in range(nblocks):
        base = order[b] * wpb
        if nt:
            gnnrec_nt_fill8(<int64_t*> (buf + base), <int64_t> v, <long> wpb)
        else:
            for j in range(wpb):
                buf[base + j] = v
    if nt:
        gnnrec_nt_fence()


def mem_seq_read(const unsigned long long[::1] words, long long w0, long long w1):
    cdef unsigned long long acc
    if w1 <= w0:
        return 0
    with nogil:
        acc = _mem_seq_read_core(&words[0], w0, w1)
    return acc


def mem_seq_write(unsigned long long[::1] words, long long w0, long long w1,
                  unsigned long long value, bint nt=False):
    if w1 <= w0:
        return
    with nogil:
        _mem_seq_write_core(&words[0], w0, w1, value, nt)


def mem_rand_read(const unsigned long long[::1] words,
                  const long long[::1] block_order, long long words_per_block):
    cdef unsigned long long acc
    cdef long long nblocks = block_order.shape[0]
    if nblocks == 0:
        return 0
    with nogil:
        acc = _mem_rand_read_core(&words[0], &block_order[0], nblocks,
                                  words_per_block)
    return acc


def mem_rand_write(unsigned long long[::1] words,
                   const long long[::1] block_order, long long words_per_block,
                   unsigned long long value, bint nt=False):
    cdef long long nblocks = block_order.shape[0]
    if nblocks == 0:
        return
    with nogil:
        _mem_rand_write_core(&words[0], &block_order[0], nblocks,
                             words_per_block, value, nt)
