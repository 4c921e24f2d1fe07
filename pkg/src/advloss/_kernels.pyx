# cython: language_level=3
"""Compiled versions of the kernels in ``_pykernels``.

Loops run row by row so each output row depends only on its own input row;
results are therefore independent of how a batch is partitioned.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, log, fabs, isnan, NAN

cnp.import_array()

cdef enum:
    INV = 0
    SQRT = 1
    LOG = 2

cdef double SHRINK = 1.0 - 2.0 ** -52


cdef inline double _sign(double a) nogil:
    if a > 0.0:
        return 1.0
    if a < 0.0:
        return -1.0
    if a == 0.0:
        return 0.0
    return NAN


def softmax_rows(double[:, ::1] a):
    cdef Py_ssize_t n = a.shape[0], c = a.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double m, v, total
    with nogil:
        for i in range(n):
            m = a[i, 0]
            for j in range(1, c):
                v = a[i, j]
                if isnan(v) or v > m:
                    m = v
                if isnan(m):
                    break
            total = 0.0
            for j in range(c):
                v = exp(a[i, j] - m)
                out[i, j] = v
                total += v
            for j in range(c):
                out[i, j] = out[i, j] / total
    return out_arr


def softmax_vjp(double[:, ::1] s, double[:, ::1] upstream):
    cdef Py_ssize_t n = s.shape[0], c = s.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(c):
                dot += upstream[i, j] * s[i, j]
            for j in range(c):
                out[i, j] = s[i, j] * (upstream[i, j] - dot)
    return out_arr


def guarded_forward(int code, double[:, ::1] a, double gamma):
    if code < INV or code > LOG:
        raise ValueError(f"unknown guarded op code {code}")
    cdef Py_ssize_t n = a.shape[0], c = a.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double v, sg, mag
    with nogil:
        for i in range(n):
            for j in range(c):
                v = a[i, j]
                sg = _sign(v)
                mag = fabs(v) + gamma
                if code == INV:
                    out[i, j] = sg / mag
                elif code == SQRT:
                    out[i, j] = sg * sqrt(mag)
                else:
                    out[i, j] = sg * log(mag)
    return out_arr


def guarded_vjp(int code, double[:, ::1] a, double[:, ::1] upstream, double gamma):
    if code < INV or code > LOG:
        raise ValueError(f"unknown guarded op code {code}")
    cdef Py_ssize_t n = a.shape[0], c = a.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double v, sg, s2, mag
    with nogil:
        for i in range(n):
            for j in range(c):
                v = a[i, j]
                sg = _sign(v)
                s2 = sg * sg
                mag = fabs(v) + gamma
                if code == INV:
                    out[i, j] = -s2 / (mag * mag) * upstream[i, j]
                elif code == SQRT:
                    out[i, j] = s2 * 0.5 / sqrt(mag) * upstream[i, j]
                else:
                    out[i, j] = s2 / mag * upstream[i, j]
    return out_arr


cdef void _dense(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b,
                 double[:, ::1] out, bint relu) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], h = w.shape[0], i, o, k
    cdef double acc
    for i in range(n):
        for o in range(h):
            acc = 0.0
            for k in range(d):
                acc += x[i, k] * w[o, k]
            acc = acc + b[o]
            if relu and acc < 0.0:
                acc = 0.0
            out[i, o] = acc


def mlp_forward(weights, biases, double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t last = len(weights) - 1, li
    cdef const double[:, ::1] w
    cdef const double[::1] b
    cdef double[:, ::1] h = x
    cdef double[:, ::1] z
    hidden = []
    out_arr = None
    for li in range(last + 1):
        w = weights[li]
        b = biases[li]
        out_arr = np.empty((n, w.shape[0]), dtype=np.float64)
        z = out_arr
        with nogil:
            _dense(h, w, b, z, li < last)
        if li < last:
            hidden.append(out_arr)
        h = z
    return out_arr, hidden


def mlp_input_grad(weights, hidden, double[:, ::1] grad_logits):
    cdef Py_ssize_t n = grad_logits.shape[0], li, i, o, k, hdim, d
    cdef const double[:, ::1] w
    cdef double[:, ::1] mask
    cdef double[:, ::1] g = grad_logits
    cdef double[:, ::1] nxt
    cdef double acc
    out_arr = None
    for li in range(len(weights) - 1, -1, -1):
        w = weights[li]
        hdim = w.shape[0]
        d = w.shape[1]
        out_arr = np.empty((n, d), dtype=np.float64)
        nxt = out_arr
        with nogil:
            for i in range(n):
                for k in range(d):
                    acc = 0.0
                    for o in range(hdim):
                        acc += g[i, o] * w[o, k]
                    nxt[i, k] = acc
        if li > 0:
            mask = hidden[li - 1]
            with nogil:
                for i in range(n):
                    for k in range(d):
                        if not mask[i, k] > 0.0:
                            nxt[i, k] = 0.0 * nxt[i, k]
        g = nxt
    return out_arr


cdef inline double _row_norm(double[:, ::1] a, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    for k in range(a.shape[1]):
        acc += a[i, k] * a[i, k]
    return sqrt(acc)


cdef void _project_rows(double[:, ::1] delta, double eps, bint l2) noexcept nogil:
    cdef Py_ssize_t n = delta.shape[0], d = delta.shape[1], i, k
    cdef double norm, scale
    for i in range(n):
        if l2:
            norm = _row_norm(delta, i)
            if norm > eps:
                scale = eps / norm
                for k in range(d):
                    delta[i, k] = delta[i, k] * scale
                while _row_norm(delta, i) > eps:
                    for k in range(d):
                        delta[i, k] = delta[i, k] * SHRINK
        else:
            for k in range(d):
                if delta[i, k] < -eps:
                    delta[i, k] = -eps
                elif delta[i, k] > eps:
                    delta[i, k] = eps


def project_delta(double[:, ::1] delta, double eps, bint l2):
    out_arr = np.array(delta, dtype=np.float64, copy=True)
    cdef double[:, ::1] out = out_arr
    with nogil:
        _project_rows(out, eps, l2)
    return out_arr


def project_clamp(double[:, ::1] x, double[:, ::1] x_new, double eps, bint l2):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, k
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double v
    with nogil:
        for i in range(n):
            for k in range(d):
                out[i, k] = x_new[i, k] - x[i, k]
        _project_rows(out, eps, l2)
        for i in range(n):
            for k in range(d):
                v = x[i, k] + out[i, k]
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                out[i, k] = v
    return out_arr


cdef void _dense_flat(const double* x, const double* w, const double* b,
                      Py_ssize_t d, Py_ssize_t h, double* out, bint relu) noexcept nogil:
    cdef Py_ssize_t o, k
    cdef double acc
    for o in range(h):
        acc = 0.0
        for k in range(d):
            acc += x[k] * w[o * d + k]
        acc = acc + b[o]
        if relu and acc < 0.0:
            acc = 0.0
        out[o] = acc


def grid_oracle(weights, biases, double[:, ::1] x, labels, double eps, int grid_steps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t nl = len(weights), li, i, k, m, t, best, side, total
    side = 2 * grid_steps + 1
    total = side ** d
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef double[::1] ticks = eps * (np.arange(-grid_steps, grid_steps + 1) / grid_steps)

    # flatten parameters so the lattice loop never touches Python objects
    flat_parts = []
    dims_list = [d]
    for w, b in zip(weights, biases):
        flat_parts.append(np.ascontiguousarray(w, dtype=np.float64).ravel())
        flat_parts.append(np.ascontiguousarray(b, dtype=np.float64).ravel())
        dims_list.append(np.asarray(w).shape[0])
    cdef double[::1] flat = np.concatenate(flat_parts)
    cdef Py_ssize_t[::1] dims = np.asarray(dims_list, dtype=np.intp)
    cdef Py_ssize_t maxw = max(dims_list)
    cdef double[::1] buf_a = np.zeros(maxw)
    cdef double[::1] buf_b = np.zeros(maxw)
    cdef double* cur
    cdef double* nxt
    cdef double* tmp
    cdef Py_ssize_t off, ncls = dims_list[nl]
    cdef double v, top

    out_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    with nogil:
        for i in range(n):
            for m in range(total):
                t = m
                for k in range(d - 1, -1, -1):
                    v = x[i, k] + ticks[t % side]
                    t = t // side
                    if v < 0.0:
                        v = 0.0
                    elif v > 1.0:
                        v = 1.0
                    buf_a[k] = v
                cur = &buf_a[0]
                nxt = &buf_b[0]
                off = 0
                for li in range(nl):
                    _dense_flat(cur, &flat[off], &flat[off + dims[li + 1] * dims[li]],
                                dims[li], dims[li + 1], nxt, li < nl - 1)
                    off += dims[li + 1] * dims[li] + dims[li + 1]
                    tmp = cur
                    cur = nxt
                    nxt = tmp
                best = 0
                top = cur[0]
                for k in range(1, ncls):
                    if cur[k] > top:
                        top = cur[k]
                        best = k
                if best != lab[i]:
                    out[i] = 1
                    break
    return out_arr
