# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CART tree builder; mirrors _forest_py operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport qsort, malloc, free
from libc.math cimport INFINITY

cnp.import_array()

cdef double MIN_GAIN = 1e-12

ctypedef struct Pair:
    double x
    double y
    Py_ssize_t pos


cdef int _cmp_pair(const void* a, const void* b) noexcept nogil:
    cdef const Pair* pa = <const Pair*> a
    cdef const Pair* pb = <const Pair*> b
    if pa.x < pb.x:
        return -1
    if pa.x > pb.x:
        return 1
    if pa.pos < pb.pos:
        return -1
    if pa.pos > pb.pos:
        return 1
    return 0


def build_tree(X, y, sample, feat_keys, Py_ssize_t mtry, Py_ssize_t min_node):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] keys = np.ascontiguousarray(feat_keys, dtype=np.float64)
    cdef cnp.int64_t[::1] order = np.array(sample, dtype=np.int64, copy=True)
    cdef Py_ssize_t max_nodes = keys.shape[0]
    cdef Py_ssize_t p = Xv.shape[1]
    cdef Py_ssize_t m = order.shape[0]

    feature_a = np.full(max_nodes, -1, dtype=np.int32)
    threshold_a = np.zeros(max_nodes, dtype=np.float64)
    left_a = np.full(max_nodes, -1, dtype=np.int32)
    right_a = np.full(max_nodes, -1, dtype=np.int32)
    value_a = np.zeros(max_nodes, dtype=np.float64)
    cdef int[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef int[::1] left = left_a
    cdef int[::1] right = right_a
    cdef double[::1] value = value_a

    cdef Py_ssize_t[::1] q_node = np.zeros(max_nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] q_start = np.zeros(max_nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] q_end = np.zeros(max_nodes, dtype=np.intp)
    cdef cnp.int64_t[::1] tmp = np.zeros(max(m, 1), dtype=np.int64)
    cdef double[::1] cs = np.zeros(max(m, 1), dtype=np.float64)
    cdef char[::1] chosen = np.zeros(max(p, 1), dtype=np.int8)

    cdef Pair* buf = <Pair*> malloc(max(m, 1) * sizeof(Pair))
    if buf == NULL:
        raise MemoryError()

    cdef Py_ssize_t q_head = 0, q_tail = 1, n_nodes = 1
    cdef Py_ssize_t node, start, end, n, i, j, f, c, best_f, nleft, li, ri, kmin
    cdef double total, parent, ymin, ymax, yv_i, best, thr, best_thr, lsum, rsum, nl, nr, proxy, tot, kval
    q_node[0] = 0
    q_start[0] = 0
    q_end[0] = m

    try:
        with nogil:
            while q_head < q_tail:
                node = q_node[q_head]
                start = q_start[q_head]
                end = q_end[q_head]
                q_head += 1
                n = end - start

                total = 0.0
                ymin = INFINITY
                ymax = -INFINITY
                for i in range(start, end):
                    yv_i = yv[order[i]]
                    total = total + yv_i
                    if yv_i < ymin:
                        ymin = yv_i
                    if yv_i > ymax:
                        ymax = yv_i
                value[node] = total / n
                if n < 2 * min_node or ymax == ymin or n_nodes + 2 > max_nodes:
                    continue
                parent = total * total / n

                # mtry smallest keys, ties to the lower feature index
                for f in range(p):
                    chosen[f] = 0
                for c in range(mtry if mtry < p else p):
                    kmin = -1
                    kval = INFINITY
                    for f in range(p):
                        if not chosen[f] and (kmin < 0 or keys[node, f] < kval):
                            kmin = f
                            kval = keys[node, f]
                    chosen[kmin] = 1

                best = -INFINITY
                best_f = -1
                best_thr = 0.0
                for f in range(p):
                    if not chosen[f]:
                        continue
                    for i in range(n):
                        buf[i].x = Xv[order[start + i], f]
                        buf[i].y = yv[order[start + i]]
                        buf[i].pos = i
                    qsort(buf, n, sizeof(Pair), _cmp_pair)
                    lsum = 0.0
                    for i in range(n):
                        lsum = lsum + buf[i].y
                        cs[i] = lsum
                    tot = cs[n - 1]
                    for i in range(n - 1):
                        nl = <double>(i + 1)
                        nr = <double>n - nl
                        if nl < min_node or nr < min_node:
                            continue
                        if not (buf[i].x < buf[i + 1].x):
                            continue
                        lsum = cs[i]
                        rsum = tot - lsum
                        proxy = lsum * lsum / nl + rsum * rsum / nr
                        if proxy > best:
                            best = proxy
                            best_f = f
                            thr = 0.5 * (buf[i].x + buf[i + 1].x)
                            if thr >= buf[i + 1].x:
                                thr = buf[i].x
                            best_thr = thr
                if best_f < 0 or not (best - parent > MIN_GAIN * (parent if parent >= 0 else -parent)):
                    continue

                # stable partition of order[start:end]
                li = 0
                for i in range(start, end):
                    if Xv[order[i], best_f] <= best_thr:
                        tmp[li] = order[i]
                        li += 1
                nleft = li
                for i in range(start, end):
                    if not (Xv[order[i], best_f] <= best_thr):
                        tmp[li] = order[i]
                        li += 1
                for i in range(n):
                    order[start + i] = tmp[i]

                feature[node] = <int> best_f
                threshold[node] = best_thr
                left[node] = <int> n_nodes
                right[node] = <int> (n_nodes + 1)
                q_node[q_tail] = n_nodes
                q_start[q_tail] = start
                q_end[q_tail] = start + nleft
                q_tail += 1
                q_node[q_tail] = n_nodes + 1
                q_start[q_tail] = start + nleft
                q_end[q_tail] = end
                q_tail += 1
                n_nodes += 2
    finally:
        free(buf)

    return (feature_a[:n_nodes].copy(), threshold_a[:n_nodes].copy(), left_a[:n_nodes].copy(),
            right_a[:n_nodes].copy(), value_a[:n_nodes].copy())


def predict_tree(X, feature, threshold, left, right, value):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const int[::1] fv = np.ascontiguousarray(feature, dtype=np.int32)
    cdef const double[::1] tv = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef const int[::1] lv = np.ascontiguousarray(left, dtype=np.int32)
    cdef const int[::1] rv = np.ascontiguousarray(right, dtype=np.int32)
    cdef const double[::1] vv = np.ascontiguousarray(value, dtype=np.float64)
    out_a = np.empty(Xv.shape[0], dtype=np.float64)
    cdef double[::1] out = out_a
    cdef Py_ssize_t i
    cdef int nd
    with nogil:
        for i in range(Xv.shape[0]):
            nd = 0
            while fv[nd] >= 0:
                if Xv[i, fv[nd]] <= tv[nd]:
                    nd = lv[nd]
                else:
                    nd = rv[nd]
            out[i] = vv[nd]
    return out_a


def predict_forest(X, trees):
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    acc_a = np.zeros(Xc.shape[0], dtype=np.float64)
    cdef double[::1] acc = acc_a
    cdef double[::1] part
    cdef Py_ssize_t i
    for t in trees:
        part = predict_tree(Xc, *t)
        for i in range(acc.shape[0]):
            acc[i] = acc[i] + part[i]
    return acc_a / len(trees)
