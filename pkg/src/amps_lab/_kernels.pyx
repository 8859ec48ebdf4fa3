# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic programs; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    MATCH = 0
    SUB = 1
    INS = 2
    DEL = 3


def edit_alignment(ref, hyp):
    cdef cnp.int64_t[:] r = np.ascontiguousarray(ref, dtype=np.int64)
    cdef cnp.int64_t[:] h = np.ascontiguousarray(hyp, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0], m = h.shape[0]
    cdef Py_ssize_t i, j
    cdef long long big = n + m + 1
    cdef long long sub_c = big, gap_c = big + 1
    cdef long long diag, up, left, best, c
    cdef cnp.int64_t[:, :] cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        cost[i, 0] = i * gap_c
    for j in range(1, m + 1):
        cost[0, j] = j * gap_c
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (0 if r[i - 1] == h[j - 1] else sub_c)
            up = cost[i - 1, j] + gap_c
            left = cost[i, j - 1] + gap_c
            best = diag
            if up < best:
                best = up
            if left < best:
                best = left
            cost[i, j] = best
    cdef cnp.int64_t[:] ops = np.empty(n + m, dtype=np.int64)
    cdef Py_ssize_t k = 0
    cdef int s = 0, ins = 0, dels = 0
    cdef bint same
    i = n
    j = m
    while i > 0 or j > 0:
        c = cost[i, j]
        if i > 0 and j > 0:
            same = r[i - 1] == h[j - 1]
            if cost[i - 1, j - 1] + (0 if same else sub_c) == c:
                if same:
                    ops[k] = MATCH
                else:
                    ops[k] = SUB
                    s += 1
                k += 1
                i -= 1
                j -= 1
                continue
        if i > 0 and cost[i - 1, j] + gap_c == c:
            ops[k] = DEL
            dels += 1
            i -= 1
        else:
            ops[k] = INS
            ins += 1
            j -= 1
        k += 1
    out = [int(ops[k - 1 - t]) for t in range(k)]
    return out, s, ins, dels


def lcs_length(a, b):
    cdef cnp.int64_t[:] x = np.ascontiguousarray(a, dtype=np.int64)
    cdef cnp.int64_t[:] y = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], i, j
    cdef cnp.int64_t[:] prev = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[:] cur = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[:] tmp
    for i in range(1, n + 1):
        cur[0] = 0
        for j in range(1, m + 1):
            if x[i - 1] == y[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif cur[j - 1] > prev[j]:
                cur[j] = cur[j - 1]
            else:
                cur[j] = prev[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
