# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels: box sums, flood fill, categorical pixel sampling.

Bit-for-bit equivalent to the numpy fallback in ``_kernels_py.py``: same
summation order for the float box sum, same CDF tie rule for sampling, same
component semantics for flood fill. The cross-backend equality tests in
tests/test_grid.py enforce this.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


def box_sum(grid, int window):
    if grid.dtype == np.float64:
        return _box_sum_f64(np.ascontiguousarray(grid), window)
    return _box_sum_i64(np.ascontiguousarray(grid), window)


cdef _box_sum_f64(double[:, ::1] grid, int window):
    cdef Py_ssize_t h = grid.shape[0]
    cdef Py_ssize_t w = grid.shape[1]
    cdef int r = window // 2
    cdef Py_ssize_t sh = h + 2 * r + 1
    cdef Py_ssize_t sw = w + 2 * r + 1
    s_arr = np.zeros((sh, sw), dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    # Column-wise prefix sums of the zero-padded grid (cumsum over axis 0).
    for i in range(h):
        for j in range(w):
            s[i + r + 1, j + r + 1] = s[i + r, j + r + 1] + grid[i, j]
    for i in range(h + r + 1, sh):
        for j in range(r + 1, w + r + 1):
            s[i, j] = s[i - 1, j]
    # Then cumsum over axis 1.
    for i in range(1, sh):
        for j in range(1, sw):
            s[i, j] = s[i, j - 1] + s[i, j]
    for i in range(h):
        for j in range(w):
            out[i, j] = (s[i + window, j + window] - s[i, j + window]) \
                - s[i + window, j] + s[i, j]
    return out_arr


cdef _box_sum_i64(cnp.int64_t[:, ::1] grid, int window):
    cdef Py_ssize_t h = grid.shape[0]
    cdef Py_ssize_t w = grid.shape[1]
    cdef int r = window // 2
    cdef Py_ssize_t sh = h + 2 * r + 1
    cdef Py_ssize_t sw = w + 2 * r + 1
    s_arr = np.zeros((sh, sw), dtype=np.int64)
    out_arr = np.empty((h, w), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] s = s_arr
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(h):
        for j in range(w):
            s[i + r + 1, j + r + 1] = s[i + r, j + r + 1] + grid[i, j]
    for i in range(h + r + 1, sh):
        for j in range(r + 1, w + r + 1):
            s[i, j] = s[i - 1, j]
    for i in range(1, sh):
        for j in range(1, sw):
            s[i, j] = s[i, j - 1] + s[i, j]
    for i in range(h):
        for j in range(w):
            out[i, j] = (s[i + window, j + window] - s[i, j + window]) \
                - s[i + window, j] + s[i, j]
    return out_arr


def flood_fill(fg, Py_ssize_t seed_r, Py_ssize_t seed_c, int adjacency):
    cdef cnp.uint8_t[:, ::1] f = np.ascontiguousarray(fg, dtype=np.uint8)
    cdef Py_ssize_t h = f.shape[0]
    cdef Py_ssize_t w = f.shape[1]
    comp_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] comp = comp_arr
    cdef cnp.int32_t[::1] queue_r = np.empty(h * w, dtype=np.int32)
    cdef cnp.int32_t[::1] queue_c = np.empty(h * w, dtype=np.int32)
    cdef Py_ssize_t head = 0, tail = 0
    cdef Py_ssize_t r, c, nr, nc
    cdef int k, nshift
    cdef int[8] dr
    cdef int[8] dc
    dr[0] = -1; dc[0] = 0
    dr[1] = 1;  dc[1] = 0
    dr[2] = 0;  dc[2] = -1
    dr[3] = 0;  dc[3] = 1
    dr[4] = -1; dc[4] = -1
    dr[5] = -1; dc[5] = 1
    dr[6] = 1;  dc[6] = -1
    dr[7] = 1;  dc[7] = 1
    nshift = 8 if adjacency == 8 else 4
    comp[seed_r, seed_c] = 1
    queue_r[tail] = <cnp.int32_t> seed_r
    queue_c[tail] = <cnp.int32_t> seed_c
    tail += 1
    while head < tail:
        r = queue_r[head]
        c = queue_c[head]
        head += 1
        for k in range(nshift):
            nr = r + dr[k]
            nc = c + dc[k]
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if f[nr, nc] and not comp[nr, nc]:
                comp[nr, nc] = 1
                queue_r[tail] = <cnp.int32_t> nr
                queue_c[tail] = <cnp.int32_t> nc
                tail += 1
    return comp_arr.astype(bool)


def sample_from_uniforms(p, u):
    cdef double[:, :, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t h = pv.shape[0]
    cdef Py_ssize_t w = pv.shape[1]
    cdef Py_ssize_t nc = pv.shape[2]
    out_arr = np.empty((h, w), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, c
    cdef double acc, uij
    cdef Py_ssize_t label
    for i in range(h):
        for j in range(w):
            uij = uv[i, j]
            acc = 0.0
            label = nc - 1
            for c in range(nc):
                acc = acc + pv[i, j, c]
                if uij < acc:
                    label = c
                    break
            out[i, j] = label
    return out_arr
