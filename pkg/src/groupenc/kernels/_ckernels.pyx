# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rank-intersection kernel for R_NX evaluation.

For each reference point the other points are ordered by (squared distance,
index) in both spaces. A neighbour joins the intersection of the two
K-neighbourhoods at K = max(hd rank, ld rank); the kernel returns, summed
over references, how many neighbours join at each K.

Per-thread scratch lives in numpy arrays allocated here (two 16-byte sort
buffers, an int64 rank table and an int64 histogram: 48 bytes per point per
thread), so no N x N structure is ever formed.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport parallel, prange, threadid

cnp.import_array()


KEYED_DTYPE = np.dtype([("key", np.float64), ("idx", np.int64)])


cdef extern from *:
    """
    #include <cstdint>
    #include <cstring>
    struct Keyed { double key; int64_t idx; };

    /* Stable LSD radix sort on the bit pattern of non-negative doubles,
       which orders like the values. Input arrives in ascending idx order,
       so stability yields the (key, idx) order. Byte passes where every
       element shares one digit are skipped. */
    static void radix_sort_keyed(Keyed* a, Keyed* tmp, int64_t n) {
        int64_t count[256];
        Keyed* src = a;
        Keyed* dst = tmp;
        for (int shift = 0; shift < 64; shift += 8) {
            std::memset(count, 0, sizeof(count));
            for (int64_t i = 0; i < n; ++i) {
                uint64_t bits;
                std::memcpy(&bits, &src[i].key, 8);
                ++count[(bits >> shift) & 255u];
            }
            bool trivial = false;
            for (int b = 0; b < 256; ++b) {
                if (count[b] == n) { trivial = true; break; }
                if (count[b] != 0) break;
            }
            if (trivial) continue;
            int64_t pos = 0;
            for (int b = 0; b < 256; ++b) { int64_t c = count[b]; count[b] = pos; pos += c; }
            for (int64_t i = 0; i < n; ++i) {
                uint64_t bits;
                std::memcpy(&bits, &src[i].key, 8);
                dst[count[(bits >> shift) & 255u]++] = src[i];
            }
            Keyed* t = src; src = dst; dst = t;
        }
        if (src != a) std::memcpy(a, src, sizeof(Keyed) * n);
    }
    """
    ctypedef struct Keyed:
        double key
        cnp.int64_t idx
    void radix_sort_keyed(Keyed* a, Keyed* tmp, cnp.int64_t n) noexcept nogil


cdef void _sorted_neighbours(const double[:, ::1] x, Py_ssize_t i, Keyed* buf, Keyed* tmp) noexcept nogil:
    """Fill buf[0:n-1] with the other points sorted by (sq distance, index)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t dim = x.shape[1]
    cdef Py_ssize_t j, k, pos = 0
    cdef double acc, diff
    cdef const double* ref = &x[i, 0]
    cdef const double* row
    for j in range(n):
        if j == i:
            continue
        row = &x[j, 0]
        acc = 0.0
        for k in range(dim):
            diff = row[k] - ref[k]
            acc = acc + diff * diff
        buf[pos].key = acc
        buf[pos].idx = j
        pos += 1
    radix_sort_keyed(buf, tmp, n - 1)


cdef void _one_reference(const double[:, ::1] hd, const double[:, ::1] ld, Py_ssize_t i,
                         Keyed* buf, Keyed* tmp, cnp.int64_t* hd_rank, cnp.int64_t* counts) noexcept nogil:
    cdef Py_ssize_t n = hd.shape[0]
    cdef Py_ssize_t r, j
    cdef cnp.int64_t k
    _sorted_neighbours(hd, i, buf, tmp)
    for r in range(n - 1):
        hd_rank[buf[r].idx] = r + 1
    _sorted_neighbours(ld, i, buf, tmp)
    for r in range(n - 1):
        j = buf[r].idx
        k = hd_rank[j]
        if r + 1 > k:
            k = r + 1
        counts[k] += 1


def join_counts(const double[:, ::1] hd, const double[:, ::1] ld, int n_threads=1):
    """Join-time histogram summed over all reference points.

    Returns an int64 array ``c`` of length N with ``c[K]`` the number of
    (reference, neighbour) pairs whose neighbour first appears in both
    K-neighbourhoods at size K; ``c[0]`` is always 0.
    """
    cdef Py_ssize_t n = hd.shape[0]
    if ld.shape[0] != n:
        raise ValueError("hd and ld must have the same number of rows")
    if n < 2:
        raise ValueError("need at least 2 points")
    if n_threads < 1:
        n_threads = 1
    if n_threads > n:
        n_threads = <int> n
    scratch = np.empty((n_threads, 2, n), dtype=KEYED_DTYPE)
    ranks = np.zeros((n_threads, n), dtype=np.int64)
    per_thread = np.zeros((n_threads, n), dtype=np.int64)
    cdef Keyed[:, :, ::1] buf = scratch
    cdef cnp.int64_t[:, ::1] rank_v = ranks
    cdef cnp.int64_t[:, ::1] count_v = per_thread
    cdef Py_ssize_t i
    cdef int tid
    with nogil, parallel(num_threads=n_threads):
        tid = threadid()
        for i in prange(n, schedule="static"):
            _one_reference(hd, ld, i, &buf[tid, 0, 0], &buf[tid, 1, 0], &rank_v[tid, 0], &count_v[tid, 0])
    del scratch, ranks
    # integer merge in fixed thread order
    return per_thread.sum(axis=0)


def neighbour_order(const double[:, ::1] x, Py_ssize_t i):
    """Indices of the other points sorted by (squared distance, index)."""
    cdef Py_ssize_t n = x.shape[0]
    if not 0 <= i < n:
        raise IndexError(i)
    scratch = np.empty((2, n), dtype=KEYED_DTYPE)
    cdef Keyed[:, ::1] buf = scratch
    with nogil:
        _sorted_neighbours(x, i, &buf[0, 0], &buf[1, 0])
    return np.ascontiguousarray(scratch[0]["idx"][: n - 1])
